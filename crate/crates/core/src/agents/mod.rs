//! Deep Q-learning agents (plain, double and dueling) with experience
//! replay, Q-matrix pretraining and a uniform random baseline.

mod replay;

pub use replay::{ReplayBuffer, Transition};

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::env::{EnvError, EvacEnv};
use crate::nn::{AdamConfig, AdamState, Aggregation, Architecture, Head, NetError, Network, Target};
use crate::reduction::ActionImportance;
use crate::tabular::{argmax, QMatrix};

/// Default per-episode step cap.
pub const STEP_CAP: usize = 1000;

/// Range learner rewards are clamped to unless raw rewards are requested.
pub const DEFAULT_REWARD_CLIP: (f64, f64) = (-100.0, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Dqn,
    Ddqn,
    Dueling,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Dqn => "dqn",
            Variant::Ddqn => "ddqn",
            Variant::Dueling => "dueling",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dqn" => Ok(Variant::Dqn),
            "ddqn" => Ok(Variant::Ddqn),
            "dueling" => Ok(Variant::Dueling),
            other => Err(format!("unknown agent {other:?} (expected dqn, ddqn or dueling)")),
        }
    }
}

/// How occupancy vectors are fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputEncoding {
    /// Divide by the bottleneck so entries lie in [0, 1].
    Normalized,
    Raw,
}

/// Per-episode exponential ε decay with a floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub decay: f64,
    pub floor: f64,
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        (self.start * self.decay.powi(episode as i32)).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub variant: Variant,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Target network is refreshed every this many gradient updates.
    pub target_sync: u64,
    pub episodes: usize,
    pub step_cap: usize,
    pub pretrain_epochs: usize,
    /// Pretraining stops once the mean squared error falls below this.
    pub pretrain_tol: f64,
    /// Epochs without improvement before pretraining reports a stall.
    pub pretrain_patience: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub aggregation: Aggregation,
    pub encoding: InputEncoding,
    /// Clamp rewards into `[lo, hi]` before they reach the learner.
    pub reward_clip: Option<(f64, f64)>,
    pub replay: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid `{field}`: {rule}")]
    Invalid { field: &'static str, rule: String },
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            variant: Variant::Dueling,
            gamma: 0.99,
            epsilon: EpsilonSchedule {
                start: 1.0,
                decay: 0.95,
                floor: 0.01,
            },
            replay_capacity: 2000,
            batch_size: 32,
            target_sync: 100,
            episodes: 500,
            step_cap: STEP_CAP,
            pretrain_epochs: 5000,
            pretrain_tol: 1e-4,
            pretrain_patience: 500,
            learning_rate: 1e-3,
            hidden: Architecture::SMALL_HIDDEN.to_vec(),
            aggregation: Aggregation::Mean,
            encoding: InputEncoding::Normalized,
            reward_clip: Some(DEFAULT_REWARD_CLIP),
            replay: true,
        }
    }
}

impl AgentConfig {
    pub fn with_variant(variant: Variant) -> Self {
        AgentConfig {
            variant,
            ..AgentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field, rule: &str| {
            Err(ConfigError::Invalid {
                field,
                rule: rule.to_string(),
            })
        };
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in (0, 1)");
        }
        let e = self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.floor) || !(e.decay > 0.0 && e.decay <= 1.0)
        {
            return bad("epsilon", "start and floor must lie in [0, 1], decay in (0, 1]");
        }
        if self.replay_capacity == 0 || self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return bad("batch_size", "must be positive and at most the replay capacity");
        }
        if self.target_sync == 0 {
            return bad("target_sync", "must be positive");
        }
        if self.episodes == 0 || self.step_cap == 0 {
            return bad("episodes", "episodes and step cap must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if let Some((lo, hi)) = self.reward_clip {
            if !(lo < hi) {
                return bad("reward_clip", "lower bound must be below upper bound");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub time_steps: usize,
    pub total_reward: f64,
    pub epsilon: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub episodes: Vec<EpisodeRecord>,
}

impl RunRecord {
    pub fn steps(&self) -> Vec<usize> {
        self.episodes.iter().map(|e| e.time_steps).collect()
    }

    pub fn mean_steps(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.time_steps as f64))
    }

    pub fn min_steps(&self) -> Option<usize> {
        self.episodes.iter().map(|e| e.time_steps).min()
    }

    /// Mean over the last `k` episodes (or all, if fewer).
    pub fn trailing_mean(&self, k: usize) -> f64 {
        let start = self.episodes.len().saturating_sub(k);
        mean(self.episodes[start..].iter().map(|e| e.time_steps as f64))
    }

    pub fn mean_wall_ms(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.wall_ms))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("network parameters became non-finite in episode {episode} at step {step}")]
    Diverged {
        episode: usize,
        step: usize,
        partial: RunRecord,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("network has {got} outputs but the environment has {expected} actions")]
    ActionSpace { expected: usize, got: usize },
}

/// Outcome of regressing the network onto a Q-matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub epochs: usize,
    /// Mean squared error against the flattened matrix after the last epoch.
    pub mse: f64,
    pub converged: bool,
    /// Loss failed to improve for a full patience window at some point.
    pub stalled: bool,
}

#[derive(Debug, Clone)]
pub struct Agent {
    cfg: AgentConfig,
    rooms: usize,
    bottleneck: f64,
    online: Network<f32>,
    target: Network<f32>,
    adam: AdamState<f32>,
    replay: ReplayBuffer,
    mask: Option<Vec<f32>>,
    kept: Vec<usize>,
    updates: u64,
    rng: ChaCha8Rng,
}

impl Agent {
    /// Fresh agent for a building with `rooms` rooms and the given bottleneck.
    pub fn new(cfg: AgentConfig, rooms: usize, bottleneck: u32, seed: u64) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let head = match cfg.variant {
            Variant::Dueling => Head::Dueling(cfg.aggregation),
            Variant::Dqn | Variant::Ddqn => Head::Linear,
        };
        let arch = Architecture::new(rooms, &cfg.hidden, rooms * rooms, head);
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5_eed0_f1e7);
        let online = Network::new(arch, &mut init_rng);
        Ok(Self::from_network(cfg, online, rooms, bottleneck, seed))
    }

    /// Wrap an existing network; the target network starts as a copy.
    pub fn from_network(cfg: AgentConfig, online: Network<f32>, rooms: usize, bottleneck: u32, seed: u64) -> Self {
        let adam = AdamState::new(&online, Self::adam_config(&cfg));
        Agent {
            replay: ReplayBuffer::new(cfg.replay_capacity),
            rooms,
            bottleneck: bottleneck as f64,
            target: online.clone(),
            online,
            adam,
            mask: None,
            kept: (0..rooms * rooms).collect(),
            updates: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cfg,
        }
    }

    fn adam_config(cfg: &AgentConfig) -> AdamConfig {
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn online(&self) -> &Network<f32> {
        &self.online
    }

    pub fn target(&self) -> &Network<f32> {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Replace both networks, e.g. to load a checkpoint.
    pub fn set_networks(&mut self, online: Network<f32>, target: Network<f32>) {
        self.adam = AdamState::new(&online, Self::adam_config(&self.cfg));
        self.online = online;
        self.target = target;
    }

    /// Add an action-importance mask to every output used for acting and
    /// bootstrapping. Exploration then draws only among kept actions.
    pub fn set_mask(&mut self, ai: &ActionImportance) {
        self.mask = Some(ai.mask().iter().map(|&v| v as f32).collect());
        self.kept = ai.kept_actions();
    }

    pub fn encode(&self, occupancy: &[u32]) -> Vec<f32> {
        let scale = match self.cfg.encoding {
            InputEncoding::Normalized => self.bottleneck,
            InputEncoding::Raw => 1.0,
        };
        occupancy.iter().map(|&c| (c as f64 / scale) as f32).collect()
    }

    fn masked(&self, mut q: Vec<f32>) -> Vec<f32> {
        if let Some(mask) = &self.mask {
            for (v, m) in q.iter_mut().zip(mask) {
                *v += m;
            }
        }
        q
    }

    /// Network output for an encoded state, with the mask added.
    pub fn q_values(&self, state: &[f32]) -> Result<Vec<f32>, NetError> {
        Ok(self.masked(self.online.forward(state)?))
    }

    /// Greedy action for an encoded state; ties go to the lowest index.
    pub fn greedy(&self, state: &[f32]) -> Result<usize, NetError> {
        Ok(argmax(&self.q_values(state)?))
    }

    /// ε-greedy choice for an occupancy vector.
    pub fn select_action<R: Rng + ?Sized>(&self, occupancy: &[u32], eps: f64, rng: &mut R) -> Result<usize, NetError> {
        if rng.gen::<f64>() < eps {
            return Ok(self.kept[rng.gen_range(0..self.kept.len())]);
        }
        self.greedy(&self.encode(occupancy))
    }

    /// Regress the output at the empty state onto the flattened matrix.
    pub fn pretrain_network(&mut self, qnoisy: &QMatrix) -> Result<PretrainReport, NetError> {
        let n = self.rooms;
        if qnoisy.rooms() != n {
            return Err(NetError::TargetShape {
                expected: n * n,
                got: qnoisy.rooms() * qnoisy.rooms(),
            });
        }
        let target: Vec<f32> = qnoisy.to_action_vector().iter().map(|&v| v as f32).collect();
        let input = vec![0.0f32; n];
        let mut adam = AdamState::new(&self.online, Self::adam_config(&self.cfg));
        let mut best = f64::INFINITY;
        let mut since_best = 0;
        let mut stalled = false;
        let mut epochs = 0;
        let mut mse = self.pretrain_mse(&input, &target)?;
        while epochs < self.cfg.pretrain_epochs && mse >= self.cfg.pretrain_tol {
            let (_, grads) = self.online.mse_loss_and_grad(&input, &target)?;
            adam.update(&mut self.online, &grads);
            epochs += 1;
            mse = self.pretrain_mse(&input, &target)?;
            if mse < best {
                best = mse;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= self.cfg.pretrain_patience {
                    stalled = true;
                    since_best = 0;
                }
            }
        }
        self.target = self.online.clone();
        Ok(PretrainReport {
            epochs,
            mse,
            converged: mse < self.cfg.pretrain_tol,
            stalled,
        })
    }

    fn pretrain_mse(&self, input: &[f32], target: &[f32]) -> Result<f64, NetError> {
        let out = self.online.forward(input)?;
        Ok(out
            .iter()
            .zip(target)
            .map(|(&o, &t)| {
                let d = o as f64 - t as f64;
                d * d
            })
            .sum::<f64>()
            / target.len() as f64)
    }

    /// Learning target for one transition.
    pub fn compute_target(&self, t: &Transition) -> Result<f64, NetError> {
        Ok(self.targets(&[t])?[0])
    }

    fn targets(&self, batch: &[&Transition]) -> Result<Vec<f64>, NetError> {
        let live: Vec<&Transition> = batch.iter().copied().filter(|t| !t.terminal).collect();
        let mut bootstrap = Vec::with_capacity(live.len());
        if !live.is_empty() {
            let next = stack(live.iter().map(|t| t.next.as_slice()), self.rooms);
            let target_q = self.target.forward_batch(next.view())?;
            let online_q = match self.cfg.variant {
                Variant::Ddqn => Some(self.online.forward_batch(next.view())?),
                _ => None,
            };
            for (i, row) in target_q.outer_iter().enumerate() {
                let row = self.masked(row.to_vec());
                let value = match &online_q {
                    Some(online) => row[argmax(&self.masked(online.row(i).to_vec()))],
                    None => row[argmax(&row)],
                };
                bootstrap.push(value as f64);
            }
        }
        let mut boot = bootstrap.into_iter();
        Ok(batch
            .iter()
            .map(|t| {
                let r = self.shape_reward(t.reward);
                if t.terminal {
                    r
                } else {
                    r + self.cfg.gamma * boot.next().expect("one value per live transition")
                }
            })
            .collect())
    }

    fn shape_reward(&self, r: f64) -> f64 {
        match self.cfg.reward_clip {
            Some((lo, hi)) => r.clamp(lo, hi),
            None => r,
        }
    }

    /// Store a transition and take one gradient step if enough data is held.
    pub fn observe(&mut self, t: Transition) -> Result<Option<f64>, NetError> {
        self.replay.push(t);
        let batch: Vec<Transition> = if self.cfg.replay {
            let mut rng = self.rng.clone();
            let drawn = self.replay.sample(self.cfg.batch_size, &mut rng);
            self.rng = rng;
            match drawn {
                Some(b) => b.into_iter().cloned().collect(),
                None => return Ok(None),
            }
        } else {
            vec![self.replay.last().expect("just pushed").clone()]
        };
        let refs: Vec<&Transition> = batch.iter().collect();
        let loss = self.learn(&refs)?;
        Ok(Some(loss))
    }

    fn learn(&mut self, batch: &[&Transition]) -> Result<f64, NetError> {
        let ys: Vec<f32> = self.targets(batch)?.into_iter().map(|y| y as f32).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let states = stack(batch.iter().map(|t| t.state.as_slice()), self.rooms);
        let (loss, grads) = self.online.loss_and_grad(
            states.view(),
            Target::Action {
                actions: &actions,
                values: &ys,
            },
        )?;
        self.adam.update(&mut self.online, &grads);
        self.updates += 1;
        if self.updates.is_multiple_of(self.cfg.target_sync) {
            self.target = self.online.clone();
        }
        Ok(loss as f64)
    }

    /// Run the configured number of ε-greedy training episodes.
    pub fn train(&mut self, env: &mut EvacEnv, seed: u64) -> Result<RunRecord, TrainError> {
        self.train_observed(env, seed, |_| {})
    }

    /// [`Agent::train`] with a callback after every finished episode.
    pub fn train_observed(
        &mut self,
        env: &mut EvacEnv,
        seed: u64,
        mut on_episode: impl FnMut(&EpisodeRecord),
    ) -> Result<RunRecord, TrainError> {
        let actions = env.n_actions();
        if self.online.outputs() != actions {
            return Err(TrainError::ActionSpace {
                expected: actions,
                got: self.online.outputs(),
            });
        }
        let mut record = RunRecord::default();
        let mut explore = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
        for episode in 0..self.cfg.episodes {
            let started = Instant::now();
            let eps = self.cfg.epsilon.at(episode);
            let mut state = env.reset(episode_seed(seed, episode)).occupancy;
            let mut total = 0.0;
            let mut steps = 0;
            while steps < self.cfg.step_cap {
                let action = self.select_action(&state, eps, &mut explore)?;
                let out = env.step(action)?;
                steps += 1;
                total += out.reward;
                let t = Transition {
                    state: self.encode(&state),
                    action,
                    reward: out.reward,
                    next: self.encode(&out.next_state.occupancy),
                    terminal: out.terminal,
                };
                self.observe(t)?;
                if !self.online.is_finite() {
                    record.episodes.push(EpisodeRecord {
                        episode,
                        time_steps: steps,
                        total_reward: total,
                        epsilon: eps,
                        wall_ms: started.elapsed().as_secs_f64() * 1e3,
                    });
                    return Err(TrainError::Diverged {
                        episode,
                        step: steps,
                        partial: record,
                    });
                }
                state = out.next_state.occupancy;
                if out.terminal {
                    break;
                }
            }
            record.episodes.push(EpisodeRecord {
                episode,
                time_steps: steps,
                total_reward: total,
                epsilon: eps,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            on_episode(record.episodes.last().expect("just pushed"));
        }
        Ok(record)
    }

    /// One greedy episode without learning.
    pub fn rollout(&self, env: &mut EvacEnv, seed: u64, step_cap: usize) -> Result<EpisodeRecord, TrainError> {
        let started = Instant::now();
        let mut state = env.reset(seed).occupancy;
        let (mut steps, mut total) = (0, 0.0);
        while steps < step_cap {
            let out = env.step(self.greedy(&self.encode(&state))?)?;
            steps += 1;
            total += out.reward;
            state = out.next_state.occupancy;
            if out.terminal {
                break;
            }
        }
        Ok(EpisodeRecord {
            episode: 0,
            time_steps: steps,
            total_reward: total,
            epsilon: 0.0,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f32]>, width: usize) -> Array2<f32> {
    let data: Vec<f32> = rows.flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((data.len() / width, width), data).expect("rows share a width")
}

/// Environment seed for one episode of a run.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(episode as u64)
}

/// Uniformly random actions, same cap and metrics as the learners.
pub fn random_agent(env: &mut EvacEnv, episodes: usize, seed: u64, step_cap: usize) -> Result<RunRecord, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = env.n_actions();
    let mut record = RunRecord::default();
    for episode in 0..episodes {
        let started = Instant::now();
        env.reset(episode_seed(seed, episode));
        let (mut steps, mut total) = (0, 0.0);
        while steps < step_cap {
            let out = env.step(rng.gen_range(0..actions))?;
            steps += 1;
            total += out.reward;
            if out.terminal {
                break;
            }
        }
        record.episodes.push(EpisodeRecord {
            episode,
            time_steps: steps,
            total_reward: total,
            epsilon: 1.0,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::fig2;
    use crate::nn::Dense;
    use ndarray::Array1;
    use std::sync::Arc;

    /// Network whose output ignores the input and equals `bias`.
    fn constant(bias: &[f32]) -> Network<f32> {
        let arch = Architecture::new(5, &[], bias.len(), Head::Linear);
        Network::from_layers(
            arch,
            vec![Dense {
                weight: Array2::zeros((5, bias.len())),
                bias: Array1::from(bias.to_vec()),
            }],
        )
        .unwrap()
    }

    fn agent_with(variant: Variant, online: &[f32], target: &[f32]) -> Agent {
        let cfg = AgentConfig {
            gamma: 0.9,
            ..AgentConfig::with_variant(variant)
        };
        let mut agent = Agent::from_network(cfg, constant(online), 5, 10, 0);
        agent.set_networks(constant(online), constant(target));
        agent
    }

    fn transition(reward: f64, terminal: bool) -> Transition {
        Transition {
            state: vec![0.0; 5],
            action: 0,
            reward,
            next: vec![0.0; 5],
            terminal,
        }
    }

    #[test]
    fn targets() {
        let mut q = vec![0.0f32; 25];
        q[3] = 5.0;
        let agent = agent_with(Variant::Dqn, &q, &q);
        assert_eq!(agent.compute_target(&transition(10.0, true)).unwrap(), 10.0);
        assert!((agent.compute_target(&transition(10.0, false)).unwrap() - 14.5).abs() < 1e-9);
    }

    #[test]
    fn double_target_decouples() {
        let mut online = vec![0.0f32; 25];
        online[1] = 1.0;
        let mut target = vec![0.0f32; 25];
        target[1] = 2.0;
        target[2] = 7.0;
        let ddqn = agent_with(Variant::Ddqn, &online, &target);
        assert!((ddqn.compute_target(&transition(0.0, false)).unwrap() - 1.8).abs() < 1e-6);
        let dqn = agent_with(Variant::Dqn, &online, &target);
        assert!((dqn.compute_target(&transition(0.0, false)).unwrap() - 6.3).abs() < 1e-6);
    }

    #[test]
    fn greedy_selection() {
        let mut q = vec![0.0f32; 25];
        q[22] = 3.0;
        let agent = agent_with(Variant::Dqn, &q, &q);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(agent.select_action(&[0; 5], 0.0, &mut rng).unwrap(), 22);
        q[2] = 3.0;
        let agent = agent_with(Variant::Dqn, &q, &q);
        assert_eq!(agent.select_action(&[0; 5], 0.0, &mut rng).unwrap(), 2);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let agent = agent_with(Variant::Dqn, &[0.0; 25], &[0.0; 25]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut counts = [0usize; 25];
        for _ in 0..draws {
            counts[agent.select_action(&[0; 5], 1.0, &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / 25.0;
        let expected = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn masked_exploration_stays_in_mask() {
        let mut agent = agent_with(Variant::Dqn, &[0.0; 25], &[0.0; 25]);
        let ai = crate::reduction::build_importance(&fig2(), 2).unwrap();
        agent.set_mask(&ai);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(ai.is_kept(agent.select_action(&[0; 5], 1.0, &mut rng).unwrap()));
            assert!(ai.is_kept(agent.select_action(&[0; 5], 0.0, &mut rng).unwrap()));
        }
    }

    #[test]
    fn pretraining_fits_zero_matrix() {
        let cfg = AgentConfig {
            hidden: vec![16, 16],
            ..AgentConfig::default()
        };
        let mut agent = Agent::new(cfg, 5, 10, 3).unwrap();
        let report = agent.pretrain_network(&QMatrix::zeros(5)).unwrap();
        assert!(report.converged, "{report:?}");
        assert_eq!(agent.target(), agent.online());
    }

    #[test]
    fn target_syncs_on_schedule() {
        let cfg = AgentConfig {
            hidden: vec![8],
            batch_size: 2,
            target_sync: 3,
            ..AgentConfig::with_variant(Variant::Dqn)
        };
        let mut agent = Agent::new(cfg, 5, 10, 0).unwrap();
        let snapshot = agent.online().clone();
        for i in 0..5 {
            agent.observe(transition(-(i as f64), false)).unwrap();
            match agent.updates() {
                0..=2 => assert_eq!(agent.target(), &snapshot),
                _ => {}
            }
            if agent.updates() == 3 {
                assert_eq!(agent.target(), agent.online());
            }
        }
        assert_eq!(agent.updates(), 4);
        assert_ne!(agent.target(), agent.online());
    }

    #[test]
    fn random_baseline_is_capped_and_seeded() {
        let g = Arc::new(fig2());
        let mut env = EvacEnv::new(g);
        let a = random_agent(&mut env, 5, 42, 1000).unwrap();
        let b = random_agent(&mut env, 5, 42, 1000).unwrap();
        assert_eq!(a.steps(), b.steps());
        assert!(a.episodes.iter().all(|e| e.time_steps <= 1000));
    }

    #[test]
    fn bad_config() {
        let cfg = AgentConfig {
            gamma: 1.0,
            ..AgentConfig::default()
        };
        assert!(Agent::new(cfg, 5, 10, 0).is_err());
        let cfg = AgentConfig {
            batch_size: 5000,
            ..AgentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn schedule() {
        let s = EpsilonSchedule {
            start: 1.0,
            decay: 0.5,
            floor: 0.1,
        };
        assert_eq!(s.at(0), 1.0);
        assert_eq!(s.at(1), 0.5);
        assert_eq!(s.at(10), 0.1);
    }
}
