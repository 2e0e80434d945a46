//! Fire-evacuation MDP with a reset/step/render contract.
//!
//! One action moves one person. Action `a` encodes `source = a % n` and
//! `dest = a / n`; each step draws a uniform sample to decide whether the
//! crowd ignores the action, then resolves the move against the adjacency
//! matrix, the exit set and the per-room bottleneck.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::graph::BuildingGraph;

pub const EXIT_REWARD: f64 = 10.0;
pub const DEFAULT_REWARD_FLOOR: f64 = -1e6;
const ILLEGAL_FACTOR: f64 = 2.0;
const BOTTLENECK_FACTOR: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("action {action} out of range for {actions} actions")]
    ActionOutOfRange { action: usize, actions: usize },
    #[error("episode already terminated; call reset first")]
    Terminated,
    #[error("uncertainty {0} outside [0, 1)")]
    BadUncertainty(f64),
}

/// Split a flat action index into `(source, dest)`.
pub fn decode_action(action: usize, n: usize) -> Result<(usize, usize), EnvError> {
    if action >= n * n {
        return Err(EnvError::ActionOutOfRange {
            action,
            actions: n * n,
        });
    }
    Ok((action % n, action / n))
}

pub fn encode_action(source: usize, dest: usize, n: usize) -> usize {
    dest * n + source
}

/// `-(d^t)`, clamped below at `floor`.
pub fn reward_decay(degree: f64, t: u64, floor: f64) -> f64 {
    scaled_penalty(1.0, degree, t, floor)
}

fn scaled_penalty(factor: f64, base: f64, t: u64, floor: f64) -> f64 {
    let magnitude = factor * base.powf(t as f64);
    if magnitude.is_nan() {
        return floor;
    }
    (-magnitude).max(floor)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvacState {
    pub occupancy: Vec<u32>,
    pub clock: u64,
    pub degrees: Vec<f64>,
}

impl EvacState {
    pub fn people_left(&self) -> u64 {
        self.occupancy.iter().map(|&c| c as u64).sum()
    }
}

/// Which rule of the transition function resolved a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Ignored,
    Exit,
    Illegal,
    Bottleneck,
    Move,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: EvacState,
    pub reward: f64,
    pub terminal: bool,
    pub branch: Branch,
    pub source: usize,
    pub dest: usize,
}

#[derive(Debug, Clone)]
pub struct EvacEnv {
    graph: Arc<BuildingGraph>,
    uncertainty: f64,
    reward_floor: f64,
    state: EvacState,
    rng: ChaCha8Rng,
    terminal: bool,
}

impl EvacEnv {
    /// Environment using the graph's own uncertainty; already reset with seed 0.
    pub fn new(graph: Arc<BuildingGraph>) -> Self {
        let uncertainty = graph.uncertainty();
        let state = initial_state(&graph);
        EvacEnv {
            graph,
            uncertainty,
            reward_floor: DEFAULT_REWARD_FLOOR,
            state,
            rng: ChaCha8Rng::seed_from_u64(0),
            terminal: false,
        }
    }

    pub fn with_uncertainty(mut self, p: f64) -> Result<Self, EnvError> {
        if !(0.0..1.0).contains(&p) {
            return Err(EnvError::BadUncertainty(p));
        }
        self.uncertainty = p;
        Ok(self)
    }

    pub fn with_reward_floor(mut self, floor: f64) -> Self {
        self.reward_floor = floor;
        self
    }

    pub fn graph(&self) -> &Arc<BuildingGraph> {
        &self.graph
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn n_actions(&self) -> usize {
        self.graph.n_actions()
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn reset(&mut self, seed: u64) -> EvacState {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = initial_state(&self.graph);
        self.terminal = self.state.people_left() == 0;
        self.state.clone()
    }

    pub fn render(&self) -> EvacState {
        self.state.clone()
    }

    pub fn state(&self) -> &EvacState {
        &self.state
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        let n = self.graph.rooms();
        let (source, dest) = decode_action(action, n)?;
        if self.terminal {
            return Err(EnvError::Terminated);
        }

        self.state.clock += 1;
        let t = self.state.clock;
        let floor = self.reward_floor;
        let u: f64 = self.rng.gen();
        let max_degree = self.state.degrees.iter().copied().fold(0.0_f64, f64::max);
        let occ = &mut self.state.occupancy;

        let (branch, reward) = if u < self.uncertainty {
            (Branch::Ignored, reward_decay(self.state.degrees[dest], t, floor))
        } else if self.graph.has_edge(source, dest) && self.graph.is_exit(dest) && occ[source] > 0 {
            occ[source] -= 1;
            (Branch::Exit, EXIT_REWARD)
        } else if !self.graph.has_edge(source, dest) || occ[source] == 0 {
            (
                Branch::Illegal,
                scaled_penalty(ILLEGAL_FACTOR, max_degree, t, floor),
            )
        } else if occ[dest] >= self.graph.bottleneck() {
            (
                Branch::Bottleneck,
                scaled_penalty(BOTTLENECK_FACTOR, max_degree, t, floor),
            )
        } else {
            occ[source] -= 1;
            occ[dest] += 1;
            (Branch::Move, reward_decay(self.state.degrees[dest], t, floor))
        };

        // Closed form of d(t+1) = d(t) + delta, exact at every clock value.
        for ((d, d0), dd) in self
            .state
            .degrees
            .iter_mut()
            .zip(self.graph.degree0())
            .zip(self.graph.delta())
        {
            *d = d0 + t as f64 * dd;
        }

        self.terminal = self.state.people_left() == 0;
        Ok(StepOutcome {
            next_state: self.state.clone(),
            reward,
            terminal: self.terminal,
            branch,
            source,
            dest,
        })
    }
}

fn initial_state(graph: &BuildingGraph) -> EvacState {
    EvacState {
        occupancy: graph.occupancy0().to_vec(),
        clock: 0,
        degrees: graph.degree0().to_vec(),
    }
}

/// Row of a trajectory dump.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRow {
    pub t: u64,
    pub action: usize,
    pub source: usize,
    pub dest: usize,
    pub branch: Branch,
    pub reward: f64,
    pub terminal: bool,
}

impl TrajectoryRow {
    pub fn from_outcome(action: usize, outcome: &StepOutcome) -> Self {
        TrajectoryRow {
            t: outcome.next_state.clock,
            action,
            source: outcome.source,
            dest: outcome.dest,
            branch: outcome.branch,
            reward: outcome.reward,
            terminal: outcome.terminal,
        }
    }
}

pub fn write_trajectory<W: Write>(out: W, rows: &[TrajectoryRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
