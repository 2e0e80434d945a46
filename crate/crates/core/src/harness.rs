//! Experiment orchestration: pretraining, masking and training over a list
//! of seeds, with CSV artifacts.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::agents::{random_agent, Agent, AgentConfig, PretrainReport, RunRecord, TrainError, Variant};
use crate::env::{EnvError, EvacEnv};
use crate::graph::{BuildingGraph, ConfigError};
use crate::nn::{save_checkpoint, CheckpointError};
use crate::reduction::{build_importance, ActionImportance, ReductionError};
use crate::tabular::{train_qmatrix, QLearnHyper, TabularError};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "EVACSIM_THREADS";

/// Episodes averaged for the trailing-mean column.
pub const TRAILING: usize = 100;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("experiment needs at least one seed")]
    NoSeeds,
    #[error("experiment needs at least one episode")]
    NoEpisodes,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Agent(#[from] crate::agents::ConfigError),
    #[error(transparent)]
    Net(#[from] crate::nn::NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Random,
    Learner { variant: Variant, pretrain: bool },
}

impl AgentKind {
    /// Short label such as `qmp-dueling` or `dqn`.
    pub fn label(&self) -> String {
        match self {
            AgentKind::Random => "random".to_string(),
            AgentKind::Learner { variant, pretrain: true } => format!("qmp-{}", variant.name()),
            AgentKind::Learner { variant, pretrain: false } => variant.name().to_string(),
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.to_ascii_lowercase();
        if s == "random" {
            return Ok(AgentKind::Random);
        }
        match s.strip_prefix("qmp-") {
            Some(rest) => Ok(AgentKind::Learner {
                variant: rest.parse()?,
                pretrain: true,
            }),
            None => Ok(AgentKind::Learner {
                variant: s.parse()?,
                pretrain: false,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskChoice {
    Off,
    /// `k` equal to the building's maximum degree.
    Auto,
    K(usize),
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub config: PathBuf,
    pub agent: AgentKind,
    pub sigma: f64,
    pub mask: MaskChoice,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    /// Directory receiving the CSV artifacts; nothing is written when unset.
    pub out: Option<PathBuf>,
    /// Replace the building's uncertainty.
    pub p_override: Option<f64>,
    /// Learner settings; `variant` and `episodes` are taken from the enclosing `ExperimentSpec`.
    pub learner: AgentConfig,
    /// Tabular settings; derived from the building when unset.
    pub qlearn: Option<QLearnHyper>,
}

impl ExperimentSpec {
    pub fn new(config: impl Into<PathBuf>, agent: AgentKind) -> Self {
        ExperimentSpec {
            config: config.into(),
            agent,
            sigma: 10.0,
            mask: MaskChoice::Off,
            seeds: vec![0],
            episodes: 500,
            out: None,
            p_override: None,
            learner: AgentConfig::default(),
            qlearn: None,
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::NoSeeds);
        }
        if self.episodes == 0 {
            return Err(HarnessError::NoEpisodes);
        }
        Ok(())
    }

    fn learner_config(&self, variant: Variant) -> AgentConfig {
        AgentConfig {
            variant,
            episodes: self.episodes,
            ..self.learner.clone()
        }
    }

    /// The building with any uncertainty override applied.
    pub fn building(&self) -> Result<Arc<BuildingGraph>, HarnessError> {
        let g = BuildingGraph::load(&self.config)?;
        Ok(Arc::new(match self.p_override {
            Some(p) => g.with_uncertainty(p)?,
            None => g,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskStats {
    pub k: usize,
    pub retained: usize,
    pub total: usize,
    pub reduction: f64,
}

impl MaskStats {
    pub fn of(ai: &ActionImportance) -> Self {
        MaskStats {
            k: ai.k(),
            retained: ai.retained(),
            total: ai.mask().len(),
            reduction: ai.reduction(),
        }
    }
}

/// Result of one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub record: RunRecord,
    pub pretrain: Option<PretrainReport>,
    /// Error message when the run stopped early.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub episodes: usize,
    pub mean_steps: f64,
    pub min_steps: usize,
    pub trailing_mean: f64,
    pub mean_wall_ms: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub label: String,
    pub mean_steps: f64,
    pub min_steps: usize,
    pub mean_wall_ms: f64,
    pub per_seed: Vec<SeedSummary>,
    pub mask: Option<MaskStats>,
}

impl MetricsSummary {
    fn from_runs(label: String, runs: &[SeedRun], mask: Option<MaskStats>) -> Self {
        let all: Vec<_> = runs.iter().flat_map(|r| r.record.episodes.iter()).collect();
        let count = all.len().max(1) as f64;
        let per_seed = runs
            .iter()
            .map(|r| SeedSummary {
                seed: r.seed,
                episodes: r.record.episodes.len(),
                mean_steps: r.record.mean_steps(),
                min_steps: r.record.min_steps().unwrap_or(0),
                trailing_mean: r.record.trailing_mean(TRAILING),
                mean_wall_ms: r.record.mean_wall_ms(),
                failed: r.failure.is_some(),
            })
            .collect();
        MetricsSummary {
            label,
            mean_steps: all.iter().map(|e| e.time_steps as f64).sum::<f64>() / count,
            min_steps: all.iter().map(|e| e.time_steps).min().unwrap_or(0),
            mean_wall_ms: all.iter().map(|e| e.wall_ms).sum::<f64>() / count,
            per_seed,
            mask,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summary: MetricsSummary,
    pub runs: Vec<SeedRun>,
}

/// Worker count from the environment, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn pool() -> Result<rayon::ThreadPool, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| HarnessError::Pool(e.to_string()))
}

fn mask_for(spec: &ExperimentSpec, graph: &BuildingGraph) -> Result<Option<ActionImportance>, HarnessError> {
    let k = match spec.mask {
        MaskChoice::Off => return Ok(None),
        MaskChoice::Auto => graph.max_degree(),
        MaskChoice::K(k) => k,
    };
    Ok(Some(build_importance(graph, k)?))
}

/// File name of the trained online network for one seed.
pub fn checkpoint_name(seed: u64) -> String {
    format!("model_seed{seed}.evqn")
}

fn run_seed(
    spec: &ExperimentSpec,
    graph: &Arc<BuildingGraph>,
    mask: Option<&ActionImportance>,
    seed: u64,
) -> Result<SeedRun, HarnessError> {
    let mut env = EvacEnv::new(graph.clone());
    let (variant, pretrain) = match spec.agent {
        AgentKind::Random => {
            let record = random_agent(&mut env, spec.episodes, seed, spec.learner.step_cap)?;
            return Ok(SeedRun {
                seed,
                record,
                pretrain: None,
                failure: None,
            });
        }
        AgentKind::Learner { variant, pretrain } => (variant, pretrain),
    };
    let mut agent = Agent::new(spec.learner_config(variant), graph.rooms(), graph.bottleneck(), seed)?;
    let report = if pretrain {
        let hyper = spec.qlearn.clone().unwrap_or_else(|| QLearnHyper::for_graph(graph));
        let tabular = train_qmatrix(graph, &hyper, seed)?;
        Some(agent.pretrain_network(&tabular.qmatrix.apply_noise(spec.sigma))?)
    } else {
        None
    };
    if let Some(ai) = mask {
        agent.set_mask(ai);
    }
    match agent.train(&mut env, seed) {
        Ok(record) => {
            if let Some(dir) = &spec.out {
                fs::create_dir_all(dir)?;
                save_checkpoint(agent.online(), dir.join(checkpoint_name(seed)))?;
            }
            Ok(SeedRun {
                seed,
                record,
                pretrain: report,
                failure: None,
            })
        }
        Err(TrainError::Diverged { episode, step, partial }) => Ok(SeedRun {
            seed,
            record: partial,
            pretrain: report,
            failure: Some(format!("diverged in episode {episode} at step {step}")),
        }),
        Err(e) => Err(e.into()),
    }
}

/// Train every seed, write artifacts if an output directory is set, and
/// summarize.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, HarnessError> {
    spec.validate()?;
    let graph = spec.building()?;
    let mask = mask_for(spec, &graph)?;
    let runs: Vec<Result<SeedRun, HarnessError>> = pool()?.install(|| {
        spec.seeds
            .par_iter()
            .map(|&seed| run_seed(spec, &graph, mask.as_ref(), seed))
            .collect()
    });
    let mut done = Vec::with_capacity(runs.len());
    let mut first_error = None;
    for (seed, run) in spec.seeds.iter().zip(runs) {
        match run {
            Ok(r) => done.push(r),
            Err(e) => {
                done.push(SeedRun {
                    seed: *seed,
                    record: RunRecord::default(),
                    pretrain: None,
                    failure: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    let summary = MetricsSummary::from_runs(spec.agent.label(), &done, mask.as_ref().map(MaskStats::of));
    if let Some(dir) = &spec.out {
        write_artifacts(dir, &summary, &done)?;
        if let Some(ai) = &mask {
            ai.write_csv(BufWriter::new(File::create(dir.join("mask.csv"))?))?;
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(ExperimentResult { summary, runs: done }),
    }
}

/// Write `episodes.csv`, `summary.csv`, `timing.csv` and, when a mask was
/// used, `mask_stats.csv`. Everything except `timing.csv` is a pure
/// function of the experiment settings and seeds, as are the per-seed checkpoints.
pub fn write_artifacts(dir: &Path, summary: &MetricsSummary, runs: &[SeedRun]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let mut episodes = csv::Writer::from_path(dir.join("episodes.csv"))?;
    episodes.write_record(["seed", "episode", "time_steps", "total_reward", "epsilon"])?;
    let mut timing = csv::Writer::from_path(dir.join("timing.csv"))?;
    timing.write_record(["seed", "episode", "wall_ms"])?;
    for run in runs {
        for e in &run.record.episodes {
            episodes.write_record([
                run.seed.to_string(),
                e.episode.to_string(),
                e.time_steps.to_string(),
                e.total_reward.to_string(),
                e.epsilon.to_string(),
            ])?;
            timing.write_record([run.seed.to_string(), e.episode.to_string(), e.wall_ms.to_string()])?;
        }
        if let Some(msg) = &run.failure {
            episodes.write_record([run.seed.to_string(), "FAILED".into(), String::new(), String::new(), msg.clone()])?;
        }
    }
    episodes.flush()?;
    timing.flush()?;

    let mut out = csv::Writer::from_path(dir.join("summary.csv"))?;
    out.write_record(["agent", "seed", "episodes", "mean_steps", "min_steps", "trailing100_mean", "status"])?;
    for s in &summary.per_seed {
        out.write_record([
            summary.label.clone(),
            s.seed.to_string(),
            s.episodes.to_string(),
            s.mean_steps.to_string(),
            s.min_steps.to_string(),
            s.trailing_mean.to_string(),
            if s.failed { "FAILED" } else { "ok" }.to_string(),
        ])?;
    }
    let total: usize = summary.per_seed.iter().map(|s| s.episodes).sum();
    let any_failed = summary.per_seed.iter().any(|s| s.failed);
    out.write_record([
        summary.label.clone(),
        "all".to_string(),
        total.to_string(),
        summary.mean_steps.to_string(),
        summary.min_steps.to_string(),
        String::new(),
        if any_failed { "FAILED" } else { "ok" }.to_string(),
    ])?;
    out.flush()?;

    if let Some(m) = &summary.mask {
        let mut w = csv::Writer::from_path(dir.join("mask_stats.csv"))?;
        w.write_record(["k", "retained", "total", "reduction_pct"])?;
        w.write_record([
            m.k.to_string(),
            m.retained.to_string(),
            m.total.to_string(),
            format!("{:.1}", m.reduction * 100.0),
        ])?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub results: Vec<ExperimentResult>,
}

impl Comparison {
    pub fn summary(&self, label: &str) -> Option<&MetricsSummary> {
        self.results.iter().map(|r| &r.summary).find(|s| s.label == label)
    }
}

/// Run several agent kinds under the same building, seeds and settings.
/// Writes `comparison.csv` with one time-step column per agent.
pub fn compare(kinds: &[AgentKind], base: &ExperimentSpec) -> Result<Comparison, HarnessError> {
    let mut results = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let spec = ExperimentSpec {
            agent: kind,
            out: base.out.as_ref().map(|d| d.join(kind.label())),
            ..base.clone()
        };
        results.push(run_experiment(&spec)?);
    }
    if let Some(dir) = &base.out {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("comparison.csv"))?;
        let mut header = vec!["seed".to_string(), "episode".to_string()];
        header.extend(results.iter().map(|r| r.summary.label.clone()));
        w.write_record(&header)?;
        for (i, &seed) in base.seeds.iter().enumerate() {
            for ep in 0..base.episodes {
                let mut row = vec![seed.to_string(), ep.to_string()];
                for r in &results {
                    row.push(
                        r.runs[i]
                            .record
                            .episodes
                            .get(ep)
                            .map(|e| e.time_steps.to_string())
                            .unwrap_or_default(),
                    );
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
    }
    Ok(Comparison { results })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2_path() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/fig2.json")
    }

    #[test]
    fn labels_round_trip() {
        for s in ["random", "dqn", "ddqn", "dueling", "qmp-dqn", "qmp-ddqn", "qmp-dueling"] {
            assert_eq!(s.parse::<AgentKind>().unwrap().label(), s);
        }
        assert!("qmp-random".parse::<AgentKind>().is_err());
    }

    #[test]
    fn rejects_empty_specs() {
        let mut spec = ExperimentSpec::new(fig2_path(), AgentKind::Random);
        spec.seeds.clear();
        assert!(matches!(run_experiment(&spec), Err(HarnessError::NoSeeds)));
        let mut spec = ExperimentSpec::new(fig2_path(), AgentKind::Random);
        spec.episodes = 0;
        assert!(matches!(run_experiment(&spec), Err(HarnessError::NoEpisodes)));
    }

    #[test]
    fn random_artifacts_are_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut spec = ExperimentSpec::new(fig2_path(), AgentKind::Random);
        spec.seeds = vec![3, 1];
        spec.episodes = 4;
        spec.mask = MaskChoice::K(2);
        spec.out = Some(a.path().to_path_buf());
        let first = run_experiment(&spec).unwrap();
        spec.out = Some(b.path().to_path_buf());
        run_experiment(&spec).unwrap();
        for f in ["episodes.csv", "summary.csv", "mask_stats.csv", "mask.csv"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        assert_eq!(first.runs[0].seed, 3);
        assert!(first.summary.min_steps as f64 <= first.summary.mean_steps);
        let stats = fs::read_to_string(a.path().join("mask_stats.csv")).unwrap();
        assert_eq!(stats, "k,retained,total,reduction_pct\n2,10,25,60.0\n");
    }
}
