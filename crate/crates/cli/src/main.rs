use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use evacsim::agents::{AgentConfig, EpsilonSchedule, InputEncoding, Variant};
use evacsim::harness::{compare, run_experiment, AgentKind, ExperimentSpec, MaskChoice, MetricsSummary};
use evacsim::nn::Aggregation;
use evacsim::reduction::build_importance;
use evacsim::tabular::{train_qmatrix, QLearnHyper};
use evacsim::BuildingGraph;

#[derive(Parser)]
#[command(name = "evacsim", version, about = "Graph-based fire evacuation with pretrained deep Q-networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and check a building config.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Learn the shortest-path Q-matrix and write it as CSV.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Offset applied to the written `qmatrix_noisy.csv`.
        #[arg(long, default_value_t = 10.0)]
        sigma: f64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Build the action-importance mask.
    BuildMask {
        #[arg(long)]
        config: PathBuf,
        /// Kept destinations per room; defaults to the maximum degree.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Train one agent over one or more seeds.
    Train(TrainArgs),
    /// Train several agents under identical seeds.
    Compare {
        #[command(flatten)]
        run: TrainArgs,
        /// Comma-separated agent labels, e.g. random,dqn,qmp-dqn.
        #[arg(long, value_delimiter = ',', default_value = "dqn,qmp-dqn,dueling,qmp-dueling,random")]
        variants: Vec<AgentKind>,
    },
    /// Uniformly random actions, for reference.
    RandomBaseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seed: Vec<u64>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long)]
        p_override: Option<f64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "dueling")]
    agent: Variant,
    /// Pretrain on the noisy shortest-path Q-matrix (default).
    #[arg(long, overrides_with = "no_pretrain")]
    pretrain: bool,
    #[arg(long, overrides_with = "pretrain")]
    no_pretrain: bool,
    #[arg(long, default_value_t = 10.0)]
    sigma: f64,
    /// Action mask size: a number, `auto` for the maximum degree, or `off`.
    #[arg(long, default_value = "off")]
    k: String,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    #[arg(long, default_value_t = 500)]
    episodes: usize,
    #[arg(long)]
    p_override: Option<f64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Hidden layer widths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon_decay: Option<f64>,
    #[arg(long)]
    epsilon_floor: Option<f64>,
    #[arg(long)]
    step_cap: Option<usize>,
    /// Train on unclamped environment rewards instead of clamping to [-100, 10].
    #[arg(long)]
    raw_rewards: bool,
    /// Learn from the latest transition only.
    #[arg(long)]
    no_replay: bool,
    /// Feed raw occupancy counts instead of counts divided by the bottleneck.
    #[arg(long)]
    raw_input: bool,
    /// Use max instead of mean aggregation in the dueling head.
    #[arg(long)]
    max_aggregation: bool,
}

impl TrainArgs {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mask = match self.k.as_str() {
            "off" => MaskChoice::Off,
            "auto" => MaskChoice::Auto,
            n => MaskChoice::K(n.parse().with_context(|| format!("--k expects a number, auto or off, got {n:?}"))?),
        };
        let defaults = AgentConfig::default();
        let learner = AgentConfig {
            hidden: self.hidden.clone().unwrap_or(defaults.hidden.clone()),
            gamma: self.gamma.unwrap_or(defaults.gamma),
            epsilon: EpsilonSchedule {
                decay: self.epsilon_decay.unwrap_or(defaults.epsilon.decay),
                floor: self.epsilon_floor.unwrap_or(defaults.epsilon.floor),
                ..defaults.epsilon
            },
            step_cap: self.step_cap.unwrap_or(defaults.step_cap),
            reward_clip: if self.raw_rewards { None } else { defaults.reward_clip },
            replay: !self.no_replay,
            encoding: if self.raw_input {
                InputEncoding::Raw
            } else {
                InputEncoding::Normalized
            },
            aggregation: if self.max_aggregation {
                Aggregation::Max
            } else {
                Aggregation::Mean
            },
            ..defaults
        };
        learner.validate()?;
        Ok(ExperimentSpec {
            config: self.config.clone(),
            agent: AgentKind::Learner {
                variant: self.agent,
                pretrain: !self.no_pretrain,
            },
            sigma: self.sigma,
            mask,
            seeds: self.seed.clone(),
            episodes: self.episodes,
            out: Some(self.out.clone()),
            p_override: self.p_override,
            learner,
            qlearn: None,
        })
    }
}

fn print_summary(s: &MetricsSummary) {
    println!(
        "{}: mean {:.3} steps, min {}, {:.2} ms/episode",
        s.label, s.mean_steps, s.min_steps, s.mean_wall_ms
    );
    for seed in &s.per_seed {
        println!(
            "  seed {}: mean {:.3}, min {}, trailing mean {:.3}{}",
            seed.seed,
            seed.mean_steps,
            seed.min_steps,
            seed.trailing_mean,
            if seed.failed { " (FAILED)" } else { "" }
        );
    }
    if let Some(m) = &s.mask {
        println!(
            "  mask k={}: {} of {} actions kept ({:.1}% reduction)",
            m.k,
            m.retained,
            m.total,
            m.reduction * 100.0
        );
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::ValidateConfig { config } => {
            let g = BuildingGraph::load(&config).with_context(|| format!("loading {}", config.display()))?;
            println!(
                "{}: {} rooms, exits {:?}, fires {:?}, max degree {}, {} actions, evacuation lower bound {} steps",
                config.display(),
                g.rooms(),
                g.exits(),
                g.fires(),
                g.max_degree(),
                g.n_actions(),
                g.evacuation_lower_bound()
            );
        }
        Command::Pretrain { config, seed, sigma, out } => {
            let g = Arc::new(BuildingGraph::load(&config)?);
            let report = train_qmatrix(&g, &QLearnHyper::for_graph(&g), seed)?;
            fs::create_dir_all(&out)?;
            report.qmatrix.write_csv(BufWriter::new(File::create(out.join("qmatrix.csv"))?))?;
            report
                .qmatrix
                .apply_noise(sigma)
                .write_csv(BufWriter::new(File::create(out.join("qmatrix_noisy.csv"))?))?;
            println!(
                "{} episodes{}; wrote {}",
                report.episodes,
                if report.early_stopped { " (converged early)" } else { "" },
                out.join("qmatrix.csv").display()
            );
            if report.non_converged() {
                eprintln!("warning: greedy paths do not match shortest paths for every room");
            }
        }
        Command::BuildMask { config, k, out } => {
            let g = BuildingGraph::load(&config)?;
            let ai = build_importance(&g, k.unwrap_or_else(|| g.max_degree()))?;
            fs::create_dir_all(&out)?;
            ai.write_csv(BufWriter::new(File::create(out.join("mask.csv"))?))?;
            println!(
                "k={}: {} of {} actions kept ({:.1}% reduction)",
                ai.k(),
                ai.retained(),
                ai.mask().len(),
                ai.reduction() * 100.0
            );
        }
        Command::Train(args) => {
            let result = run_experiment(&args.spec()?)?;
            print_summary(&result.summary);
        }
        Command::Compare { run, variants } => {
            if variants.is_empty() {
                bail!("--variants must name at least one agent");
            }
            let cmp = compare(&variants, &run.spec()?)?;
            for r in &cmp.results {
                print_summary(&r.summary);
            }
            println!("wrote {}", run.out.join("comparison.csv").display());
        }
        Command::RandomBaseline {
            config,
            seed,
            episodes,
            p_override,
            out,
        } => {
            let spec = ExperimentSpec {
                seeds: seed,
                episodes,
                p_override,
                out: Some(out),
                ..ExperimentSpec::new(config, AgentKind::Random)
            };
            print_summary(&run_experiment(&spec)?.summary);
        }
    }
    Ok(())
}
