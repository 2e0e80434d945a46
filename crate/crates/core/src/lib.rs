//! Graph-based fire evacuation environment with Q-matrix pretrained deep
//! Q-learning agents.

pub mod agents;
pub mod env;
pub mod graph;
pub mod harness;
pub mod nn;
pub mod pretrain;
pub mod reduction;
pub mod tabular;

pub use env::{Branch, EvacEnv, EvacState, StepOutcome};
pub use graph::{load_config, BuildingConfig, BuildingGraph, ConfigError};
pub use pretrain::{PretrainEnv, PretrainState};
pub use tabular::{train_qmatrix, QLearnHyper, QMatrix};
