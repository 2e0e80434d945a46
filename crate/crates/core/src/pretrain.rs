//! Shortest-path pretraining instance: graph structure only, no fire,
//! population or bottleneck. The agent is a single walker; its action is
//! the destination room.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::BuildingGraph;

pub const EXIT_REWARD: f64 = 1.0;
pub const ILLEGAL_REWARD: f64 = -10.0;
pub const MOVE_REWARD: f64 = -1.0;

/// Episodes are truncated after this many steps per room.
pub const STEP_CAP_PER_ROOM: usize = 50;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PretrainError {
    #[error("building has no non-exit room to start from")]
    NoStartRoom,
    #[error("destination {dest} out of range for {rooms} rooms")]
    DestOutOfRange { dest: usize, rooms: usize },
    #[error("room {0} is not a valid walker position")]
    BadPosition(usize),
    #[error("episode finished; call reset first")]
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PretrainState {
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainOutcome {
    pub next: PretrainState,
    pub reward: f64,
    /// The walker reached an exit; the episode is over.
    pub exit: bool,
    /// The step cap was hit without reaching an exit.
    pub truncated: bool,
}

/// Immediate reward of moving `from -> to`, and whether the move exits.
pub fn pretrain_reward(graph: &BuildingGraph, from: usize, to: usize) -> (f64, bool) {
    if graph.has_edge(from, to) {
        if graph.is_exit(to) {
            (EXIT_REWARD, true)
        } else {
            (MOVE_REWARD, false)
        }
    } else {
        (ILLEGAL_REWARD, false)
    }
}

#[derive(Debug, Clone)]
pub struct PretrainEnv {
    graph: Arc<BuildingGraph>,
    starts: Vec<usize>,
    state: PretrainState,
    rng: ChaCha8Rng,
    steps: usize,
    max_steps: usize,
    done: bool,
}

impl PretrainEnv {
    pub fn new(graph: Arc<BuildingGraph>) -> Result<Self, PretrainError> {
        let starts: Vec<usize> = graph.non_exit_rooms().collect();
        let first = *starts.first().ok_or(PretrainError::NoStartRoom)?;
        let max_steps = STEP_CAP_PER_ROOM * graph.rooms();
        Ok(PretrainEnv {
            graph,
            starts,
            state: PretrainState { position: first },
            rng: ChaCha8Rng::seed_from_u64(0),
            steps: 0,
            max_steps,
            done: false,
        })
    }

    pub fn graph(&self) -> &Arc<BuildingGraph> {
        &self.graph
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// Reseed and place the walker in a uniformly drawn non-exit room.
    pub fn reset(&mut self, seed: u64) -> PretrainState {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let position = self.starts[self.rng.gen_range(0..self.starts.len())];
        self.start_at(position)
    }

    /// Place the walker in a chosen room (used by one-step simulation).
    pub fn set_position(&mut self, room: usize) -> Result<PretrainState, PretrainError> {
        if room >= self.graph.rooms() || self.graph.is_exit(room) {
            return Err(PretrainError::BadPosition(room));
        }
        Ok(self.start_at(room))
    }

    fn start_at(&mut self, position: usize) -> PretrainState {
        self.state = PretrainState { position };
        self.steps = 0;
        self.done = false;
        self.state
    }

    pub fn state(&self) -> PretrainState {
        self.state
    }

    pub fn step(&mut self, dest: usize) -> Result<PretrainOutcome, PretrainError> {
        let rooms = self.graph.rooms();
        if dest >= rooms {
            return Err(PretrainError::DestOutOfRange { dest, rooms });
        }
        if self.done {
            return Err(PretrainError::Finished);
        }
        let (reward, exit) = pretrain_reward(&self.graph, self.state.position, dest);
        if !exit && reward == MOVE_REWARD {
            self.state.position = dest;
        }
        self.steps += 1;
        let truncated = !exit && self.steps >= self.max_steps;
        self.done = exit || truncated;
        Ok(PretrainOutcome {
            next: self.state,
            reward,
            exit,
            truncated,
        })
    }
}
