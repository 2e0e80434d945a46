//! Tabular Q-learning on the pretraining instance.
//!
//! The table is `n x n`: entry `(i, j)` values moving the walker from room
//! `i` to room `j`. A converged table encodes shortest paths to the nearest
//! exit, which is what gets transferred into the deep agents.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::BuildingGraph;
use crate::pretrain::{PretrainEnv, PretrainError};

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("invalid hyperparameter `{field}`: {rule}")]
    Hyper { field: &'static str, rule: &'static str },
    #[error(transparent)]
    Env(#[from] PretrainError),
    #[error("q-matrix csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PathError {
    #[error("start room {0} is an exit or out of range")]
    BadStart(usize),
    #[error("greedy policy cycles without reaching an exit: {0:?}")]
    Cycle(Vec<usize>),
    #[error("greedy policy did not reach an exit within the step cap: {0:?}")]
    NoExit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    n: usize,
    values: Vec<f64>,
}

impl QMatrix {
    pub fn zeros(n: usize) -> Self {
        QMatrix {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "q-matrix must be square");
        QMatrix {
            n,
            values: rows.concat(),
        }
    }

    pub fn rooms(&self) -> usize {
        self.n
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.values[from * self.n + to]
    }

    pub fn set(&mut self, from: usize, to: usize, value: f64) {
        self.values[from * self.n + to] = value;
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.values[from * self.n..(from + 1) * self.n]
    }

    /// Column of the row maximum; ties go to the lowest index.
    pub fn argmax(&self, from: usize) -> usize {
        argmax(self.row(from))
    }

    pub fn max(&self, from: usize) -> f64 {
        self.row(from).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// One temporal-difference update. Returns the absolute change.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        s: usize,
        a: usize,
        reward: f64,
        next: usize,
        terminal: bool,
        eta: f64,
        gamma: f64,
    ) -> f64 {
        let bootstrap = if terminal { 0.0 } else { gamma * self.max(next) };
        let old = self.get(s, a);
        let new = old + eta * (reward + bootstrap - old);
        self.set(s, a, new);
        (new - old).abs()
    }

    /// Sign-conditional offset: entries `<= 0` gain `sigma`, positive
    /// entries lose it.
    pub fn apply_noise(&self, sigma: f64) -> QMatrix {
        assert!(sigma >= 0.0, "sigma must be non-negative");
        QMatrix {
            n: self.n,
            values: self
                .values
                .iter()
                .map(|&q| if q <= 0.0 { q + sigma } else { q - sigma })
                .collect(),
        }
    }

    /// Flatten into the deep agent's action layout, `a = dest * n + source`.
    pub fn to_action_vector(&self) -> Vec<f64> {
        let n = self.n;
        (0..n * n).map(|a| self.get(a % n, a / n)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &QMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Follow the greedy policy from `start` until an exit. A greedy move
    /// along a missing edge leaves the walker in place and counts as a cycle.
    pub fn greedy_path(&self, graph: &BuildingGraph, start: usize) -> Result<Vec<usize>, PathError> {
        if start >= graph.rooms() || graph.is_exit(start) {
            return Err(PathError::BadStart(start));
        }
        let mut path = vec![start];
        let mut seen = vec![false; graph.rooms()];
        seen[start] = true;
        let mut here = start;
        for _ in 0..graph.rooms() {
            let next = self.argmax(here);
            let next = if graph.has_edge(here, next) { next } else { here };
            path.push(next);
            if graph.is_exit(next) {
                return Ok(path);
            }
            if seen[next] {
                return Err(PathError::Cycle(path));
            }
            seen[next] = true;
            here = next;
        }
        Err(PathError::NoExit(path))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.n {
            let line: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<QMatrix, TabularError> {
        let mut rows = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TabularError::Csv(e.to_string()))?;
            rows.push(row);
        }
        if rows.iter().any(|r| r.len() != rows.len()) {
            return Err(TabularError::Csv("matrix is not square".into()));
        }
        Ok(QMatrix::from_rows(&rows))
    }
}

pub(crate) fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLearnHyper {
    /// Base learning rate; decays per pair as `eta / (1 + visits * 1e-3)`.
    pub eta: f64,
    pub gamma: f64,
    pub epsilon0: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub episodes: usize,
    pub early_stop_tol: f64,
    /// Early stopping is only considered after this many episodes.
    pub min_episodes: usize,
}

impl Default for QLearnHyper {
    fn default() -> Self {
        QLearnHyper {
            eta: 0.5,
            gamma: 0.9,
            epsilon0: 1.0,
            epsilon_decay: 0.995,
            epsilon_min: 0.05,
            episodes: 1000,
            early_stop_tol: 1e-6,
            min_episodes: 200,
        }
    }
}

impl QLearnHyper {
    /// Defaults, with slower exploration decay for large buildings.
    pub fn for_graph(graph: &BuildingGraph) -> Self {
        let mut h = QLearnHyper::default();
        if graph.rooms() > 50 {
            h.epsilon_decay = 0.999;
            h.epsilon_min = 0.1;
        }
        h
    }

    pub fn validate(&self) -> Result<(), TabularError> {
        let bad = |field, rule| Err(TabularError::Hyper { field, rule });
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad("eta", "must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon0) || !(0.0..=1.0).contains(&self.epsilon_min) {
            return bad("epsilon0", "exploration rates must lie in [0, 1]");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return bad("epsilon_decay", "must lie in (0, 1]");
        }
        if self.episodes == 0 {
            return bad("episodes", "must be at least 1");
        }
        if !(self.early_stop_tol >= 0.0) {
            return bad("early_stop_tol", "must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QLearnReport {
    pub qmatrix: QMatrix,
    pub episodes: usize,
    pub early_stopped: bool,
    /// Max-abs table change during the final episode.
    pub last_change: f64,
    /// Greedy path length equals the hop distance to the nearest exit for
    /// every non-exit room.
    pub shortest_paths: bool,
}

impl QLearnReport {
    /// Training stopped on the episode cap and the policy is not yet optimal.
    pub fn non_converged(&self) -> bool {
        !self.early_stopped && !self.shortest_paths
    }
}

/// ε-greedy Q-learning with random starts until the episode budget runs out
/// or a whole episode changes the table by less than `early_stop_tol`.
pub fn train_qmatrix(
    graph: &Arc<BuildingGraph>,
    h: &QLearnHyper,
    seed: u64,
) -> Result<QLearnReport, TabularError> {
    h.validate()?;
    let n = graph.rooms();
    let mut env = PretrainEnv::new(Arc::clone(graph))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = QMatrix::zeros(n);
    let mut visits = vec![0u64; n * n];
    let mut epsilon = h.epsilon0;
    let mut episodes = 0;
    let mut early_stopped = false;
    let mut last_change = f64::INFINITY;

    while episodes < h.episodes {
        let mut s = env.reset(rng.next_u64()).position;
        let mut change: f64 = 0.0;
        loop {
            let a = if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..n)
            } else {
                q.argmax(s)
            };
            let out = env.step(a)?;
            let k = s * n + a;
            let eta = h.eta / (1.0 + visits[k] as f64 * 1e-3);
            visits[k] += 1;
            change = change.max(q.update(s, a, out.reward, out.next.position, out.exit, eta, h.gamma));
            s = out.next.position;
            if out.exit || out.truncated {
                break;
            }
        }
        episodes += 1;
        last_change = change;
        epsilon = (epsilon * h.epsilon_decay).max(h.epsilon_min);
        if episodes >= h.min_episodes && change < h.early_stop_tol {
            early_stopped = true;
            break;
        }
    }

    let shortest_paths = matches_shortest_paths(&q, graph);
    Ok(QLearnReport {
        qmatrix: q,
        episodes,
        early_stopped,
        last_change,
        shortest_paths,
    })
}

fn matches_shortest_paths(q: &QMatrix, graph: &BuildingGraph) -> bool {
    let dist = graph.exit_distances();
    graph.non_exit_rooms().all(|i| match q.greedy_path(graph, i) {
        Ok(path) => Some(path.len() - 1) == dist[i],
        Err(_) => false,
    })
}
