//! Static building model: rooms, directed adjacency, exits, fire hazard
//! parameters and the initial population.
//!
//! Configs list undirected edges. An edge between two ordinary rooms is
//! expanded in both directions; an edge touching an exit is expanded one way
//! only, into the exit, so exit rows of the adjacency matrix are always zero.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid `{field}`: {rule}")]
    Invalid { field: &'static str, rule: String },
    #[error("room {room} has no path to any exit")]
    Unreachable { room: usize },
}

impl ConfigError {
    fn invalid(field: &'static str, rule: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field,
            rule: rule.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("room index {room} out of range for {rooms} rooms")]
pub struct RoomOutOfRange {
    pub room: usize,
    pub rooms: usize,
}

/// On-disk building description.
///
/// Exactly one of `edges` or `adjacency` must be present. Serialization of a
/// loaded graph always emits the canonical edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingConfig {
    pub rooms: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<Vec<u8>>>,
    pub exits: Vec<usize>,
    pub fires: Vec<usize>,
    pub degree0: Vec<f64>,
    pub delta: Vec<f64>,
    pub bottleneck: u32,
    pub occupancy0: Vec<u32>,
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingGraph {
    n: usize,
    adjacency: Vec<bool>,
    neighbors: Vec<Vec<usize>>,
    exits: Vec<usize>,
    is_exit: Vec<bool>,
    fires: Vec<usize>,
    degree0: Vec<f64>,
    delta: Vec<f64>,
    bottleneck: u32,
    occupancy0: Vec<u32>,
    uncertainty: f64,
}

/// Parse and validate a JSON building document.
pub fn load_config(text: &str) -> Result<BuildingGraph, ConfigError> {
    let cfg: BuildingConfig = serde_json::from_str(text)?;
    BuildingGraph::from_config(&cfg)
}

impl BuildingGraph {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        load_config(&text)
    }

    pub fn from_config(cfg: &BuildingConfig) -> Result<Self, ConfigError> {
        let n = cfg.rooms;
        if n == 0 {
            return Err(ConfigError::invalid("rooms", "must be positive"));
        }

        let mut exits = cfg.exits.clone();
        if exits.is_empty() {
            return Err(ConfigError::invalid("exits", "at least one exit is required"));
        }
        exits.sort_unstable();
        if exits.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::invalid("exits", "duplicate exit index"));
        }
        if let Some(&e) = exits.iter().find(|&&e| e >= n) {
            return Err(ConfigError::invalid("exits", format!("index {e} out of range")));
        }
        let mut is_exit = vec![false; n];
        for &e in &exits {
            is_exit[e] = true;
        }

        let adjacency = match (&cfg.edges, &cfg.adjacency) {
            (Some(edges), None) => expand_edges(n, edges, &is_exit)?,
            (None, Some(rows)) => check_matrix(n, rows, &is_exit)?,
            _ => {
                return Err(ConfigError::invalid(
                    "edges",
                    "exactly one of `edges` or `adjacency` must be given",
                ))
            }
        };

        let mut fires = cfg.fires.clone();
        fires.sort_unstable();
        if fires.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::invalid("fires", "duplicate fire index"));
        }
        for &f in &fires {
            if f >= n {
                return Err(ConfigError::invalid("fires", format!("index {f} out of range")));
            }
            if is_exit[f] {
                return Err(ConfigError::invalid("fires", format!("room {f} is an exit")));
            }
        }

        if cfg.degree0.len() != n {
            return Err(ConfigError::invalid("degree0", format!("expected {n} entries")));
        }
        if cfg.degree0.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(ConfigError::invalid("degree0", "entries must be finite and non-negative"));
        }
        if cfg.delta.len() != n {
            return Err(ConfigError::invalid("delta", format!("expected {n} entries")));
        }
        if cfg.delta.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(ConfigError::invalid("delta", "entries must lie in [0, 1]"));
        }
        for &e in &exits {
            if cfg.degree0[e] != 0.0 || cfg.delta[e] != 0.0 {
                return Err(ConfigError::invalid(
                    "degree0",
                    format!("exit {e} must have zero degree and zero delta"),
                ));
            }
        }
        let top = cfg.degree0.iter().copied().fold(0.0_f64, f64::max);
        for &f in &fires {
            if cfg.degree0[f] != top {
                return Err(ConfigError::invalid(
                    "degree0",
                    format!("fire room {f} must carry the highest degree ({top})"),
                ));
            }
        }

        if cfg.bottleneck == 0 {
            return Err(ConfigError::invalid("bottleneck", "must be positive"));
        }
        if cfg.occupancy0.len() != n {
            return Err(ConfigError::invalid("occupancy0", format!("expected {n} entries")));
        }
        if let Some(i) = (0..n).find(|&i| cfg.occupancy0[i] > cfg.bottleneck) {
            return Err(ConfigError::invalid(
                "occupancy0",
                format!("occupancy exceeds bottleneck in room {i}"),
            ));
        }
        if let Some(&e) = exits.iter().find(|&&e| cfg.occupancy0[e] != 0) {
            return Err(ConfigError::invalid(
                "occupancy0",
                format!("exit {e} must start empty"),
            ));
        }
        if !(0.0..1.0).contains(&cfg.uncertainty) {
            return Err(ConfigError::invalid("uncertainty", "must lie in [0, 1)"));
        }

        let neighbors: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| adjacency[i * n + j]).collect())
            .collect();
        let feeds_exit = (0..n).any(|i| !is_exit[i] && neighbors[i].iter().any(|&j| is_exit[j]));
        if !feeds_exit && is_exit.iter().any(|e| !e) {
            return Err(ConfigError::invalid(
                "edges",
                "no room has an edge into an exit",
            ));
        }

        let graph = BuildingGraph {
            n,
            adjacency,
            neighbors,
            exits,
            is_exit,
            fires,
            degree0: cfg.degree0.clone(),
            delta: cfg.delta.clone(),
            bottleneck: cfg.bottleneck,
            occupancy0: cfg.occupancy0.clone(),
            uncertainty: cfg.uncertainty,
        };
        let dist = graph.exit_distances();
        if let Some(room) = (0..n).find(|&i| dist[i].is_none()) {
            return Err(ConfigError::Unreachable { room });
        }
        Ok(graph)
    }

    /// Canonical config: edges sorted, one entry per undirected pair.
    pub fn to_config(&self) -> BuildingConfig {
        let mut edges = Vec::new();
        for i in 0..self.n {
            if self.is_exit[i] {
                continue;
            }
            for &j in &self.neighbors[i] {
                if self.is_exit[j] || i < j {
                    edges.push([i, j]);
                }
            }
        }
        BuildingConfig {
            rooms: self.n,
            edges: Some(edges),
            adjacency: None,
            exits: self.exits.clone(),
            fires: self.fires.clone(),
            degree0: self.degree0.clone(),
            delta: self.delta.clone(),
            bottleneck: self.bottleneck,
            occupancy0: self.occupancy0.clone(),
            uncertainty: self.uncertainty,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.to_config())
            .expect("building config always serializes");
        text.push('\n');
        text
    }

    pub fn rooms(&self) -> usize {
        self.n
    }

    pub fn n_actions(&self) -> usize {
        self.n * self.n
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        from < self.n && to < self.n && self.adjacency[from * self.n + to]
    }

    /// Ascending destinations reachable in one move from `room`.
    pub fn neighbors(&self, room: usize) -> Result<&[usize], RoomOutOfRange> {
        self.neighbors.get(room).map(Vec::as_slice).ok_or(RoomOutOfRange {
            room,
            rooms: self.n,
        })
    }

    /// Largest out-degree over non-exit rooms.
    pub fn max_degree(&self) -> usize {
        (0..self.n)
            .filter(|&i| !self.is_exit[i])
            .map(|i| self.neighbors[i].len())
            .max()
            .unwrap_or(0)
    }

    pub fn is_exit(&self, room: usize) -> bool {
        self.is_exit.get(room).copied().unwrap_or(false)
    }

    pub fn exits(&self) -> &[usize] {
        &self.exits
    }

    pub fn fires(&self) -> &[usize] {
        &self.fires
    }

    pub fn degree0(&self) -> &[f64] {
        &self.degree0
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn bottleneck(&self) -> u32 {
        self.bottleneck
    }

    pub fn occupancy0(&self) -> &[u32] {
        &self.occupancy0
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn non_exit_rooms(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&i| !self.is_exit[i])
    }

    /// Hop count from every room to its nearest exit (`None` if cut off).
    pub fn exit_distances(&self) -> Vec<Option<usize>> {
        let mut reverse = vec![Vec::new(); self.n];
        for (i, row) in self.neighbors.iter().enumerate() {
            for &j in row {
                reverse[j].push(i);
            }
        }
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        for &e in &self.exits {
            dist[e] = Some(0);
            queue.push_back(e);
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap_or(0) + 1;
            for &u in &reverse[v] {
                if dist[u].is_none() {
                    dist[u] = Some(d);
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// Σ occupancy0[i]·dist(i): no schedule evacuates everyone in fewer steps,
    /// since each move advances one person by at most one hop.
    pub fn evacuation_lower_bound(&self) -> usize {
        self.exit_distances()
            .iter()
            .zip(&self.occupancy0)
            .map(|(d, &people)| d.unwrap_or(0) * people as usize)
            .sum()
    }

    /// Same building with a different action-ignore probability.
    pub fn with_uncertainty(&self, p: f64) -> Result<Self, ConfigError> {
        if !(0.0..1.0).contains(&p) {
            return Err(ConfigError::invalid("uncertainty", "must lie in [0, 1)"));
        }
        let mut g = self.clone();
        g.uncertainty = p;
        Ok(g)
    }
}

fn expand_edges(n: usize, edges: &[[usize; 2]], is_exit: &[bool]) -> Result<Vec<bool>, ConfigError> {
    let mut adj = vec![false; n * n];
    for &[a, b] in edges {
        if a >= n || b >= n {
            return Err(ConfigError::invalid("edges", format!("edge [{a}, {b}] out of range")));
        }
        if a == b {
            return Err(ConfigError::invalid("edges", format!("self-loop at room {a}")));
        }
        match (is_exit[a], is_exit[b]) {
            (true, true) => {
                return Err(ConfigError::invalid(
                    "edges",
                    format!("edge [{a}, {b}] joins two exits"),
                ))
            }
            (false, true) => adj[a * n + b] = true,
            (true, false) => adj[b * n + a] = true,
            (false, false) => {
                adj[a * n + b] = true;
                adj[b * n + a] = true;
            }
        }
    }
    Ok(adj)
}

fn check_matrix(n: usize, rows: &[Vec<u8>], is_exit: &[bool]) -> Result<Vec<bool>, ConfigError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(ConfigError::invalid("adjacency", format!("must be {n}x{n}")));
    }
    let mut adj = vec![false; n * n];
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            match v {
                0 => {}
                1 => adj[i * n + j] = true,
                _ => return Err(ConfigError::invalid("adjacency", "entries must be 0 or 1")),
            }
        }
        if row[i] != 0 {
            return Err(ConfigError::invalid("adjacency", "diagonal must be zero"));
        }
        if is_exit[i] && row.iter().any(|&v| v != 0) {
            return Err(ConfigError::invalid("adjacency", format!("exit row must be zero (room {i})")));
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if !is_exit[i] && !is_exit[j] && adj[i * n + j] != adj[j * n + i] {
                return Err(ConfigError::invalid(
                    "adjacency",
                    format!("rooms {i} and {j} must be connected in both directions"),
                ));
            }
            if is_exit[i] && is_exit[j] && (adj[i * n + j] || adj[j * n + i]) {
                return Err(ConfigError::invalid("adjacency", "exits cannot be joined"));
            }
        }
    }
    Ok(adj)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub const FIG2: &str = include_str!("../../../configs/fig2.json");
    pub const FIG12: &str = include_str!("../../../configs/fig12.json");
    pub const UIA91: &str = include_str!("../../../configs/uia91.json");

    pub fn fig2() -> BuildingGraph {
        load_config(FIG2).unwrap()
    }

    pub fn fig12() -> BuildingGraph {
        load_config(FIG12).unwrap()
    }

    pub fn uia91() -> BuildingGraph {
        load_config(UIA91).unwrap()
    }
}
