//! Action-importance mask built from a one-step simulation of the
//! pretraining instance. Kept actions carry 0, dropped actions a large
//! negative constant that is added to the network output.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::env::encode_action;
use crate::graph::BuildingGraph;
use crate::pretrain::{pretrain_reward, PretrainEnv, PretrainError};

/// Additive penalty for dropped actions.
pub const MASKED: f64 = -9999.0;

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("k = {k} out of range 1..={rooms}")]
    KOutOfRange { k: usize, rooms: usize },
    #[error("room {room} out of range for {rooms} rooms")]
    RoomOutOfRange { room: usize, rooms: usize },
    #[error("vector has {got} entries, mask has {expected}")]
    Length { expected: usize, got: usize },
    #[error("mask file: {0}")]
    Format(String),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How one-step rewards are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimMode {
    /// Evaluate the reward function directly.
    #[default]
    Analytic,
    /// Place a walker in the room and step a pretraining environment.
    Replay,
}

fn check_k(graph: &BuildingGraph, k: usize) -> Result<(), ReductionError> {
    let rooms = graph.rooms();
    if k == 0 || k > rooms {
        return Err(ReductionError::KOutOfRange { k, rooms });
    }
    Ok(())
}

fn rewards_from(graph: &BuildingGraph, room: usize, mode: SimMode) -> Result<Vec<f64>, ReductionError> {
    let n = graph.rooms();
    match mode {
        SimMode::Analytic => Ok((0..n).map(|d| pretrain_reward(graph, room, d).0).collect()),
        SimMode::Replay => {
            if graph.is_exit(room) {
                // a walker never stands in an exit; every move from it is illegal
                return Ok((0..n).map(|d| pretrain_reward(graph, room, d).0).collect());
            }
            let mut env = PretrainEnv::new(std::sync::Arc::new(graph.clone()))?;
            (0..n)
                .map(|d| {
                    env.set_position(room)?;
                    Ok(env.step(d)?.reward)
                })
                .collect()
        }
    }
}

/// The `k` destinations with the highest one-step reward from `room`, best
/// first, ties to the lower index.
pub fn one_step_sim(graph: &BuildingGraph, room: usize, k: usize) -> Result<Vec<usize>, ReductionError> {
    one_step_sim_with(graph, room, k, SimMode::Analytic)
}

pub fn one_step_sim_with(
    graph: &BuildingGraph,
    room: usize,
    k: usize,
    mode: SimMode,
) -> Result<Vec<usize>, ReductionError> {
    check_k(graph, k)?;
    let rooms = graph.rooms();
    if room >= rooms {
        return Err(ReductionError::RoomOutOfRange { room, rooms });
    }
    let rewards = rewards_from(graph, room, mode)?;
    let mut order: Vec<usize> = (0..rooms).collect();
    order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionImportance {
    mask: Vec<f64>,
    k: usize,
    rooms: usize,
}

impl ActionImportance {
    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rooms(&self) -> usize {
        self.rooms
    }

    pub fn is_kept(&self, action: usize) -> bool {
        self.mask[action] == 0.0
    }

    pub fn retained(&self) -> usize {
        self.mask.iter().filter(|&&v| v == 0.0).count()
    }

    /// Kept action indices, ascending.
    pub fn kept_actions(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&a| self.is_kept(a)).collect()
    }

    /// Fraction of the action space removed.
    pub fn reduction(&self) -> f64 {
        1.0 - self.retained() as f64 / self.mask.len() as f64
    }

    /// One CSV value per line, preceded by a comment describing the indexing.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# a = dest*n + source; n = {}; k = {}", self.rooms, self.k)?;
        writeln!(out, "mask")?;
        for v in &self.mask {
            writeln!(out, "{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, ReductionError> {
        let mut header = None;
        let mut mask = Vec::new();
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                header = Some(rest.to_string());
                continue;
            }
            if line.is_empty() || line == "mask" {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| ReductionError::Format(format!("bad value {line:?}")))?;
            if v != 0.0 && v != MASKED {
                return Err(ReductionError::Format(format!("entry {v} is neither 0 nor {MASKED}")));
            }
            mask.push(v);
        }
        let rooms = (mask.len() as f64).sqrt() as usize;
        if rooms * rooms != mask.len() || rooms == 0 {
            return Err(ReductionError::Format(format!("{} entries is not a square count", mask.len())));
        }
        let k = header
            .as_deref()
            .and_then(|h| h.split("k =").nth(1))
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or_else(|| mask.iter().filter(|&&v| v == 0.0).count() / rooms);
        Ok(ActionImportance { mask, k, rooms })
    }
}

/// Keep the `k` best destinations of every source room.
pub fn build_importance(graph: &BuildingGraph, k: usize) -> Result<ActionImportance, ReductionError> {
    build_importance_with(graph, k, SimMode::Analytic)
}

pub fn build_importance_with(
    graph: &BuildingGraph,
    k: usize,
    mode: SimMode,
) -> Result<ActionImportance, ReductionError> {
    check_k(graph, k)?;
    let n = graph.rooms();
    let mut mask = vec![MASKED; n * n];
    for source in 0..n {
        for dest in one_step_sim_with(graph, source, k, mode)? {
            mask[encode_action(source, dest, n)] = 0.0;
        }
    }
    Ok(ActionImportance { mask, k, rooms: n })
}

/// Element-wise sum of network output and mask.
pub fn apply_importance(qvals: &[f64], ai: &ActionImportance) -> Result<Vec<f64>, ReductionError> {
    if qvals.len() != ai.mask.len() {
        return Err(ReductionError::Length {
            expected: ai.mask.len(),
            got: qvals.len(),
        });
    }
    Ok(qvals.iter().zip(&ai.mask).map(|(q, m)| q + m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::{fig12, fig2, uia91};

    #[test]
    fn fig2_rankings() {
        let g = fig2();
        assert_eq!(one_step_sim(&g, 2, 2).unwrap(), vec![4, 0]);
        assert_eq!(one_step_sim(&g, 0, 3).unwrap(), vec![1, 2, 3]);
        assert_eq!(one_step_sim(&g, 2, 5).unwrap(), vec![4, 0, 1, 2, 3]);
        assert!(matches!(
            one_step_sim(&g, 0, 0),
            Err(ReductionError::KOutOfRange { k: 0, rooms: 5 })
        ));
        assert!(one_step_sim(&g, 0, 6).is_err());
        assert!(one_step_sim(&g, 5, 1).is_err());
    }

    #[test]
    fn fig2_mask() {
        let ai = build_importance(&fig2(), 2).unwrap();
        assert_eq!(ai.retained(), 10);
        assert!((ai.reduction() - 0.6).abs() < 1e-12);
        assert!(ai.is_kept(22));
        let full = build_importance(&fig2(), 5).unwrap();
        assert!(full.mask().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn large_building_mask() {
        let g = uia91();
        let ai = build_importance(&g, g.max_degree()).unwrap();
        assert_eq!(ai.k(), 9);
        assert_eq!(ai.retained(), 819);
        assert_eq!(ai.mask().len(), 8281);
        assert_eq!(format!("{:.1}", ai.reduction() * 100.0), "90.1");
    }

    #[test]
    fn replay_agrees_with_analytic() {
        for g in [fig2(), fig12()] {
            for k in 1..=g.rooms() {
                assert_eq!(
                    build_importance_with(&g, k, SimMode::Replay).unwrap(),
                    build_importance(&g, k).unwrap()
                );
            }
        }
    }

    #[test]
    fn exit_moves_survive() {
        for g in [fig2(), fig12(), uia91()] {
            let ai = build_importance(&g, g.max_degree()).unwrap();
            for s in g.non_exit_rooms() {
                for &e in g.exits() {
                    if g.has_edge(s, e) {
                        assert!(ai.is_kept(encode_action(s, e, g.rooms())));
                    }
                }
            }
        }
    }

    #[test]
    fn apply_adds() {
        let ai = ActionImportance {
            mask: vec![0.0, MASKED, 0.0, 0.0],
            k: 1,
            rooms: 2,
        };
        assert_eq!(
            apply_importance(&[5.0, -3.0, 2.0, 0.0], &ai).unwrap(),
            vec![5.0, -10002.0, 2.0, 0.0]
        );
        assert!(matches!(
            apply_importance(&[1.0], &ai),
            Err(ReductionError::Length { expected: 4, got: 1 })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let ai = build_importance(&fig2(), 2).unwrap();
        let mut buf = Vec::new();
        ai.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# a = dest*n + source; n = 5; k = 2\nmask\n"));
        assert_eq!(ActionImportance::read_csv(buf.as_slice()).unwrap(), ai);
        assert!(ActionImportance::read_csv(&b"mask\n0\n1\n"[..]).is_err());
    }
}
