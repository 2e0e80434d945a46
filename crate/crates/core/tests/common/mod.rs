#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::PathBuf;

use evacsim::nn::{Aggregation, Architecture, Head, Network, Target};
use evacsim::{BuildingConfig, BuildingGraph};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn shipped(name: &str) -> BuildingGraph {
    BuildingGraph::load(config_path(name)).unwrap()
}

/// Connected building with `rooms` rooms (at least 2) drawn from `seed`.
pub fn random_building(rooms: usize, seed: u64) -> BuildingConfig {
    assert!(rooms >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..rooms).collect();
    order.shuffle(&mut rng);
    let n_exits = rng.gen_range(1..=(rooms - 1).min(3));
    let exits: Vec<usize> = order[..n_exits].to_vec();
    let inner: Vec<usize> = order[n_exits..].to_vec();

    let mut edges = Vec::new();
    for i in 1..inner.len() {
        let j = rng.gen_range(0..i);
        edges.push([inner[i], inner[j]]);
    }
    for _ in 0..rooms / 2 {
        let a = inner[rng.gen_range(0..inner.len())];
        let b = inner[rng.gen_range(0..inner.len())];
        if a != b && !edges.contains(&[a, b]) && !edges.contains(&[b, a]) {
            edges.push([a, b]);
        }
    }
    for &e in &exits {
        let a = inner[rng.gen_range(0..inner.len())];
        edges.push([a, e]);
    }

    let bottleneck = rng.gen_range(1..=10);
    let mut degree0 = vec![0.0; rooms];
    let mut delta = vec![0.0; rooms];
    let mut occupancy0 = vec![0; rooms];
    for &i in &inner {
        degree0[i] = rng.gen_range(1..=4) as f64 * 0.5;
        delta[i] = rng.gen_range(0..=4) as f64 * 0.05;
        occupancy0[i] = rng.gen_range(0..=bottleneck);
    }
    let top = degree0.iter().copied().fold(0.0, f64::max);
    let fires: Vec<usize> = inner.iter().copied().filter(|&i| degree0[i] == top).take(2).collect();
    BuildingConfig {
        rooms,
        edges: Some(edges),
        adjacency: None,
        exits,
        fires,
        degree0,
        delta,
        bottleneck,
        occupancy0,
        uncertainty: rng.gen_range(0..5) as f64 * 0.1,
    }
}

/// Hops from every room to the nearest exit, by breadth-first search over
/// reversed edges.
pub fn bfs_exit_distance(g: &BuildingGraph) -> Vec<Option<usize>> {
    let n = g.rooms();
    let mut dist = vec![None; n];
    let mut queue = VecDeque::new();
    for &e in g.exits() {
        dist[e] = Some(0);
        queue.push_back(e);
    }
    while let Some(v) = queue.pop_front() {
        for u in 0..n {
            if dist[u].is_none() && g.has_edge(u, v) {
                dist[u] = Some(dist[v].unwrap() + 1);
                queue.push_back(u);
            }
        }
    }
    dist
}

pub fn random_arch<R: Rng>(rng: &mut R) -> Architecture {
    let depth = rng.gen_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(2..=7)).collect();
    let head = match rng.gen_range(0..3) {
        0 => Head::Linear,
        1 => Head::Dueling(Aggregation::Mean),
        _ => Head::Dueling(Aggregation::Max),
    };
    Architecture::new(rng.gen_range(1..=5), &hidden, rng.gen_range(2..=6), head)
}

fn param(net: &mut Network<f64>, layer: usize, p: usize) -> &mut f64 {
    let d = &mut net.layers_mut()[layer];
    let w = d.weight.len();
    if p < w {
        &mut d.weight.as_slice_mut().unwrap()[p]
    } else {
        &mut d.bias.as_slice_mut().unwrap()[p - w]
    }
}

/// Largest relative error between backprop and a fourth-order central
/// difference.
pub fn gradient_check(net: &Network<f64>, x: &Array2<f64>, target: Target<'_, f64>) -> f64 {
    let (_, grads) = net.loss_and_grad(x.view(), target).unwrap();
    let mut grad_net = net.clone();
    for (dst, src) in grad_net.layers_mut().iter_mut().zip(&grads.layers) {
        *dst = src.clone();
    }
    let h = 1e-4;
    let mut worst = 0.0_f64;
    let mut probe = net.clone();
    for l in 0..net.layers().len() {
        let params = net.layers()[l].weight.len() + net.layers()[l].bias.len();
        for p in 0..params {
            let orig = *param(&mut probe, l, p);
            let mut loss_at = |offset: f64| {
                *param(&mut probe, l, p) = orig + offset;
                probe.loss_and_grad(x.view(), target).unwrap().0
            };
            let numeric = (loss_at(-2.0 * h) - 8.0 * loss_at(-h) + 8.0 * loss_at(h) - loss_at(2.0 * h)) / (12.0 * h);
            *param(&mut probe, l, p) = orig;
            let analytic = *param(&mut grad_net, l, p);
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-7 {
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    worst
}

/// Inputs in [-1, 1) whose hidden pre-activations and, for a max-aggregated
/// head, top two advantages all stay at least `1e-3` away from a kink, so
/// the finite-difference stencil sees a smooth loss. `None` when no such
/// input turns up, e.g. a max head behind a hidden layer that is always dead.
pub fn smooth_batch<R: Rng>(net: &Network<f64>, batch: usize, rng: &mut R) -> Option<Array2<f64>> {
    let input = net.architecture().input;
    let mut x = Array2::zeros((batch, input));
    for mut row in x.rows_mut() {
        let draw = (0..1000)
            .map(|_| (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>())
            .find(|d| kink_distance(net, d) > 1e-3)?;
        row.assign(&ndarray::ArrayView1::from(&draw));
    }
    Some(x)
}

fn kink_distance(net: &Network<f64>, x: &[f64]) -> f64 {
    let arch = net.architecture();
    let mut nearest = f64::INFINITY;
    let mut h = ndarray::Array1::from(x.to_vec());
    for layer in &net.layers()[..arch.hidden.len()] {
        let z = h.dot(&layer.weight) + &layer.bias;
        nearest = z.iter().fold(nearest, |m, v| m.min(v.abs()));
        h = z.mapv(|v| v.max(0.0));
    }
    if arch.head == Head::Dueling(Aggregation::Max) {
        let (_, mut adv) = net.dueling_streams(x).unwrap();
        adv.sort_by(|a, b| b.total_cmp(a));
        nearest = nearest.min(adv[0] - adv[1]);
    }
    nearest
}
