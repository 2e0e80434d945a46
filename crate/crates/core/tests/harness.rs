mod common;

use std::fs;
use std::path::Path;

use common::config_path;
use evacsim::agents::{AgentConfig, Variant};
use evacsim::harness::{checkpoint_name, compare, run_experiment, AgentKind, ExperimentSpec, MaskChoice, TRAILING};
use evacsim::nn::{load_checkpoint, Network};

fn tiny_learner(out: &Path) -> ExperimentSpec {
    ExperimentSpec {
        seeds: vec![3, 4],
        episodes: 6,
        out: Some(out.to_path_buf()),
        mask: MaskChoice::Auto,
        learner: AgentConfig {
            hidden: vec![16, 16],
            step_cap: 150,
            ..AgentConfig::with_variant(Variant::Dueling)
        },
        ..ExperimentSpec::new(
            config_path("fig2.json"),
            AgentKind::Learner {
                variant: Variant::Dueling,
                pretrain: true,
            },
        )
    }
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn summary_recomputes_from_episode_csv() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        seeds: vec![0, 1, 2],
        episodes: 130,
        out: Some(dir.path().to_path_buf()),
        ..ExperimentSpec::new(config_path("fig2.json"), AgentKind::Random)
    };
    let result = run_experiment(&spec).unwrap();
    let rows = read_rows(&dir.path().join("episodes.csv"));
    assert_eq!(rows.len(), 390);

    let steps = |seed: u64| -> Vec<usize> {
        rows.iter()
            .filter(|r| r[0].parse::<u64>().unwrap() == seed)
            .map(|r| r[2].parse().unwrap())
            .collect()
    };
    let all: Vec<usize> = (0..3).flat_map(steps).collect();
    let mean = all.iter().sum::<usize>() as f64 / all.len() as f64;
    assert_eq!(result.summary.mean_steps, mean);
    assert_eq!(result.summary.min_steps, *all.iter().min().unwrap());

    for s in &result.summary.per_seed {
        let own = steps(s.seed);
        assert_eq!(s.episodes, own.len());
        assert_eq!(s.mean_steps, own.iter().sum::<usize>() as f64 / own.len() as f64);
        assert_eq!(s.min_steps, *own.iter().min().unwrap());
        let tail = &own[own.len() - TRAILING..];
        assert_eq!(s.trailing_mean, tail.iter().sum::<usize>() as f64 / TRAILING as f64);
    }

    let summary = read_rows(&dir.path().join("summary.csv"));
    assert_eq!(summary.len(), 4);
    assert_eq!(&summary[3][1], "all");
    assert_eq!(summary[3][3].parse::<f64>().unwrap(), mean);
}

#[test]
fn learner_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&tiny_learner(a.path())).unwrap();
    let rb = run_experiment(&tiny_learner(b.path())).unwrap();
    for r in &ra.runs {
        assert!(r.failure.is_none(), "{:?}", r.failure);
        assert!(r.pretrain.is_some());
    }
    for file in ["episodes.csv", "summary.csv", "mask_stats.csv", "mask.csv"] {
        let x = fs::read(a.path().join(file)).unwrap();
        let y = fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
    assert_eq!(ra.summary.mean_steps, rb.summary.mean_steps);
    for seed in [3, 4] {
        let name = checkpoint_name(seed);
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
        let net: Network<f32> = load_checkpoint(a.path().join(&name)).unwrap();
        assert_eq!(net.architecture().hidden, vec![16, 16]);
        assert_eq!(net.outputs(), 25);
    }
    let stats = fs::read_to_string(a.path().join("mask_stats.csv")).unwrap();
    assert_eq!(stats.lines().nth(1), Some("3,15,25,40.0"));
}

#[test]
fn comparison_aligns_columns() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny_learner(dir.path());
    let kinds = [
        AgentKind::Random,
        AgentKind::Learner {
            variant: Variant::Dqn,
            pretrain: false,
        },
    ];
    let cmp = compare(&kinds, &base).unwrap();
    assert!(cmp.summary("random").is_some());
    assert!(cmp.summary("dqn").is_some());

    let mut reader = csv::Reader::from_path(dir.path().join("comparison.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert!(header.iter().any(|h| h.contains("random")));
    assert!(header.iter().any(|h| h.contains("dqn")));
    assert_eq!(reader.records().count(), 2 * 6);
    assert!(dir.path().join("random").join("episodes.csv").exists());
    assert!(dir.path().join("dqn").join("summary.csv").exists());
}
