mod common;

use std::fs;
use std::path::Path;

use common::tiny_config;
use upo_core::autodiff::{Checkpoint, CHECKPOINT_MAGIC};
use upo_core::evolve::{iter_dir, iteration_seed, load_state, run_iteration, save_state, IterationState};
use upo_core::experiment::{cmd_export_plots, cmd_init, cmd_iterate, Run, RUN_METRICS_FILE};
use upo_core::UpoError;

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn assert_same_state(a: &IterationState, b: &IterationState) {
    assert_eq!(a.iteration, b.iteration);
    assert_eq!(bits(a.policy.params().values()), bits(b.policy.params().values()));
    assert_eq!(bits(a.reference.params().values()), bits(b.reference.params().values()));
    assert_eq!(bits(a.reward.params().values()), bits(b.reward.params().values()));
    assert_eq!(bits(a.estimator.params().values()), bits(b.estimator.params().values()));
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.triple_id, y.triple_id);
        assert_eq!(
            bits(&[x.b_hat, x.s, x.p_weight, x.alpha]),
            bits(&[y.b_hat, y.s, y.p_weight, y.alpha])
        );
    }
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.root_seed, b.root_seed);
}

fn step(run: &Run, state: &IterationState) -> IterationState {
    let i = state.iteration + 1;
    let config = &run.config.iteration;
    run_iteration(
        state,
        &run.prompts(i),
        &run.context(),
        config,
        iteration_seed(run.config.root_seed, i),
    )
    .unwrap()
}

#[test]
fn state_round_trip_is_bitwise_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    cmd_init(&tiny_config(3), dir.path()).unwrap();
    let run = Run::open(dir.path()).unwrap();
    let s0 = load_state(dir.path(), 0).unwrap();
    let s1 = step(&run, &s0);
    save_state(dir.path(), &s1).unwrap();
    let loaded = load_state(dir.path(), 1).unwrap();
    assert_same_state(&s1, &loaded);
    let from_memory = step(&run, &s1);
    let from_disk = step(&run, &loaded);
    assert_same_state(&from_memory, &from_disk);
}

#[test]
fn checkpoint_corruption_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    cmd_init(&tiny_config(4), dir.path()).unwrap();
    let path = iter_dir(dir.path(), 0).join("reward.ckpt");
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ck.to_bytes().unwrap(), bytes);

    for cut in [0, 7, 15, 40, bytes.len() - 1] {
        let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, UpoError::CorruptCheckpoint(_)), "cut {cut}: {err}");
    }
    let mut newer = bytes.clone();
    newer[7] = b'2';
    assert!(matches!(
        Checkpoint::from_bytes(&newer),
        Err(UpoError::CheckpointVersion { .. })
    ));
    let mut garbage = bytes.clone();
    garbage[..8].copy_from_slice(b"NOTACKPT");
    assert!(matches!(
        Checkpoint::from_bytes(&garbage),
        Err(UpoError::CorruptCheckpoint(_))
    ));

    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_state(dir.path(), 0).is_err());
    let err = cmd_iterate(dir.path(), 1).unwrap_err();
    assert!(err.to_string().contains("reward.ckpt"), "{err}");
    assert!(!iter_dir(dir.path(), 1).exists());
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap()
}

#[test]
fn resume_matches_uninterrupted_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let config = tiny_config(5);
    cmd_init(&config, a.path()).unwrap();
    cmd_iterate(a.path(), 2).unwrap();
    cmd_init(&config, b.path()).unwrap();
    cmd_iterate(b.path(), 1).unwrap();
    cmd_iterate(b.path(), 1).unwrap();
    for f in [
        "metrics.json",
        "policy.ckpt",
        "reward.ckpt",
        "estimator.ckpt",
        "data.jsonl",
        "uncertainty.csv",
    ] {
        let rel = format!("iter_2/{f}");
        assert_eq!(read(a.path(), &rel), read(b.path(), &rel), "{rel}");
    }
    assert_eq!(read(a.path(), RUN_METRICS_FILE), read(b.path(), RUN_METRICS_FILE));
}

#[test]
fn init_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(6);
    cmd_init(&config, dir.path()).unwrap();
    cmd_iterate(dir.path(), 1).unwrap();
    let first = read(dir.path(), "iter_0/metrics.json");
    cmd_init(&config, dir.path()).unwrap();
    assert_eq!(first, read(dir.path(), "iter_0/metrics.json"));
    assert!(!iter_dir(dir.path(), 1).exists());
    assert_eq!(cmd_iterate(dir.path(), 0).unwrap().len(), 0);
}

#[test]
fn plot_export_matches_metrics() {
    let dir = tempfile::tempdir().unwrap();
    cmd_init(&tiny_config(7), dir.path()).unwrap();
    cmd_iterate(dir.path(), 3).unwrap();
    let path = cmd_export_plots(dir.path()).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let mut win = Vec::new();
    for row in reader.records() {
        let row = row.unwrap();
        if &row[3] == "win_rate_vs_sft" {
            win.push((row[1].parse::<usize>().unwrap(), row[4].parse::<f64>().unwrap()));
        }
    }
    assert_eq!(win.len(), 4);
    for (i, v) in win {
        let text = fs::read_to_string(iter_dir(dir.path(), i).join("metrics.json")).unwrap();
        let m: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(m["win_rate_vs_sft"].as_f64().unwrap().to_bits(), v.to_bits());
    }
}
