mod common;

use std::fs;

use common::tiny_config;
use upo_core::datagen::{label_seed_data, noise_rate};
use upo_core::evolve::{iter_dir, load_state, weighted_sample};
use upo_core::experiment::{cmd_ablate, cmd_init, cmd_iterate, ExperimentConfig, Run, Variant};
use upo_core::models::render_template;
use upo_core::seed;
use upo_core::uncertainty::{build_records, read_records_csv, AlphaMode, Scored, WeightScope};

#[test]
fn init_models_beat_chance_on_clean_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::default();
    cmd_init(&config, dir.path()).unwrap();
    let run = Run::open(dir.path()).unwrap();
    let state = load_state(dir.path(), 0).unwrap();
    let clean = label_seed_data(&run.world, 400, 0.0, 991).unwrap();
    let limit = state.estimator.descriptor().context;
    let (mut rm_hits, mut est_hits) = (0, 0);
    for t in &clean.triples {
        let (x, w, l) = (t.x(), t.y_w(), t.y_l());
        if state.reward.score(&x, &w).unwrap() > state.reward.score(&x, &l).unwrap() {
            rm_hits += 1;
        }
        if state
            .estimator
            .prob(&render_template(&x, &w, &l, limit).unwrap(), None)
            .unwrap()
            > 0.5
        {
            est_hits += 1;
        }
        if state
            .estimator
            .prob(&render_template(&x, &l, &w, limit).unwrap(), None)
            .unwrap()
            < 0.5
        {
            est_hits += 1;
        }
    }
    let rm_acc = rm_hits as f64 / 400.0;
    let est_acc = est_hits as f64 / 800.0;
    assert!(rm_acc > 0.5, "reward accuracy {rm_acc}");
    assert!(est_acc > 0.5, "estimator accuracy {est_acc}");

    cmd_iterate(dir.path(), 1).unwrap();
    let full = load_state(dir.path(), 1).unwrap().metrics;
    let ablated = cmd_ablate(dir.path(), Variant::NoEstimator).unwrap();
    assert!(
        ablated.noise_rate_selected.unwrap() >= full.noise_rate_selected.unwrap(),
        "{ablated:?} vs {full:?}"
    );
}

#[test]
fn ablations_record_their_switch() {
    let dir = tempfile::tempdir().unwrap();
    cmd_init(&tiny_config(8), dir.path()).unwrap();
    let m = cmd_ablate(dir.path(), Variant::NoNll).unwrap();
    assert_eq!(m.config.lambda, 0.0);
    cmd_ablate(dir.path(), Variant::NoAlpha).unwrap();
    let path = iter_dir(&dir.path().join("ablate_no_alpha"), 1).join("uncertainty.csv");
    let records = read_records_csv(&path).unwrap();
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r.alpha == 0.0));
    let rows = fs::read_to_string(dir.path().join("ablations.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3, "{rows}");
}

#[test]
fn oracle_estimator_selects_no_noise() {
    let dir = tempfile::tempdir().unwrap();
    cmd_init(&tiny_config(9), dir.path()).unwrap();
    let run = Run::open(dir.path()).unwrap();
    let pool = &run.seed_pool.triples;
    let items: Vec<Scored> = pool
        .iter()
        .map(|t| Scored {
            id: t.id.clone(),
            group: String::new(),
            b_hat: 0.0,
            eligible: run.world.agrees(t).unwrap(),
        })
        .collect();
    let records = build_records(&items, 1.0, WeightScope::Dataset, AlphaMode::Smoothing).unwrap();
    let p: Vec<f64> = records.iter().map(|r| r.p_weight).collect();
    let picked: Vec<_> = weighted_sample(&p, 40, &mut seed::rng(1, "oracle", &[]))
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    assert_eq!(picked.len(), 40);
    assert_eq!(noise_rate(&picked, &run.world).unwrap(), 0.0);
    assert!(noise_rate(pool, &run.world).unwrap() > 0.1);
}
