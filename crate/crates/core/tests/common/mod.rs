#![allow(dead_code)]

use upo_core::datagen::{PreferenceTriple, Provenance};
use upo_core::models::{BackboneDescriptor, Sequence};
use upo_core::objectives::TripleBatch;

pub fn toy_desc() -> BackboneDescriptor {
    BackboneDescriptor {
        vocab: 9,
        context: 12,
        embed_dim: 3,
        hidden_dim: 4,
        dropout_rate: 0.1,
    }
}

pub fn toy_batch() -> TripleBatch {
    let x = Sequence::prompt(vec![4, 5, 6]);
    let ys = [vec![7, 8, 3], vec![5, 3], vec![8, 4, 6, 3], vec![6], vec![7, 7, 3]];
    let triples = (0..4)
        .map(|i| {
            PreferenceTriple::new(
                format!("t{i}"),
                &x,
                &Sequence::response(ys[i].clone()),
                &Sequence::response(ys[i + 1].clone()),
                Provenance::Seed,
            )
            .unwrap()
        })
        .collect();
    TripleBatch::new(triples).unwrap()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub const TINY_CONFIG: &str = r#"{
  "seed_size": 120, "eval_prompts": 20, "noise_sample_size": 20,
  "backbone": {"vocab": 12, "embed_dim": 4, "hidden_dim": 8},
  "iteration": {"prompts_per_iter": 20, "policy_epochs": 1, "reward_epochs": 1,
    "estimator_epochs": 1, "retrain_epochs": 1, "sft_demos": 40, "sft_epochs": 1, "mc_passes": 3}
}"#;

pub fn tiny_config(root_seed: u64) -> upo_core::experiment::ExperimentConfig {
    let mut c: upo_core::experiment::ExperimentConfig = serde_json::from_str(TINY_CONFIG).unwrap();
    c.root_seed = root_seed;
    c
}
