use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::IterationConfig;
use crate::error::{Result, UpoError};
use crate::objectives::TripleBatch;
use crate::seed;
use crate::uncertainty::UncertaintyRecord;

/// Weighted sampling without replacement (exponential keys). Items with zero
/// weight are never drawn; if fewer than `k` are available all are returned.
pub fn weighted_sample(weights: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random();
            (i, w, u)
        })
        .filter(|&(_, w, _)| w > 0.0 && w.is_finite())
        .map(|(i, w, u)| ((1.0 - u).ln() / w, i))
        .collect();
    if keyed.len() < k {
        log::warn!(
            "requested {k} items but only {} have positive weight; taking all",
            keyed.len()
        );
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Uniform sampling without replacement.
pub fn uniform_sample(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if k > n {
        log::warn!("requested {k} items from a population of {n}; taking all");
    }
    rand::seq::index::sample(rng, n, k.min(n)).into_vec()
}

/// Training set of one round and where each part came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Selected triples with smoothing weights attached.
    pub batch: TripleBatch,
    pub easy: Vec<usize>,
    pub hard: Vec<usize>,
    pub seed_mix: Vec<usize>,
}

impl Selection {
    /// Number of selected generated (non-seed) triples.
    pub fn generated_len(&self) -> usize {
        self.easy.len() + self.hard.len()
    }
}

/// Easy pairs drawn by sampling weight, hard pairs drawn by one minus it from
/// the rest, plus a uniform draw from the seed pool. Generated triples carry
/// their record's smoothing weight; seed triples carry zero.
pub fn select_data(
    pairs: &TripleBatch,
    records: &[UncertaintyRecord],
    seed_pool: &TripleBatch,
    config: &IterationConfig,
    seed: u64,
) -> Result<Selection> {
    if records.len() != pairs.len() || records.iter().zip(&pairs.triples).any(|(r, t)| r.triple_id != t.id) {
        return Err(UpoError::invalid(
            "uncertainty records do not match the candidate pairs",
        ));
    }
    if let Some(r) = records.iter().find(|r| !(0.0..=1.0).contains(&r.p_weight)) {
        return Err(UpoError::invalid(format!(
            "sampling weight {} outside [0, 1]",
            r.p_weight
        )));
    }
    let n = pairs.len();
    let (easy, hard) = if config.use_estimator {
        let k_easy = (config.easy_fraction * n as f64).round() as usize;
        let k_hard = (config.hard_fraction * n as f64).round() as usize;
        let p: Vec<f64> = records.iter().map(|r| r.p_weight).collect();
        let easy = weighted_sample(&p, k_easy, &mut seed::rng(seed, "select-easy", &[]));
        let taken: HashSet<usize> = easy.iter().copied().collect();
        let inv: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(i, w)| if taken.contains(&i) { 0.0 } else { 1.0 - w })
            .collect();
        let hard = weighted_sample(&inv, k_hard, &mut seed::rng(seed, "select-hard", &[]));
        (easy, hard)
    } else {
        ((0..n).collect(), Vec::new())
    };
    let k_seed = (config.seed_mix * seed_pool.len() as f64).round() as usize;
    let mut seed_mix = uniform_sample(seed_pool.len(), k_seed, &mut seed::rng(seed, "select-seed", &[]));
    seed_mix.sort_unstable();

    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    let mut alphas = Vec::new();
    let mut generated: Vec<usize> = easy.iter().chain(&hard).copied().collect();
    generated.sort_unstable();
    for i in generated {
        if seen.insert(pairs.triples[i].id.clone()) {
            triples.push(pairs.triples[i].clone());
            alphas.push(if config.use_estimator && config.use_alpha {
                records[i].alpha
            } else {
                0.0
            });
        }
    }
    for &i in &seed_mix {
        if seen.insert(seed_pool.triples[i].id.clone()) {
            triples.push(seed_pool.triples[i].clone());
            alphas.push(0.0);
        }
    }
    let batch = TripleBatch::new(triples)?.with_alphas(alphas)?;
    Ok(Selection {
        batch,
        easy,
        hard,
        seed_mix,
    })
}
