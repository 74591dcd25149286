use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpoError};
use crate::seed;

/// Sizes of the dropout sites a model exposes, indexed by site id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropoutLayout {
    sites: Vec<usize>,
}

impl DropoutLayout {
    pub fn new(sites: Vec<usize>) -> Self {
        Self { sites }
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn total_len(&self) -> usize {
        self.sites.iter().sum()
    }
}

/// Inverted-dropout mask: every entry is either `0` or `1 / (1 - rate)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    scales: Vec<f64>,
    rate: f64,
    seed: u64,
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(UpoError::invalid(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

impl DropoutMask {
    /// Draws a mask of `len` entries; reproducible from `(seed, len, rate)`.
    pub fn sample(len: usize, rate: f64, seed: u64) -> Result<Self> {
        check_rate(rate)?;
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mut rng = seed::rng(seed, "dropout-mask", &[len as u64]);
        let scales = (0..len)
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        Ok(Self { scales, rate, seed })
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kept_fraction(&self) -> f64 {
        if self.scales.is_empty() {
            return 1.0;
        }
        self.scales.iter().filter(|&&s| s != 0.0).count() as f64 / self.scales.len() as f64
    }
}

/// One mask per dropout site: a single sampled weight configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    masks: Vec<DropoutMask>,
}

impl MaskSet {
    pub fn sample(layout: &DropoutLayout, rate: f64, seed: u64) -> Result<Self> {
        let masks = layout
            .sites()
            .iter()
            .enumerate()
            .map(|(site, &len)| DropoutMask::sample(len, rate, seed::derive(seed, "site", &[site as u64])))
            .collect::<Result<_>>()?;
        Ok(Self { masks })
    }

    pub fn site(&self, site: usize) -> Option<&DropoutMask> {
        self.masks.get(site)
    }

    pub fn masks(&self) -> &[DropoutMask] {
        &self.masks
    }
}

/// Samples `count` independent mask sets for `layout`.
pub fn sample_dropout_masks(layout: &DropoutLayout, rate: f64, seed: u64, count: usize) -> Result<Vec<MaskSet>> {
    check_rate(rate)?;
    if count == 0 {
        return Err(UpoError::invalid("mask count must be at least 1"));
    }
    (0..count)
        .map(|t| MaskSet::sample(layout, rate, seed::derive(seed, "mc-pass", &[t as u64])))
        .collect()
}
