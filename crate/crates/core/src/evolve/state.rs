use std::fs;
use std::path::{Path, PathBuf};

use super::{IterationMetrics, IterationState};
use crate::autodiff::Checkpoint;
use crate::datagen::{read_jsonl, write_jsonl};
use crate::error::{Result, UpoError};
use crate::models::{EstimatorModel, PolicyModel, RewardModel};
use crate::uncertainty::{read_records_csv, write_records_csv};

pub const METRICS_FILE: &str = "metrics.json";
pub const SFT_CHECKPOINT: &str = "sft.ckpt";

pub fn iter_dir(run_dir: &Path, i: usize) -> PathBuf {
    run_dir.join(format!("iter_{i}"))
}

/// Writes `iter_<i>/` under `run_dir`. The reference policy is not stored; it
/// is the previous round's policy or `sft.ckpt`.
pub fn save_state(run_dir: &Path, state: &IterationState) -> Result<()> {
    let dir = iter_dir(run_dir, state.iteration);
    fs::create_dir_all(&dir).map_err(|e| UpoError::io(&dir, e))?;
    let (i, s) = (state.iteration, state.root_seed);
    state.policy.to_checkpoint(i, s)?.save(&dir.join("policy.ckpt"))?;
    state.reward.to_checkpoint(i, s)?.save(&dir.join("reward.ckpt"))?;
    state.estimator.to_checkpoint(i, s)?.save(&dir.join("estimator.ckpt"))?;
    write_jsonl(&dir.join("data.jsonl"), &state.dataset)?;
    let csv_path = dir.join("uncertainty.csv");
    if state.records.is_empty() {
        fs::write(&csv_path, "triple_id,b_hat,s,p_weight,alpha\n").map_err(|e| UpoError::io(&csv_path, e))?;
    } else {
        write_records_csv(&csv_path, &state.records)?;
    }
    let metrics_path = dir.join(METRICS_FILE);
    let mut json = serde_json::to_string_pretty(&state.metrics)?;
    json.push('\n');
    fs::write(&metrics_path, json).map_err(|e| UpoError::io(&metrics_path, e))
}

fn load_checkpoint(path: &Path, iteration: usize) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if ck.iteration != iteration {
        return Err(UpoError::CorruptCheckpoint(format!(
            "{} records iteration {} but lives in iter_{iteration}",
            path.display(),
            ck.iteration
        )));
    }
    Ok(ck)
}

/// Reads `iter_<i>/` back.
pub fn load_state(run_dir: &Path, i: usize) -> Result<IterationState> {
    let dir = iter_dir(run_dir, i);
    if !dir.is_dir() {
        return Err(UpoError::io(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "iteration directory not found"),
        ));
    }
    let policy_ck = load_checkpoint(&dir.join("policy.ckpt"), i)?;
    let policy = PolicyModel::from_checkpoint(&policy_ck)?;
    let reward = RewardModel::from_checkpoint(&load_checkpoint(&dir.join("reward.ckpt"), i)?)?;
    let estimator = EstimatorModel::from_checkpoint(&load_checkpoint(&dir.join("estimator.ckpt"), i)?)?;
    let reference = if i == 0 {
        PolicyModel::from_checkpoint(&Checkpoint::load(&run_dir.join(SFT_CHECKPOINT))?)?
    } else {
        PolicyModel::from_checkpoint(&load_checkpoint(&iter_dir(run_dir, i - 1).join("policy.ckpt"), i - 1)?)?
    };
    let dataset = read_jsonl(&dir.join("data.jsonl"))?;
    let records = read_records_csv(&dir.join("uncertainty.csv"))?;
    let metrics_path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&metrics_path).map_err(|e| UpoError::io(&metrics_path, e))?;
    let metrics: IterationMetrics = serde_json::from_str(&text)?;
    if metrics.iteration != i {
        return Err(UpoError::CorruptCheckpoint(format!(
            "{} records iteration {}",
            metrics_path.display(),
            metrics.iteration
        )));
    }
    Ok(IterationState {
        iteration: i,
        policy,
        reference,
        reward,
        estimator,
        dataset,
        records,
        root_seed: policy_ck.seed,
        metrics,
    })
}
