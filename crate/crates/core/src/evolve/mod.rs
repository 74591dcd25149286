//! The self-evolution loop: initial fine-tuning, then rounds of generation,
//! rewarding, uncertainty estimation, selection and retraining.

mod config;
mod eval;
mod select;
mod state;
mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::IterationConfig;
pub use eval::{evaluate, EvalResult, OracleResponder, Responder};
pub use select::{select_data, uniform_sample, weighted_sample, Selection};
pub use state::{iter_dir, load_state, save_state, METRICS_FILE};
pub use train::{step_masks, train, StepInfo, TrainSpec, Trainable};

use crate::datagen::{build_pairs, noise_rate, rank_responses, PreferenceTriple, Provenance, SyntheticWorld};
use crate::error::{Result, UpoError};
use crate::models::{
    render_template, BackboneDescriptor, EstimatorModel, PolicyModel, RewardModel, SamplingOptions, Sequence,
};
use crate::objectives::{
    dpo_loss, estimator_loss, policy_loss, reward_loss, sft_loss, LabeledTemplate, PolicyLossParams, ReferenceLogProbs,
    TripleBatch,
};
use crate::seed;
use crate::uncertainty::{build_records, information_gain, mc_predict, Scored, UncertaintyRecord};

/// Per-round summary written to `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub win_rate_vs_sft: f64,
    pub mean_true_utility: f64,
    pub sft_true_utility: f64,
    /// Oracle noise rate of the selected generated pairs.
    pub noise_rate_selected: Option<f64>,
    /// Oracle noise rate of the whole candidate pool.
    pub noise_rate_pool: Option<f64>,
    pub mean_b_hat: Option<f64>,
    pub pool_size: usize,
    pub selected_generated: usize,
    pub selected_seed: usize,
    pub degenerate_prompts: usize,
    pub loss_final: f64,
    pub loss_curve: Vec<f64>,
    pub reward_loss_curve: Vec<f64>,
    pub estimator_loss_curve: Vec<f64>,
    pub config: IterationConfig,
}

/// Everything produced by one round.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationState {
    pub iteration: usize,
    pub policy: PolicyModel,
    /// Frozen snapshot the policy was trained against.
    pub reference: PolicyModel,
    pub reward: RewardModel,
    pub estimator: EstimatorModel,
    /// Training set of this round.
    pub dataset: Vec<PreferenceTriple>,
    pub records: Vec<UncertaintyRecord>,
    pub root_seed: u64,
    pub metrics: IterationMetrics,
}

/// Fixed inputs shared by every round.
pub struct RunContext<'a> {
    pub world: &'a SyntheticWorld,
    pub sft: &'a PolicyModel,
    pub seed_pool: &'a TripleBatch,
    pub eval_prompts: &'a [Sequence],
}

/// Seed of round `i` under `root`.
pub fn iteration_seed(root: u64, i: usize) -> u64 {
    seed::derive(root, "iteration", &[i as u64])
}

/// Starting policy and win-rate baseline: maximum likelihood on writer
/// demonstrations from `world`.
pub fn sft_policy(
    world: &SyntheticWorld,
    desc: BackboneDescriptor,
    config: &IterationConfig,
    root: u64,
) -> Result<PolicyModel> {
    let mut policy = PolicyModel::init(desc, seed::derive(root, "sft", &[]), config.sft_head_scale)?;
    if config.sft_demos == 0 || config.sft_epochs == 0 {
        return Ok(policy);
    }
    let demo_seed = seed::derive(root, "sft-demos", &[]);
    let demos: Vec<(Sequence, Sequence)> = world
        .sample_prompts(config.sft_demos, demo_seed, "prompts")
        .into_iter()
        .enumerate()
        .map(|(j, x)| {
            let y = world.demo_response(&x, &mut seed::rng(demo_seed, "response", &[j as u64]));
            (x, y)
        })
        .collect();
    let spec = TrainSpec {
        model: "sft",
        epochs: config.sft_epochs,
        lr: config.sft_lr,
        warmup_fraction: config.warmup_fraction,
        batch_size: config.batch_size,
        weight_decay: 0.0,
        seed: seed::derive(root, "train-sft", &[]),
    };
    train(&mut policy, demos.len(), &spec, |m, idx, _| {
        let batch: Vec<(Sequence, Sequence)> = idx.iter().map(|&i| demos[i].clone()).collect();
        sft_loss(m, &batch)
    })?;
    Ok(policy)
}

fn estimator_examples(triples: &[PreferenceTriple], limit: usize) -> Result<Vec<LabeledTemplate>> {
    let mut out = Vec::with_capacity(2 * triples.len());
    for t in triples {
        let (x, w, l) = (t.x(), t.y_w(), t.y_l());
        out.push(LabeledTemplate {
            template: render_template(&x, &w, &l, limit)?,
            label: true,
        });
        out.push(LabeledTemplate {
            template: render_template(&x, &l, &w, limit)?,
            label: false,
        });
    }
    Ok(out)
}

fn train_reward(
    rm: &mut RewardModel,
    data: &TripleBatch,
    epochs: usize,
    lr: f64,
    config: &IterationConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let spec = TrainSpec {
        model: "reward",
        epochs,
        lr,
        warmup_fraction: config.warmup_fraction,
        batch_size: config.batch_size,
        weight_decay: config.weight_decay,
        seed: seed::derive(seed, "train-reward", &[]),
    };
    train(rm, data.len(), &spec, |m, idx, _| reward_loss(m, &data.select(idx)?))
}

fn train_estimator(
    est: &mut EstimatorModel,
    triples: &[PreferenceTriple],
    epochs: usize,
    lr: f64,
    config: &IterationConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let examples = estimator_examples(triples, est.descriptor().context)?;
    let mask_seed = seed::derive(seed, "estimator-dropout", &[]);
    let spec = TrainSpec {
        model: "estimator",
        epochs,
        lr,
        warmup_fraction: config.warmup_fraction,
        batch_size: config.batch_size,
        weight_decay: config.weight_decay,
        seed: seed::derive(seed, "train-estimator", &[]),
    };
    let rate = config.dropout_rate;
    train(est, examples.len(), &spec, |m, idx, info| {
        let batch: Vec<LabeledTemplate> = idx.iter().map(|&i| examples[i].clone()).collect();
        let masks = step_masks(m, rate, mask_seed, info.step, idx)?;
        estimator_loss(m, &batch, Some(&masks))
    })
}

#[allow(clippy::too_many_arguments)]
fn train_policy(
    policy: &mut PolicyModel,
    refs: &ReferenceLogProbs,
    data: &TripleBatch,
    params: PolicyLossParams,
    epochs: usize,
    lr: f64,
    config: &IterationConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let spec = TrainSpec {
        model: "policy",
        epochs,
        lr,
        warmup_fraction: config.warmup_fraction,
        batch_size: config.batch_size,
        weight_decay: 0.0,
        seed: seed::derive(seed, "train-policy", &[]),
    };
    train(policy, data.len(), &spec, |m, idx, _| {
        policy_loss(m, &refs.select(idx), &data.select(idx)?, params)
    })
}

/// Round 0: reward model and estimator from the seed data, then the policy
/// by DPO against the SFT snapshot.
pub fn init_stage(
    seed_data: &TripleBatch,
    ctx: &RunContext<'_>,
    config: &IterationConfig,
    root_seed: u64,
) -> Result<IterationState> {
    config.validate()?;
    if seed_data.is_empty() {
        return Err(UpoError::EmptyPool("seed data is empty".into()));
    }
    let desc = *ctx.sft.descriptor();
    let seed = iteration_seed(root_seed, 0);

    let mut reward = RewardModel::init(desc, seed::derive(root_seed, "reward-init", &[]))?;
    let reward_curve = train_reward(
        &mut reward,
        seed_data,
        config.reward_epochs,
        config.reward_lr,
        config,
        seed,
    )?;

    let est_desc = BackboneDescriptor {
        dropout_rate: config.dropout_rate,
        ..desc.for_estimator()
    };
    let mut estimator = EstimatorModel::init(est_desc, seed::derive(root_seed, "estimator-init", &[]))?;
    let est_curve = train_estimator(
        &mut estimator,
        &seed_data.triples,
        config.estimator_epochs,
        config.estimator_lr,
        config,
        seed,
    )?;

    let mut policy = ctx.sft.clone();
    let refs = ReferenceLogProbs::compute(ctx.sft, seed_data)?;
    let curve = train_policy(
        &mut policy,
        &refs,
        seed_data,
        PolicyLossParams::dpo(config.beta),
        config.policy_epochs,
        config.policy_lr,
        config,
        seed,
    )?;
    let loss_final = match curve.last() {
        Some(_) => dpo_loss(&policy, &refs, seed_data, config.beta)?.loss,
        None => std::f64::consts::LN_2,
    };

    let eval = evaluate(&policy, ctx.sft, ctx.world, ctx.eval_prompts, config.max_response_len)?;
    log::info!("iteration 0: win rate vs sft {:.3}", eval.win_rate);
    Ok(IterationState {
        iteration: 0,
        policy,
        reference: ctx.sft.clone(),
        reward,
        estimator,
        dataset: seed_data.triples.clone(),
        records: Vec::new(),
        root_seed,
        metrics: IterationMetrics {
            iteration: 0,
            win_rate_vs_sft: eval.win_rate,
            mean_true_utility: eval.mean_true_utility,
            sft_true_utility: eval.baseline_true_utility,
            noise_rate_selected: None,
            noise_rate_pool: None,
            mean_b_hat: None,
            pool_size: 0,
            selected_generated: 0,
            selected_seed: seed_data.len(),
            degenerate_prompts: 0,
            loss_final,
            loss_curve: curve,
            reward_loss_curve: reward_curve,
            estimator_loss_curve: est_curve,
            config: config.clone(),
        },
    })
}

/// Candidate pairs from one round of generation.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePool {
    pub pairs: TripleBatch,
    /// Prompt index of every pair.
    pub groups: Vec<usize>,
    /// Ranked responses per prompt.
    pub responses: Vec<Vec<crate::datagen::RewardedResponse>>,
    pub prompts: Vec<Sequence>,
    pub degenerate_prompts: usize,
}

/// Samples `N` responses per prompt, scores them and applies the pre-screen rule.
pub fn generate_pool(
    policy: &PolicyModel,
    reward: &RewardModel,
    prompts: &[Sequence],
    config: &IterationConfig,
    iteration: usize,
    seed: u64,
) -> Result<CandidatePool> {
    let opts = SamplingOptions {
        temperature: config.temperature,
        top_p: config.top_p,
        max_len: config.max_response_len,
        greedy: false,
    };
    let per_prompt = prompts
        .par_iter()
        .enumerate()
        .map(|(p, x)| {
            let ys = policy.sample(
                x,
                &opts,
                config.n_responses,
                seed::derive(seed, "generate", &[p as u64]),
            )?;
            let mut items: Vec<(String, Sequence, f64)> = Vec::new();
            for (k, y) in ys.into_iter().enumerate() {
                if items.iter().any(|(_, s, _)| s.tokens == y.tokens) {
                    continue;
                }
                let r = reward.score(x, &y)?;
                items.push((format!("i{iteration}-p{p:04}-r{k}"), y, r));
            }
            let ranked = rank_responses(items)?;
            if ranked.len() < 2 {
                return Ok((ranked, None));
            }
            let set = build_pairs(
                x,
                &ranked,
                config.top_k_for(ranked.len()),
                Provenance::Generated(iteration),
            )?;
            Ok((ranked, Some(set)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut triples = Vec::new();
    let mut groups = Vec::new();
    let mut responses = Vec::with_capacity(prompts.len());
    let mut degenerate = 0;
    for (p, (ranked, set)) in per_prompt.into_iter().enumerate() {
        if let Some(set) = set {
            degenerate += set.degenerate as usize;
            groups.extend(std::iter::repeat_n(p, set.triples.len()));
            triples.extend(set.triples);
        }
        responses.push(ranked);
    }
    if triples.is_empty() {
        return Err(UpoError::EmptyPool(format!(
            "no candidate pairs from {} prompts in iteration {iteration}",
            prompts.len()
        )));
    }
    Ok(CandidatePool {
        pairs: TripleBatch::new(triples)?,
        groups,
        responses,
        prompts: prompts.to_vec(),
        degenerate_prompts: degenerate,
    })
}

/// MC-dropout uncertainty and sampling/smoothing weights for every pair.
pub fn score_pool(
    estimator: &EstimatorModel,
    pool: &CandidatePool,
    config: &IterationConfig,
    seed: u64,
) -> Result<Vec<UncertaintyRecord>> {
    let limit = estimator.descriptor().context;
    let scored = pool
        .pairs
        .triples
        .par_iter()
        .zip(pool.groups.par_iter())
        .enumerate()
        .map(|(j, (t, &g))| {
            let template = render_template(&t.x(), &t.y_w(), &t.y_l(), limit)?;
            let mc = mc_predict(
                estimator,
                &t.id,
                &template,
                config.mc_passes,
                config.dropout_rate,
                seed::derive(seed, "mc-dropout", &[j as u64]),
            )?;
            Ok(Scored {
                id: t.id.clone(),
                group: format!("{g:06}"),
                b_hat: information_gain(&mc),
                eligible: mc.mean() >= 0.5,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records = build_records(&scored, config.mu, config.weight_scope, config.alpha_mode)?;
    if !config.use_estimator || !config.use_alpha {
        records.iter_mut().for_each(|r| r.alpha = 0.0);
    }
    Ok(records)
}

/// Rounds `state.iteration + 1`: generate, reward, estimate, select, train.
pub fn run_iteration(
    state: &IterationState,
    prompts: &[Sequence],
    ctx: &RunContext<'_>,
    config: &IterationConfig,
    seed: u64,
) -> Result<IterationState> {
    config.validate()?;
    let i = state.iteration + 1;
    let pool = generate_pool(&state.policy, &state.reward, prompts, config, i, seed)?;
    let records = score_pool(&state.estimator, &pool, config, seed)?;
    let selection = select_data(&pool.pairs, &records, ctx.seed_pool, config, seed)?;

    let rewards = selection
        .batch
        .triples
        .par_iter()
        .map(|t| state.reward.score(&t.x(), &t.y_w()))
        .collect::<Result<Vec<_>>>()?;
    let data = selection.batch.clone().with_rewards(rewards)?;

    let reference = state.policy.clone();
    let refs = ReferenceLogProbs::compute(&reference, &data)?;
    let params = PolicyLossParams::upo(config.beta).with_nll(config.lambda, config.nll_eps, config.nll_sign);
    let factor = config.lr_factor(i);
    let mut policy = state.policy.clone();
    let curve = train_policy(
        &mut policy,
        &refs,
        &data,
        params,
        config.policy_epochs,
        config.policy_lr * factor,
        config,
        seed,
    )?;
    let loss_final = policy_loss(&policy, &refs, &data, params)?.loss;

    let mut reward = state.reward.clone();
    let mut estimator = state.estimator.clone();
    let (mut reward_curve, mut est_curve) = (Vec::new(), Vec::new());
    if config.update_rm_est {
        reward_curve = train_reward(
            &mut reward,
            &data,
            config.retrain_epochs,
            config.reward_lr * factor,
            config,
            seed,
        )?;
        est_curve = train_estimator(
            &mut estimator,
            &data.triples,
            config.retrain_epochs,
            config.estimator_lr * factor,
            config,
            seed,
        )?;
    }

    let generated: Vec<PreferenceTriple> = data
        .triples
        .iter()
        .filter(|t| t.provenance != Provenance::Seed)
        .cloned()
        .collect();
    let noise_selected = if generated.is_empty() {
        None
    } else {
        Some(noise_rate(&generated, ctx.world)?)
    };
    let dataset = data
        .triples
        .iter()
        .map(|t| match t.provenance {
            Provenance::Seed => Ok(t.clone()),
            Provenance::Generated(_) => t.clone().with_oracle(ctx.world),
        })
        .collect::<Result<Vec<_>>>()?;
    let eval = evaluate(&policy, ctx.sft, ctx.world, ctx.eval_prompts, config.max_response_len)?;
    let mean_b_hat = records.iter().map(|r| r.b_hat).sum::<f64>() / records.len() as f64;
    log::info!(
        "iteration {i}: win rate vs sft {:.3}, selected noise {:?}",
        eval.win_rate,
        noise_selected
    );
    Ok(IterationState {
        iteration: i,
        policy,
        reference,
        reward,
        estimator,
        dataset,
        records,
        root_seed: state.root_seed,
        metrics: IterationMetrics {
            iteration: i,
            win_rate_vs_sft: eval.win_rate,
            mean_true_utility: eval.mean_true_utility,
            sft_true_utility: eval.baseline_true_utility,
            noise_rate_selected: noise_selected,
            noise_rate_pool: Some(noise_rate(&pool.pairs.triples, ctx.world)?),
            mean_b_hat: Some(mean_b_hat),
            pool_size: pool.pairs.len(),
            selected_generated: generated.len(),
            selected_seed: data.len() - generated.len(),
            degenerate_prompts: pool.degenerate_prompts,
            loss_final,
            loss_curve: curve,
            reward_loss_curve: reward_curve,
            estimator_loss_curve: est_curve,
            config: config.clone(),
        },
    })
}
