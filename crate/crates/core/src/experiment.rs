//! Experiment commands over a run directory.
//!
//! Layout: `config.json`, `seed_data.jsonl`, `sft.ckpt`, `metrics.csv` and one
//! `iter_<i>/` per round, plus `noise_study.csv`, `ablate_<variant>/`,
//! `ablations.csv` and `plots.csv` from the auxiliary commands.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Checkpoint;
use crate::datagen::{label_seed_data, make_world_with, read_jsonl, write_jsonl, SyntheticWorld, WorldShape};
use crate::datagen::{noise_rate, PreferenceTriple, Provenance};
use crate::error::{Result, UpoError};
use crate::evolve::{
    generate_pool, init_stage, iter_dir, iteration_seed, load_state, run_iteration, save_state, score_pool, sft_policy,
    uniform_sample, weighted_sample, CandidatePool, IterationConfig, IterationMetrics, IterationState, RunContext,
    METRICS_FILE,
};
use crate::models::{BackboneDescriptor, PolicyModel, Sequence};
use crate::objectives::TripleBatch;
use crate::seed;

pub const CONFIG_FILE: &str = "config.json";
pub const SEED_DATA_FILE: &str = "seed_data.jsonl";
pub const SFT_FILE: &str = "sft.ckpt";
pub const RUN_METRICS_FILE: &str = "metrics.csv";
pub const NOISE_STUDY_FILE: &str = "noise_study.csv";
pub const ABLATIONS_FILE: &str = "ablations.csv";
pub const PLOTS_FILE: &str = "plots.csv";

/// Reliable-data sampling strategies compared by the noise study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Random,
    CbRr,
    Margin,
    Uncertainty,
}

impl StrategyName {
    pub const ALL: [StrategyName; 4] = [
        StrategyName::Random,
        StrategyName::CbRr,
        StrategyName::Margin,
        StrategyName::Uncertainty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyName::Random => "random",
            StrategyName::CbRr => "cb_rr",
            StrategyName::Margin => "margin",
            StrategyName::Uncertainty => "uncertainty",
        }
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyName {
    type Err = UpoError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| UpoError::UnknownName {
                kind: "strategy",
                name: s.to_string(),
                valid: Self::ALL.map(|v| v.as_str()).join(", "),
            })
    }
}

/// Ablation variants, each switching off one component for one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NoRule,
    NoEstimator,
    NoAlpha,
    NoNll,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::NoRule, Variant::NoEstimator, Variant::NoAlpha, Variant::NoNll];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::NoRule => "no_rule",
            Variant::NoEstimator => "no_estimator",
            Variant::NoAlpha => "no_alpha",
            Variant::NoNll => "no_nll",
        }
    }

    /// `config` with this component disabled.
    pub fn apply(self, config: &IterationConfig) -> IterationConfig {
        let mut c = config.clone();
        match self {
            Variant::NoRule => c.top_k = Some(0),
            Variant::NoEstimator => c.use_estimator = false,
            Variant::NoAlpha => c.use_alpha = false,
            Variant::NoNll => c.lambda = 0.0,
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = UpoError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| UpoError::UnknownName {
                kind: "variant",
                name: s.to_string(),
                valid: Self::ALL.map(|v| v.as_str()).join(", "),
            })
    }
}

/// Full experiment description, read from one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub root_seed: u64,
    /// Defaults to a seed derived from `root_seed`.
    pub world_seed: Option<u64>,
    pub seed_size: usize,
    /// Label noise injected into the seed preferences.
    pub noise_rate: f64,
    pub eval_prompts: usize,
    pub world: WorldShape,
    pub output_dir: Option<PathBuf>,
    pub strategies: Vec<StrategyName>,
    pub noise_sample_size: usize,
    pub backbone: BackboneDescriptor,
    pub iteration: IterationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            root_seed: 0,
            world_seed: None,
            seed_size: 3000,
            noise_rate: 0.3,
            eval_prompts: 200,
            world: WorldShape::default(),
            output_dir: None,
            strategies: StrategyName::ALL.to_vec(),
            noise_sample_size: 200,
            backbone: BackboneDescriptor::default(),
            iteration: IterationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| UpoError::io(path, e))?;
        let config: Self =
            serde_json::from_str(&text).map_err(|e| UpoError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.iteration.validate()?;
        if self.seed_size == 0 || self.eval_prompts == 0 || self.noise_sample_size == 0 {
            return Err(UpoError::Config(
                "seed_size, eval_prompts and noise_sample_size must be >= 1".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return Err(UpoError::Config(format!(
                "noise_rate must lie in [0, 0.5), got {}",
                self.noise_rate
            )));
        }
        if self.world.response_len != self.iteration.max_response_len {
            return Err(UpoError::Config(format!(
                "world.response_len ({}) must equal iteration.max_response_len ({})",
                self.world.response_len, self.iteration.max_response_len
            )));
        }
        Ok(())
    }

    pub fn world_seed(&self) -> u64 {
        self.world_seed
            .unwrap_or_else(|| seed::derive(self.root_seed, "world", &[]))
    }

    pub fn world(&self) -> Result<SyntheticWorld> {
        make_world_with(self.world_seed(), &self.backbone, &self.world)
    }
}

/// A run directory opened for further work.
pub struct Run {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub world: SyntheticWorld,
    pub seed_pool: TripleBatch,
    pub sft: PolicyModel,
    pub eval_prompts: Vec<Sequence>,
}

impl Run {
    pub fn open(dir: &Path) -> Result<Self> {
        let config = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
        let world = config.world()?;
        let seed_pool = TripleBatch::new(read_jsonl(&dir.join(SEED_DATA_FILE))?)?;
        let sft = PolicyModel::from_checkpoint(&Checkpoint::load(&dir.join(SFT_FILE))?)?;
        let eval_prompts = eval_prompts(&config, &world);
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            world,
            seed_pool,
            sft,
            eval_prompts,
        })
    }

    pub fn context(&self) -> RunContext<'_> {
        RunContext {
            world: &self.world,
            sft: &self.sft,
            seed_pool: &self.seed_pool,
            eval_prompts: &self.eval_prompts,
        }
    }

    /// Highest `i` with a complete `iter_<i>/metrics.json`.
    pub fn latest_iteration(&self) -> Option<usize> {
        latest_iteration(&self.dir)
    }

    /// Prompts for round `i`.
    pub fn prompts(&self, i: usize) -> Vec<Sequence> {
        self.world.sample_prompts(
            self.config.iteration.prompts_per_iter,
            seed::derive(self.config.root_seed, "prompts", &[i as u64]),
            "prompts",
        )
    }
}

fn eval_prompts(config: &ExperimentConfig, world: &SyntheticWorld) -> Vec<Sequence> {
    world.sample_prompts(
        config.eval_prompts,
        seed::derive(config.root_seed, "eval-prompts", &[]),
        "eval",
    )
}

fn latest_iteration(dir: &Path) -> Option<usize> {
    (0..)
        .take_while(|&i| iter_dir(dir, i).join(METRICS_FILE).is_file())
        .last()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| UpoError::io(path, e))
}

#[derive(Serialize)]
struct MetricsRow {
    iter: usize,
    win_rate_vs_sft: f64,
    noise_rate_selected: Option<f64>,
    mean_b_hat: Option<f64>,
    loss_final: f64,
}

impl From<&IterationMetrics> for MetricsRow {
    fn from(m: &IterationMetrics) -> Self {
        Self {
            iter: m.iteration,
            win_rate_vs_sft: m.win_rate_vs_sft,
            noise_rate_selected: m.noise_rate_selected,
            mean_b_hat: m.mean_b_hat,
            loss_final: m.loss_final,
        }
    }
}

fn read_metrics(path: &Path) -> Result<IterationMetrics> {
    let text = fs::read_to_string(path).map_err(|e| UpoError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Rewrites `metrics.csv` from every `iter_<i>/metrics.json` under `dir`.
fn write_run_metrics(dir: &Path) -> Result<()> {
    let path = dir.join(RUN_METRICS_FILE);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&path)?;
    w.write_record([
        "iter",
        "win_rate_vs_sft",
        "noise_rate_selected",
        "mean_b_hat",
        "loss_final",
    ])?;
    if let Some(last) = latest_iteration(dir) {
        for i in 0..=last {
            let m = read_metrics(&iter_dir(dir, i).join(METRICS_FILE))?;
            w.serialize(MetricsRow::from(&m))?;
        }
    }
    w.flush().map_err(|e| UpoError::io(&path, e))
}

/// Creates the world, seed data and SFT policy, runs round 0 and persists it.
pub fn cmd_init(config: &ExperimentConfig, dir: &Path) -> Result<IterationMetrics> {
    config.validate()?;
    fs::create_dir_all(dir).map_err(|e| UpoError::io(dir, e))?;
    for entry in fs::read_dir(dir).map_err(|e| UpoError::io(dir, e))? {
        let entry = entry.map_err(|e| UpoError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let stale_dir = name.starts_with("iter_") || name.starts_with("ablate_");
        let stale_file = [RUN_METRICS_FILE, NOISE_STUDY_FILE, ABLATIONS_FILE, PLOTS_FILE].contains(&name.as_str());
        if stale_dir && entry.path().is_dir() {
            fs::remove_dir_all(entry.path()).map_err(|e| UpoError::io(entry.path(), e))?;
        } else if stale_file {
            fs::remove_file(entry.path()).map_err(|e| UpoError::io(entry.path(), e))?;
        }
    }
    let mut stored = config.clone();
    stored.output_dir = None;
    let mut json = serde_json::to_string_pretty(&stored)?;
    json.push('\n');
    write_file(&dir.join(CONFIG_FILE), &json)?;

    let root = config.root_seed;
    let world = config.world()?;
    let seed_data = label_seed_data(
        &world,
        config.seed_size,
        config.noise_rate,
        seed::derive(root, "seed-data", &[]),
    )?;
    write_jsonl(&dir.join(SEED_DATA_FILE), &seed_data.triples)?;
    let sft = sft_policy(&world, config.backbone, &config.iteration, root)?;
    sft.to_checkpoint(0, root)?.save(&dir.join(SFT_FILE))?;
    let prompts = eval_prompts(config, &world);
    let ctx = RunContext {
        world: &world,
        sft: &sft,
        seed_pool: &seed_data,
        eval_prompts: &prompts,
    };
    let state = init_stage(&seed_data, &ctx, &config.iteration, root)?;
    save_state(dir, &state)?;
    write_run_metrics(dir)?;
    Ok(state.metrics)
}

/// Runs `count` more rounds from the latest saved one.
pub fn cmd_iterate(dir: &Path, count: usize) -> Result<Vec<IterationMetrics>> {
    let run = Run::open(dir)?;
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return Ok(out);
    }
    let start = run
        .latest_iteration()
        .ok_or_else(|| UpoError::CorruptCheckpoint(format!("{} has no saved iteration", dir.display())))?;
    let mut state = load_state(dir, start)?;
    let ctx = run.context();
    for _ in 0..count {
        let i = state.iteration + 1;
        let next = run_iteration(
            &state,
            &run.prompts(i),
            &ctx,
            &run.config.iteration,
            iteration_seed(run.config.root_seed, i),
        )?;
        save_state(dir, &next)?;
        write_run_metrics(dir)?;
        out.push(next.metrics.clone());
        state = next;
    }
    Ok(out)
}

/// One `(strategy, seed)` result of the noise study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub strategy: StrategyName,
    pub seed: u64,
    pub sample_size: usize,
    pub noise_rate: f64,
}

/// Pairs chosen by `strategy` from `pool`.
pub fn strategy_pairs(
    strategy: StrategyName,
    pool: &CandidatePool,
    state: &IterationState,
    config: &IterationConfig,
    sample_size: usize,
    seed: u64,
) -> Result<Vec<PreferenceTriple>> {
    let provenance = Provenance::Generated(state.iteration + 1);
    let per_prompt = |pick: &dyn Fn(usize, &[crate::datagen::RewardedResponse]) -> Option<usize>| {
        let mut out = Vec::new();
        for (p, ranked) in pool.responses.iter().enumerate() {
            if ranked.len() < 2 || out.len() >= sample_size {
                continue;
            }
            let Some(l) = pick(p, ranked) else { continue };
            let (w, l) = (&ranked[0], &ranked[l]);
            out.push(PreferenceTriple::new(
                format!("{}>{}", w.id, l.id),
                &pool.prompts[p],
                &w.response,
                &l.response,
                provenance,
            )?);
        }
        Ok::<_, UpoError>(out)
    };
    match strategy {
        StrategyName::Random => {
            let idx = uniform_sample(pool.pairs.len(), sample_size, &mut seed::rng(seed, "random", &[]));
            Ok(idx.into_iter().map(|i| pool.pairs.triples[i].clone()).collect())
        }
        StrategyName::CbRr => per_prompt(&|p, ranked| {
            let lower: Vec<usize> = (1..ranked.len())
                .filter(|&j| ranked[j].reward < ranked[0].reward)
                .collect();
            if lower.is_empty() {
                return None;
            }
            let k = uniform_sample(lower.len(), 1, &mut seed::rng(seed, "cb-rr", &[p as u64]))[0];
            Some(lower[k])
        }),
        StrategyName::Margin => per_prompt(&|_, ranked| {
            let last = ranked.len() - 1;
            (ranked[last].reward < ranked[0].reward).then_some(last)
        }),
        StrategyName::Uncertainty => {
            let records = score_pool(&state.estimator, pool, config, seed)?;
            let p: Vec<f64> = records.iter().map(|r| r.p_weight).collect();
            let mut idx = weighted_sample(&p, sample_size, &mut seed::rng(seed, "uncertainty", &[]));
            idx.sort_unstable();
            Ok(idx.into_iter().map(|i| pool.pairs.triples[i].clone()).collect())
        }
    }
}

/// Noise rate of each strategy's selection on a fresh candidate pool per seed.
pub fn cmd_noise_study(
    dir: &Path,
    strategies: &[StrategyName],
    sample_size: usize,
    seeds: &[u64],
) -> Result<Vec<NoiseRow>> {
    if sample_size == 0 {
        return Err(UpoError::invalid("sample size must be >= 1"));
    }
    let run = Run::open(dir)?;
    let latest = run
        .latest_iteration()
        .ok_or_else(|| UpoError::CorruptCheckpoint(format!("{} has no saved iteration", dir.display())))?;
    let state = load_state(dir, latest)?;
    let config = &run.config.iteration;
    let mut rows = Vec::new();
    for &s in seeds {
        let study_seed = seed::derive(run.config.root_seed, "noise-study", &[s]);
        let prompts = run.world.sample_prompts(sample_size, study_seed, "noise-prompts");
        let pool = generate_pool(
            &state.policy,
            &state.reward,
            &prompts,
            config,
            state.iteration + 1,
            study_seed,
        )?;
        for &strategy in strategies {
            let picked = strategy_pairs(strategy, &pool, &state, config, sample_size, study_seed)?;
            rows.push(NoiseRow {
                strategy,
                seed: s,
                sample_size: picked.len(),
                noise_rate: noise_rate(&picked, &run.world)?,
            });
        }
    }
    let path = dir.join(NOISE_STUDY_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| UpoError::io(&path, e))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AblationRow {
    variant: Variant,
    iter: usize,
    win_rate_vs_sft: f64,
    noise_rate_selected: Option<f64>,
    mean_b_hat: Option<f64>,
    loss_final: f64,
}

/// Re-runs the first round with one component disabled. Results land in
/// `ablate_<variant>/iter_1/` and a row of `ablations.csv`.
pub fn cmd_ablate(dir: &Path, variant: Variant) -> Result<IterationMetrics> {
    let run = Run::open(dir)?;
    let state = load_state(dir, 0)?;
    let config = variant.apply(&run.config.iteration);
    let root = run.config.root_seed;
    let next = run_iteration(
        &state,
        &run.prompts(1),
        &run.context(),
        &config,
        iteration_seed(root, 1),
    )?;
    save_state(&dir.join(format!("ablate_{variant}")), &next)?;

    let path = dir.join(ABLATIONS_FILE);
    let mut rows: Vec<AblationRow> = if path.is_file() {
        csv::Reader::from_path(&path)?
            .deserialize()
            .collect::<std::result::Result<_, _>>()?
    } else {
        Vec::new()
    };
    rows.retain(|r| r.variant != variant);
    let m = &next.metrics;
    rows.push(AblationRow {
        variant,
        iter: m.iteration,
        win_rate_vs_sft: m.win_rate_vs_sft,
        noise_rate_selected: m.noise_rate_selected,
        mean_b_hat: m.mean_b_hat,
        loss_final: m.loss_final,
    });
    rows.sort_by_key(|r| Variant::ALL.iter().position(|v| *v == r.variant));
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| UpoError::io(&path, e))?;
    Ok(next.metrics)
}

/// One tidy plot-data row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub run: String,
    pub iter: usize,
    pub step: Option<usize>,
    pub metric: String,
    pub value: f64,
}

fn plot_rows(run: &str, dir: &Path, rows: &mut Vec<PlotRow>) -> Result<()> {
    let Some(last) = latest_iteration(dir).or_else(|| {
        // Ablation runs start at round 1.
        iter_dir(dir, 1).join(METRICS_FILE).is_file().then_some(1)
    }) else {
        return Ok(());
    };
    for i in 0..=last {
        let path = iter_dir(dir, i).join(METRICS_FILE);
        if !path.is_file() {
            continue;
        }
        let m = read_metrics(&path)?;
        let mut push = |metric: &str, step: Option<usize>, value: f64| {
            rows.push(PlotRow {
                run: run.to_string(),
                iter: i,
                step,
                metric: metric.to_string(),
                value,
            })
        };
        push("win_rate_vs_sft", None, m.win_rate_vs_sft);
        push("mean_true_utility", None, m.mean_true_utility);
        push("loss_final", None, m.loss_final);
        if let Some(v) = m.noise_rate_selected {
            push("noise_rate_selected", None, v);
        }
        if let Some(v) = m.mean_b_hat {
            push("mean_b_hat", None, v);
        }
        for (name, curve) in [
            ("policy_loss", &m.loss_curve),
            ("reward_loss", &m.reward_loss_curve),
            ("estimator_loss", &m.estimator_loss_curve),
        ] {
            for (s, &v) in curve.iter().enumerate() {
                push(name, Some(s), v);
            }
        }
    }
    Ok(())
}

/// Long-format CSV `(run, iter, step, metric, value)` of every metric under `dir`.
pub fn cmd_export_plots(dir: &Path) -> Result<PathBuf> {
    let mut rows = Vec::new();
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    if dir.is_dir() {
        plot_rows(&name, dir, &mut rows)?;
        for v in Variant::ALL {
            let sub = dir.join(format!("ablate_{v}"));
            if sub.is_dir() {
                plot_rows(&format!("{name}/ablate_{v}"), &sub, &mut rows)?;
            }
        }
    } else {
        fs::create_dir_all(dir).map_err(|e| UpoError::io(dir, e))?;
    }
    let path = dir.join(PLOTS_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["run", "iter", "step", "metric", "value"])?;
    for r in &rows {
        w.write_record([
            r.run.clone(),
            r.iter.to_string(),
            r.step.map(|s| s.to_string()).unwrap_or_default(),
            r.metric.clone(),
            r.value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| UpoError::io(&path, e))?;
    Ok(path)
}
