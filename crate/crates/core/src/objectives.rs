use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, MaskSet, NodeId, ParamVector};
use crate::datagen::PreferenceTriple;
use crate::error::{Result, UpoError};
use crate::models::{EstimatorModel, PolicyModel, RewardModel, Sequence};

/// Default reward clamp for the NLL regularizer.
pub const NLL_EPS: f64 = 1e-6;

/// Triples with optional per-triple smoothing weights and reward scores.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleBatch {
    pub triples: Vec<PreferenceTriple>,
    pub alphas: Option<Vec<f64>>,
    pub rewards: Option<Vec<f64>>,
}

impl TripleBatch {
    pub fn new(triples: Vec<PreferenceTriple>) -> Result<Self> {
        if triples.is_empty() {
            return Err(UpoError::EmptyPool("triple batch is empty".into()));
        }
        Ok(Self {
            triples,
            alphas: None,
            rewards: None,
        })
    }

    pub fn with_alphas(mut self, alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() != self.triples.len() {
            return Err(UpoError::invalid(format!(
                "{} alphas for {} triples",
                alphas.len(),
                self.triples.len()
            )));
        }
        if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(UpoError::invalid(format!("alpha {a} outside [0, 1]")));
        }
        self.alphas = Some(alphas);
        Ok(self)
    }

    pub fn with_rewards(mut self, rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() != self.triples.len() {
            return Err(UpoError::invalid(format!(
                "{} rewards for {} triples",
                rewards.len(),
                self.triples.len()
            )));
        }
        if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(UpoError::NonFinite(format!("reward {r}")));
        }
        self.rewards = Some(rewards);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Sub-batch at `idx`, keeping alphas and rewards aligned.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            triples: idx.iter().map(|&i| self.triples[i].clone()).collect(),
            alphas: self.alphas.as_ref().map(|a| idx.iter().map(|&i| a[i]).collect()),
            rewards: self.rewards.as_ref().map(|r| idx.iter().map(|&i| r[i]).collect()),
        })
        .and_then(|b: Self| {
            if b.is_empty() {
                Err(UpoError::EmptyPool("empty selection".into()))
            } else {
                Ok(b)
            }
        })
    }

    /// Every pair reversed.
    pub fn swapped(&self) -> Self {
        Self {
            triples: self.triples.iter().map(|t| t.swapped()).collect(),
            ..self.clone()
        }
    }

    fn alpha(&self, i: usize) -> f64 {
        self.alphas.as_ref().map_or(0.0, |a| a[i])
    }
}

/// Per-triple loss terms. `forward` and `reversed` are the weighted
/// preference terms; `nll` is the regularizer term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub forward: f64,
    pub reversed: f64,
    pub nll: f64,
}

impl Components {
    pub fn total(&self) -> f64 {
        self.forward + self.reversed + self.nll
    }
}

/// Loss value, per-triple margins and breakdown, and the gradient of the loss
/// with respect to the model parameters.
#[derive(Clone, Debug)]
pub struct LossReport {
    pub loss: f64,
    pub margins: Vec<f64>,
    pub components: Vec<Components>,
    pub grad: ParamVector,
}

impl LossReport {
    pub fn contributions(&self) -> Vec<f64> {
        self.components.iter().map(Components::total).collect()
    }
}

/// `sigma(r_w - r_l)`.
pub fn bt_prob(r_w: f64, r_l: f64) -> f64 {
    let d = r_w - r_l;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// `log sigma(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Scalar preference terms `(forward, reversed)` for margin `h`.
pub fn upo_terms(h: f64, alpha: f64, beta: f64) -> (f64, f64) {
    (-(1.0 - alpha) * log_sigmoid(beta * h), -alpha * log_sigmoid(-beta * h))
}

/// Sign convention for the NLL regularizer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NllSign {
    /// `+lambda * log pi / |r|`, minimized by driving `log pi` down.
    PaperLiteral,
    /// `-lambda * log pi / |r|`, a true negative log-likelihood.
    #[default]
    Corrected,
}

/// Scalar NLL term for one triple.
pub fn nll_term(logp: f64, reward: f64, lambda: f64, eps: f64, sign: NllSign) -> f64 {
    let w = lambda / reward.abs().max(eps);
    match sign {
        NllSign::Corrected => -w * logp,
        NllSign::PaperLiteral => w * logp,
    }
}

/// Reference log-probabilities `(log pi_ref(y_w|x), log pi_ref(y_l|x))`
/// computed once and never changed afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceLogProbs {
    ids: Vec<String>,
    values: Vec<(f64, f64)>,
}

impl ReferenceLogProbs {
    pub fn compute(reference: &PolicyModel, batch: &TripleBatch) -> Result<Self> {
        let values = batch
            .triples
            .par_iter()
            .map(|t| {
                let x = t.x();
                Ok((reference.logprob(&x, &t.y_w())?, reference.logprob(&x, &t.y_l())?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ids: batch.triples.iter().map(|t| t.id.clone()).collect(),
            values,
        })
    }

    /// Hand-set values, for tests and external caches.
    pub fn from_values(ids: Vec<String>, values: Vec<(f64, f64)>) -> Result<Self> {
        if ids.len() != values.len() {
            return Err(UpoError::invalid("reference ids and values differ in length"));
        }
        Ok(Self { ids, values })
    }

    pub fn values(&self) -> &[(f64, f64)] {
        &self.values
    }

    /// Cache restricted to `idx`, aligned with [`TripleBatch::select`].
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            values: idx.iter().map(|&i| self.values[i]).collect(),
        }
    }

    /// Reversed pairs, aligned with [`TripleBatch::swapped`].
    pub fn swapped(&self) -> Self {
        Self {
            ids: self.ids.clone(),
            values: self.values.iter().map(|&(w, l)| (l, w)).collect(),
        }
    }

    fn check(&self, batch: &TripleBatch) -> Result<()> {
        if self.ids.len() != batch.len() || self.ids.iter().zip(&batch.triples).any(|(id, t)| *id != t.id) {
            return Err(UpoError::invalid("reference cache does not match the batch"));
        }
        Ok(())
    }
}

/// `h = [log pi(y_w) - log ref(y_w)] - [log pi(y_l) - log ref(y_l)]`.
pub fn dpo_margin(policy: &PolicyModel, reference: &PolicyModel, t: &PreferenceTriple) -> Result<f64> {
    if policy.descriptor().vocab != reference.descriptor().vocab
        || policy.descriptor().context != reference.descriptor().context
    {
        return Err(UpoError::invalid("policy and reference differ in vocab or context"));
    }
    let x = t.x();
    let (y_w, y_l) = (t.y_w(), t.y_l());
    Ok(margin_from_logprobs(
        policy.logprob(&x, &y_w)?,
        reference.logprob(&x, &y_w)?,
        policy.logprob(&x, &y_l)?,
        reference.logprob(&x, &y_l)?,
    ))
}

/// The margin from its four log-probabilities.
pub fn margin_from_logprobs(pi_w: f64, ref_w: f64, pi_l: f64, ref_l: f64) -> f64 {
    (pi_w - pi_l) - (ref_w - ref_l)
}

/// Coefficients of the policy objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyLossParams {
    pub beta: f64,
    pub lambda: f64,
    pub eps: f64,
    pub sign: NllSign,
    /// Include the per-triple smoothing weights.
    pub smoothing: bool,
}

impl PolicyLossParams {
    pub fn dpo(beta: f64) -> Self {
        Self {
            beta,
            lambda: 0.0,
            eps: NLL_EPS,
            sign: NllSign::Corrected,
            smoothing: false,
        }
    }

    pub fn upo(beta: f64) -> Self {
        Self {
            smoothing: true,
            ..Self::dpo(beta)
        }
    }

    pub fn with_nll(self, lambda: f64, eps: f64, sign: NllSign) -> Self {
        Self {
            lambda,
            eps,
            sign,
            ..self
        }
    }
}

struct Partial {
    margin: f64,
    components: Components,
    grad: ParamVector,
}

fn reduce(parts: Vec<Partial>, zero: ParamVector) -> Result<LossReport> {
    let n = parts.len() as f64;
    let mut grad = zero;
    let mut margins = Vec::with_capacity(parts.len());
    let mut components = Vec::with_capacity(parts.len());
    let mut total = 0.0;
    for p in parts {
        total += p.components.total();
        grad.add_scaled(&p.grad, 1.0 / n)?;
        margins.push(p.margin);
        components.push(p.components);
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(UpoError::NonFinite("loss".into()));
    }
    Ok(LossReport {
        loss,
        margins,
        components,
        grad,
    })
}

/// Mean of `-log sigma(r(x, y_w) - r(x, y_l))`.
pub fn reward_loss(rm: &RewardModel, batch: &TripleBatch) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(UpoError::EmptyPool("reward_loss of an empty batch".into()));
    }
    let parts = batch
        .triples
        .par_iter()
        .map(|t| {
            let (x, y_w, y_l) = (t.x(), t.y_w(), t.y_l());
            rm.check(&x, &y_w)?;
            rm.check(&x, &y_l)?;
            let mut g = Graph::new();
            let nodes = rm.nodes(&mut g);
            let rw = rm.build_score(&mut g, &nodes, &x, &y_w);
            let rl = rm.build_score(&mut g, &nodes, &x, &y_l);
            let m = g.sub(rw, rl);
            let ls = g.log_sigmoid(m);
            let loss = g.neg(ls);
            let v = g.forward(rm.params(), &[], None)?;
            let margin = v.scalar(m);
            if !margin.is_finite() {
                return Err(UpoError::NonFinite(format!("reward score for triple {}", t.id)));
            }
            Ok(Partial {
                margin,
                components: Components {
                    forward: v.scalar(loss),
                    ..Components::default()
                },
                grad: g.backward(&v, loss)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    reduce(parts, rm.params().zeros_like())
}

/// Policy objective over `batch`: the smoothed preference loss plus the
/// optional NLL regularizer. Reference log-probabilities are constants.
pub fn policy_loss(
    policy: &PolicyModel,
    reference: &ReferenceLogProbs,
    batch: &TripleBatch,
    p: PolicyLossParams,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(UpoError::EmptyPool("policy loss of an empty batch".into()));
    }
    if !(p.beta > 0.0) || !p.beta.is_finite() {
        return Err(UpoError::invalid(format!("beta must be > 0, got {}", p.beta)));
    }
    if !(p.lambda >= 0.0) {
        return Err(UpoError::invalid(format!("lambda must be >= 0, got {}", p.lambda)));
    }
    if !(p.eps > 0.0) {
        return Err(UpoError::invalid(format!("nll eps must be > 0, got {}", p.eps)));
    }
    if p.lambda > 0.0 && batch.rewards.is_none() {
        return Err(UpoError::invalid("nll regularizer needs per-triple rewards"));
    }
    if let Some(a) = batch.alphas.iter().flatten().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(UpoError::invalid(format!("alpha {a} outside [0, 1]")));
    }
    reference.check(batch)?;
    let parts = batch
        .triples
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let (x, y_w, y_l) = (t.x(), t.y_w(), t.y_l());
            policy.check(&x, &[&y_w])?;
            policy.check(&x, &[&y_l])?;
            let (ref_w, ref_l) = reference.values[i];
            let alpha = if p.smoothing { batch.alpha(i) } else { 0.0 };
            let mut g = Graph::new();
            let nodes = policy.nodes(&mut g);
            let lw = policy.build_logprob(&mut g, &nodes, &x, &[], &y_w.tokens);
            let ll = policy.build_logprob(&mut g, &nodes, &x, &[], &y_l.tokens);
            let diff = g.sub(lw, ll);
            let ref_diff = g.scalar(ref_w - ref_l);
            let h = g.sub(diff, ref_diff);
            let bh = g.scale(h, p.beta);
            let fwd = g.log_sigmoid(bh);
            let fwd = g.scale(fwd, -(1.0 - alpha));
            let neg_bh = g.neg(bh);
            let rev = g.log_sigmoid(neg_bh);
            let rev = g.scale(rev, -alpha);
            let mut terms = vec![fwd, rev];
            if p.lambda > 0.0 {
                let r = batch.rewards.as_ref().expect("checked above")[i];
                let w = p.lambda / r.abs().max(p.eps);
                let nll = match p.sign {
                    NllSign::Corrected => g.scale(lw, -w),
                    NllSign::PaperLiteral => g.scale(lw, w),
                };
                terms.push(nll);
            }
            let stacked = g.concat(&terms);
            let loss = g.sum(stacked);
            let v = g.forward(policy.params(), &[], None)?;
            Ok(Partial {
                margin: v.scalar(h),
                components: Components {
                    forward: v.scalar(fwd),
                    reversed: v.scalar(rev),
                    nll: terms.get(2).map_or(0.0, |&n| v.scalar(n)),
                },
                grad: g.backward(&v, loss)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    reduce(parts, policy.params().zeros_like())
}

/// Mean of `-log sigma(beta h)`.
pub fn dpo_loss(
    policy: &PolicyModel,
    reference: &ReferenceLogProbs,
    batch: &TripleBatch,
    beta: f64,
) -> Result<LossReport> {
    policy_loss(policy, reference, batch, PolicyLossParams::dpo(beta))
}

/// Mean of `-[(1 - a) log sigma(beta h) + a log sigma(-beta h)]`. Missing
/// alphas count as zero.
pub fn upo_loss(
    policy: &PolicyModel,
    reference: &ReferenceLogProbs,
    batch: &TripleBatch,
    beta: f64,
) -> Result<LossReport> {
    policy_loss(policy, reference, batch, PolicyLossParams::upo(beta))
}

/// `lambda * mean[-log pi(y_w|x) / max(|r|, eps)]` on its own.
pub fn nll_regularizer(
    policy: &PolicyModel,
    batch: &TripleBatch,
    lambda: f64,
    eps: f64,
    sign: NllSign,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(UpoError::EmptyPool("nll_regularizer of an empty batch".into()));
    }
    if !(lambda >= 0.0) || !(eps > 0.0) {
        return Err(UpoError::invalid("nll needs lambda >= 0 and eps > 0"));
    }
    let rewards = batch
        .rewards
        .as_ref()
        .ok_or_else(|| UpoError::invalid("nll regularizer needs per-triple rewards"))?;
    let parts = batch
        .triples
        .par_iter()
        .zip(rewards.par_iter())
        .map(|(t, &r)| {
            let (x, y_w) = (t.x(), t.y_w());
            policy.check(&x, &[&y_w])?;
            let mut g = Graph::new();
            let nodes = policy.nodes(&mut g);
            let lw = policy.build_logprob(&mut g, &nodes, &x, &[], &y_w.tokens);
            let w = lambda / r.abs().max(eps);
            let loss = match sign {
                NllSign::Corrected => g.scale(lw, -w),
                NllSign::PaperLiteral => g.scale(lw, w),
            };
            let v = g.forward(policy.params(), &[], None)?;
            Ok(Partial {
                margin: 0.0,
                components: Components {
                    nll: v.scalar(loss),
                    ..Components::default()
                },
                grad: g.backward(&v, loss)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    reduce(parts, policy.params().zeros_like())
}

/// Token-averaged maximum likelihood on demonstrations:
/// mean of `-log pi(y|x) / |y|`.
pub fn sft_loss(policy: &PolicyModel, demos: &[(Sequence, Sequence)]) -> Result<LossReport> {
    if demos.is_empty() {
        return Err(UpoError::EmptyPool("sft_loss of an empty batch".into()));
    }
    let parts = demos
        .par_iter()
        .map(|(x, y)| {
            policy.check(x, &[y])?;
            let mut g = Graph::new();
            let nodes = policy.nodes(&mut g);
            let lp = policy.build_logprob(&mut g, &nodes, x, &[], &y.tokens);
            let loss = g.scale(lp, -1.0 / y.len().max(1) as f64);
            let v = g.forward(policy.params(), &[], None)?;
            Ok(Partial {
                margin: 0.0,
                components: Components {
                    nll: v.scalar(loss),
                    ..Components::default()
                },
                grad: g.backward(&v, loss)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    reduce(parts, policy.params().zeros_like())
}

/// A rendered template with its reliability label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTemplate {
    pub template: Sequence,
    pub label: bool,
}

/// Mean cross-entropy of the estimator. `masks`, when given, holds one frozen
/// mask set per example.
pub fn estimator_loss(
    est: &EstimatorModel,
    examples: &[LabeledTemplate],
    masks: Option<&[MaskSet]>,
) -> Result<LossReport> {
    if examples.is_empty() {
        return Err(UpoError::EmptyPool("estimator_loss of an empty batch".into()));
    }
    if let Some(m) = masks {
        if m.len() != examples.len() {
            return Err(UpoError::invalid(format!(
                "{} mask sets for {} examples",
                m.len(),
                examples.len()
            )));
        }
    }
    let parts = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            est.check(&ex.template)?;
            let mut g = Graph::new();
            let nodes = est.nodes(&mut g);
            let lsm = est.build_class_logprobs(&mut g, &nodes, &ex.template);
            let lp: NodeId = g.pick(lsm, ex.label as usize);
            let loss = g.neg(lp);
            let v = g.forward(est.params(), &[], masks.map(|m| &m[i]))?;
            Ok(Partial {
                margin: 0.0,
                components: Components {
                    forward: v.scalar(loss),
                    ..Components::default()
                },
                grad: g.backward(&v, loss)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    reduce(parts, est.params().zeros_like())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Provenance;
    use crate::models::BackboneDescriptor;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn bt_prob_values() {
        assert_eq!(bt_prob(1.3, 1.3), 0.5);
        close(bt_prob(3f64.ln(), 0.0), 0.75, 1e-15);
        assert_eq!(bt_prob(700.0, 0.0), 1.0);
        assert!(bt_prob(-800.0, 0.0).is_finite());
    }

    #[test]
    fn scalar_oracles() {
        let reward = (-log_sigmoid(1.0) - log_sigmoid(-1.0)) / 2.0;
        close(reward, 0.813262, 1e-6);
        let dpo = (upo_terms(2.0, 0.0, 0.1).0 + upo_terms(-2.0, 0.0, 0.1).0) / 2.0;
        close(dpo, 0.698139, 1e-6);
        let est = (-(0.9f64).ln() - (0.8f64).ln()) / 2.0;
        close(est, 0.164252, 1e-6);
        close(margin_from_logprobs(-1.0, -3.0, -2.0, -4.0), 0.0, 0.0);
        close(nll_term(-2.0, 4.0, 1.0, NLL_EPS, NllSign::Corrected), 0.5, 1e-15);
        close(nll_term(-2.0, 4.0, 1.0, NLL_EPS, NllSign::PaperLiteral), -0.5, 1e-15);
        assert_eq!(nll_term(-2.0, 4.0, 0.0, NLL_EPS, NllSign::Corrected), 0.0);
        assert!(nll_term(-2.0, 0.0, 1.0, NLL_EPS, NllSign::Corrected).is_finite());
    }

    #[test]
    fn half_alpha_is_minimized_at_zero_margin() {
        let f = |h: f64| {
            let (a, b) = upo_terms(h, 0.5, 0.1);
            a + b
        };
        let best = (-200..=200)
            .map(|k| k as f64 * 0.1)
            .min_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap();
        assert_eq!(best, 0.0);
    }

    fn batch() -> TripleBatch {
        let x = Sequence::prompt(vec![4, 5, 6]);
        let ys = [vec![7, 8, 3], vec![9, 3], vec![10, 11, 12, 3], vec![13]];
        let triples = (0..3)
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

    #[test]
    fn dpo_at_reference_is_ln2() {
        let desc = BackboneDescriptor::default();
        let p = PolicyModel::init(desc, 3, 1.0).unwrap();
        let b = batch();
        let refs = ReferenceLogProbs::compute(&p, &b).unwrap();
        let r = dpo_loss(&p, &refs, &b, 0.1).unwrap();
        for c in &r.components {
            close(c.forward, std::f64::consts::LN_2, 1e-12);
        }
        assert!(r.margins.iter().all(|m| *m == 0.0));
        assert!(dpo_loss(&p, &refs, &b, 0.0).is_err());
    }

    #[test]
    fn alpha_range_checked() {
        let desc = BackboneDescriptor::default();
        let p = PolicyModel::init(desc, 3, 1.0).unwrap();
        let mut b = batch();
        assert!(b.clone().with_alphas(vec![0.0, 1.2, 0.0]).is_err());
        b.alphas = Some(vec![0.0, -0.1, 0.0]);
        let refs = ReferenceLogProbs::compute(&p, &b).unwrap();
        assert!(upo_loss(&p, &refs, &b, 0.1).is_err());
    }

    #[test]
    fn loss_is_mean_of_contributions() {
        let desc = BackboneDescriptor::default();
        let p = PolicyModel::init(desc, 3, 1.0).unwrap();
        let q = PolicyModel::init(desc, 4, 1.0).unwrap();
        let b = batch()
            .with_alphas(vec![0.1, 0.5, 0.9])
            .unwrap()
            .with_rewards(vec![0.5, -2.0, 0.0])
            .unwrap();
        let refs = ReferenceLogProbs::compute(&q, &b).unwrap();
        let r = policy_loss(
            &p,
            &refs,
            &b,
            PolicyLossParams::upo(0.1).with_nll(1.0, NLL_EPS, NllSign::Corrected),
        )
        .unwrap();
        let mean = r.contributions().iter().sum::<f64>() / 3.0;
        close(r.loss, mean, 1e-9);
        let nll = nll_regularizer(&p, &b, 1.0, NLL_EPS, NllSign::Corrected).unwrap();
        let upo = upo_loss(&p, &refs, &b, 0.1).unwrap();
        close(r.loss, upo.loss + nll.loss, 1e-9);
    }

    #[test]
    fn reference_cache_must_match() {
        let desc = BackboneDescriptor::default();
        let p = PolicyModel::init(desc, 3, 1.0).unwrap();
        let b = batch();
        let refs = ReferenceLogProbs::compute(&p, &b).unwrap();
        let other = b.select(&[0, 1]).unwrap();
        assert!(dpo_loss(&p, &refs, &other, 0.1).is_err());
        assert!(dpo_loss(&p, &refs.select(&[0, 1]), &other, 0.1).is_ok());
    }

    #[test]
    fn untrained_estimator_is_ln2() {
        let desc = BackboneDescriptor::default().for_estimator();
        let est = EstimatorModel::zeros(desc).unwrap();
        let t = crate::models::render_template(
            &Sequence::prompt(vec![4]),
            &Sequence::response(vec![5, 3]),
            &Sequence::response(vec![6, 3]),
            36,
        )
        .unwrap();
        let ex = vec![
            LabeledTemplate {
                template: t.clone(),
                label: true,
            },
            LabeledTemplate {
                template: t,
                label: false,
            },
        ];
        close(
            estimator_loss(&est, &ex, None).unwrap().loss,
            std::f64::consts::LN_2,
            1e-12,
        );
    }
}
