use rand::Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{Architecture, BackboneDescriptor, BackboneNodes, ModelKind, Pooler};
use super::sequence::{Sequence, END, FIRST_CONTENT};
use crate::autodiff::{Checkpoint, Graph, Layout, NodeId, ParamVector};
use crate::error::{Result, UpoError};
use crate::seed;

const PROMPT_SEGMENT: usize = 0;
const RESPONSE_SEGMENT: usize = 1;

/// Decoding controls for [`PolicyModel::sample`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub temperature: f64,
    pub top_p: f64,
    /// Cap on response length, END included; also bounded by the context.
    pub max_len: usize,
    /// Take the argmax token at every step (the zero-temperature limit).
    pub greedy: bool,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            temperature: 0.8,
            top_p: 0.9,
            max_len: 8,
            greedy: false,
        }
    }
}

/// Autoregressive toy policy: next-token softmax over the whole vocabulary,
/// conditioned on pooled prompt/response embeddings and the last token.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    desc: BackboneDescriptor,
    params: ParamVector,
}

fn generatable(token: usize) -> bool {
    token as u32 >= FIRST_CONTENT || token as u32 == END
}

impl PolicyModel {
    pub fn layout(desc: &BackboneDescriptor) -> Layout {
        desc.layout(desc.vocab)
    }

    pub fn new(desc: BackboneDescriptor, params: ParamVector) -> Result<Self> {
        desc.check_params(&params, desc.vocab)?;
        Ok(Self { desc, params })
    }

    /// All-zero parameters: every next-token distribution is uniform.
    pub fn uniform(desc: BackboneDescriptor) -> Result<Self> {
        desc.validate()?;
        Ok(Self {
            params: ParamVector::zeros(Self::layout(&desc)),
            desc,
        })
    }

    pub fn init(desc: BackboneDescriptor, seed: u64, head_scale: f64) -> Result<Self> {
        desc.validate()?;
        Ok(Self {
            params: desc.init_params(desc.vocab, seed::derive(seed, "policy", &[]), head_scale),
            desc,
        })
    }

    pub fn descriptor(&self) -> &BackboneDescriptor {
        &self.desc
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        Self::new(self.desc, params)
    }

    pub(crate) fn check(&self, x: &Sequence, parts: &[&Sequence]) -> Result<()> {
        let mut len = x.len();
        x.check_vocab(self.desc.vocab)?;
        for p in parts {
            p.check_vocab(self.desc.vocab)?;
            len += p.len();
        }
        if len > self.desc.context {
            return Err(UpoError::LengthOverflow {
                len,
                limit: self.desc.context,
            });
        }
        Ok(())
    }

    pub(crate) fn nodes(&self, g: &mut Graph) -> BackboneNodes {
        BackboneNodes::new(g, &self.desc, self.params.layout(), self.desc.vocab)
    }

    fn context_pooler(&self, g: &mut Graph, nodes: &BackboneNodes, x: &Sequence, prefix: &[u32]) -> Pooler {
        let mut pooler = nodes.pooler();
        for &t in &x.tokens {
            pooler.push(g, nodes, t, PROMPT_SEGMENT);
        }
        for &t in prefix {
            pooler.push(g, nodes, t, RESPONSE_SEGMENT);
        }
        pooler
    }

    /// Adds `log p(suffix | x, prefix)` to `g` and returns its scalar node.
    /// Inputs must already be validated.
    pub(crate) fn build_logprob(
        &self,
        g: &mut Graph,
        nodes: &BackboneNodes,
        x: &Sequence,
        prefix: &[u32],
        suffix: &[u32],
    ) -> NodeId {
        let mut pooler = self.context_pooler(g, nodes, x, prefix);
        let mut total: Option<NodeId> = None;
        for &t in suffix {
            let logits = nodes.head(g, &pooler);
            let lsm = g.log_softmax(logits);
            let lp = g.pick(lsm, t as usize);
            total = Some(match total {
                Some(acc) => g.add(acc, lp),
                None => lp,
            });
            pooler.push(g, nodes, t, RESPONSE_SEGMENT);
        }
        total.unwrap_or_else(|| g.scalar(0.0))
    }

    /// Graph computing `log pi(y | x)` together with its output node.
    pub fn logprob_graph(&self, x: &Sequence, y: &Sequence) -> Result<(Graph, NodeId)> {
        self.check(x, &[y])?;
        let mut g = Graph::new();
        let nodes = self.nodes(&mut g);
        let out = self.build_logprob(&mut g, &nodes, x, &[], &y.tokens);
        Ok((g, out))
    }

    /// `sum_t log p(y_t | x, y_<t)`.
    pub fn logprob(&self, x: &Sequence, y: &Sequence) -> Result<f64> {
        let (g, out) = self.logprob_graph(x, y)?;
        Ok(g.forward(&self.params, &[], None)?.scalar(out))
    }

    /// `log p(suffix | x, prefix)`.
    pub fn conditional_logprob(&self, x: &Sequence, prefix: &Sequence, suffix: &Sequence) -> Result<f64> {
        self.check(x, &[prefix, suffix])?;
        let mut g = Graph::new();
        let nodes = self.nodes(&mut g);
        let out = self.build_logprob(&mut g, &nodes, x, &prefix.tokens, &suffix.tokens);
        Ok(g.forward(&self.params, &[], None)?.scalar(out))
    }

    /// Next-token probabilities over the full vocabulary after `x ++ prefix`.
    pub fn next_token_distribution(&self, x: &Sequence, prefix: &[u32]) -> Result<Vec<f64>> {
        let prefix_seq = Sequence::response(prefix.to_vec());
        self.check(x, &[&prefix_seq])?;
        let mut g = Graph::new();
        let nodes = self.nodes(&mut g);
        let pooler = self.context_pooler(&mut g, &nodes, x, prefix);
        let logits = nodes.head(&mut g, &pooler);
        let probs = g.softmax(logits);
        Ok(g.forward(&self.params, &[], None)?.get(probs).to_vec())
    }

    fn response_cap(&self, x: &Sequence, opts: &SamplingOptions) -> usize {
        opts.max_len.min(self.desc.context.saturating_sub(x.len()))
    }

    /// Draws `n` responses by temperature + nucleus sampling over the
    /// generatable tokens (content ids and END). Deterministic in `seed`.
    pub fn sample(&self, x: &Sequence, opts: &SamplingOptions, n: usize, seed: u64) -> Result<Vec<Sequence>> {
        if n == 0 {
            return Err(UpoError::invalid("number of samples must be >= 1"));
        }
        if !opts.greedy && !(opts.temperature > 0.0) {
            return Err(UpoError::invalid(format!(
                "temperature must be > 0, got {}",
                opts.temperature
            )));
        }
        if !(opts.top_p > 0.0 && opts.top_p <= 1.0) {
            return Err(UpoError::invalid(format!(
                "top_p must lie in (0, 1], got {}",
                opts.top_p
            )));
        }
        x.check_vocab(self.desc.vocab)?;
        if x.len() > self.desc.context {
            return Err(UpoError::LengthOverflow {
                len: x.len(),
                limit: self.desc.context,
            });
        }
        if opts.greedy {
            let y = self.decode(x, opts, None)?;
            return Ok(vec![y; n]);
        }
        let mut rng = seed::rng(seed, "policy-sample", &[]);
        (0..n).map(|_| self.decode(x, opts, Some(&mut rng))).collect()
    }

    /// Argmax decoding.
    pub fn greedy(&self, x: &Sequence, max_len: usize) -> Result<Sequence> {
        let opts = SamplingOptions {
            max_len,
            greedy: true,
            ..SamplingOptions::default()
        };
        Ok(self.sample(x, &opts, 1, 0)?.remove(0))
    }

    fn decode(
        &self,
        x: &Sequence,
        opts: &SamplingOptions,
        mut rng: Option<&mut rand_chacha::ChaCha8Rng>,
    ) -> Result<Sequence> {
        let cap = self.response_cap(x, opts);
        let mut out = Vec::with_capacity(cap);
        while out.len() < cap {
            let probs = self.next_token_distribution(x, &out)?;
            let token = match rng.as_deref_mut() {
                None => argmax_generatable(&probs),
                Some(rng) => nucleus_draw(&probs, opts.temperature, opts.top_p, rng.random()),
            };
            out.push(token as u32);
            if token as u32 == END {
                break;
            }
        }
        Ok(Sequence::response(out))
    }

    pub fn to_checkpoint(&self, iteration: usize, seed: u64) -> Result<Checkpoint> {
        Ok(Checkpoint {
            architecture: serde_json::to_value(Architecture {
                kind: ModelKind::Policy,
                backbone: self.desc,
            })?,
            iteration,
            seed,
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch: Architecture = serde_json::from_value(ck.architecture.clone())
            .map_err(|e| UpoError::CorruptCheckpoint(format!("architecture: {e}")))?;
        if arch.kind != ModelKind::Policy {
            return Err(UpoError::CorruptCheckpoint(format!(
                "expected a policy checkpoint, found {:?}",
                arch.kind
            )));
        }
        Self::new(arch.backbone, ck.params.clone())
    }
}

fn argmax_generatable(probs: &[f64]) -> usize {
    let mut best = END as usize;
    for (t, &p) in probs.iter().enumerate() {
        if generatable(t) && p > probs[best] {
            best = t;
        }
    }
    best
}

/// Temperature-scaled nucleus draw restricted to generatable tokens.
/// `u` is a uniform draw in `[0, 1)`.
fn nucleus_draw(probs: &[f64], temperature: f64, top_p: f64, u: f64) -> usize {
    let mut cands: Vec<(usize, f64)> = probs
        .iter()
        .enumerate()
        .filter(|(t, _)| generatable(*t))
        .map(|(t, &p)| (t, p.ln() / temperature))
        .collect();
    let max = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for c in cands.iter_mut() {
        c.1 = (c.1 - max).exp();
        total += c.1;
    }
    for c in cands.iter_mut() {
        c.1 /= total;
    }
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut kept = 0;
    let mut mass = 0.0;
    for c in &cands {
        kept += 1;
        mass += c.1;
        if mass >= top_p {
            break;
        }
    }
    let cands = &cands[..kept];
    let mut target = u * mass;
    for c in cands {
        if target < c.1 {
            return c.0;
        }
        target -= c.1;
    }
    cands[kept - 1].0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BackboneDescriptor {
        BackboneDescriptor {
            vocab: 10,
            context: 8,
            embed_dim: 3,
            hidden_dim: 4,
            dropout_rate: 0.1,
        }
    }

    #[test]
    fn uniform_policy_logprob() {
        let pi = PolicyModel::uniform(BackboneDescriptor::default()).unwrap();
        let x = Sequence::prompt(vec![5, 6]);
        let y = Sequence::response(vec![7, 8, 9]);
        let lp = pi.logprob(&x, &y).unwrap();
        assert!((lp - 3.0 * (1.0f64 / 32.0).ln()).abs() < 1e-12);
        assert!((lp + 10.3972).abs() < 1e-4);
    }

    #[test]
    fn empty_response_has_zero_logprob() {
        let pi = PolicyModel::init(small(), 3, 1.0).unwrap();
        let x = Sequence::prompt(vec![5, 6]);
        assert_eq!(pi.logprob(&x, &Sequence::response(vec![])).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_token_rejected() {
        let pi = PolicyModel::init(small(), 3, 1.0).unwrap();
        let x = Sequence::prompt(vec![5]);
        let y = Sequence::response(vec![10]);
        assert!(matches!(
            pi.logprob(&x, &y),
            Err(UpoError::TokenOutOfRange { token: 10, .. })
        ));
    }

    #[test]
    fn context_overflow_rejected() {
        let pi = PolicyModel::init(small(), 3, 1.0).unwrap();
        let x = Sequence::prompt(vec![5; 5]);
        let y = Sequence::response(vec![6; 4]);
        assert!(matches!(
            pi.logprob(&x, &y),
            Err(UpoError::LengthOverflow { len: 9, limit: 8 })
        ));
    }

    #[test]
    fn distribution_sums_to_one() {
        let pi = PolicyModel::init(small(), 9, 3.0).unwrap();
        let x = Sequence::prompt(vec![4, 7]);
        for prefix in [vec![], vec![5], vec![5, 9, 3]] {
            let p = pi.next_token_distribution(&x, &prefix).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn greedy_flag_duplicates_argmax() {
        let pi = PolicyModel::init(small(), 1, 4.0).unwrap();
        let x = Sequence::prompt(vec![4, 5]);
        let opts = SamplingOptions {
            greedy: true,
            max_len: 5,
            ..SamplingOptions::default()
        };
        let ys = pi.sample(&x, &opts, 3, 0).unwrap();
        assert_eq!(ys.len(), 3);
        assert!(ys.iter().all(|y| y == &ys[0]));
        // the first token is the argmax among generatable ids
        let p = pi.next_token_distribution(&x, &[]).unwrap();
        let first = ys[0].tokens[0] as usize;
        for t in 0..p.len() {
            if generatable(t) {
                assert!(p[first] >= p[t]);
            }
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let pi = PolicyModel::init(small(), 2, 2.0).unwrap();
        let x = Sequence::prompt(vec![4, 5]);
        let opts = SamplingOptions::default();
        let a = pi.sample(&x, &opts, 6, 77).unwrap();
        assert_eq!(a, pi.sample(&x, &opts, 6, 77).unwrap());
        assert_ne!(a, pi.sample(&x, &opts, 6, 78).unwrap());
        for y in &a {
            assert!(y.len() <= opts.max_len.min(8 - 2));
            assert!(y.is_plain());
            // END only at the end
            let end_pos = y.tokens.iter().position(|&t| t == END);
            assert!(end_pos.is_none() || end_pos == Some(y.len() - 1));
        }
    }

    #[test]
    fn invalid_sampling_options() {
        let pi = PolicyModel::init(small(), 2, 2.0).unwrap();
        let x = Sequence::prompt(vec![4]);
        let bad_t = SamplingOptions {
            temperature: 0.0,
            ..SamplingOptions::default()
        };
        assert!(pi.sample(&x, &bad_t, 1, 0).is_err());
        let bad_p = SamplingOptions {
            top_p: 0.0,
            ..SamplingOptions::default()
        };
        assert!(pi.sample(&x, &bad_p, 1, 0).is_err());
        assert!(pi.sample(&x, &SamplingOptions::default(), 0, 0).is_err());
    }

    #[test]
    fn nucleus_keeps_smallest_covering_set() {
        // generatable ids in a vocab of 6: 3 (END), 4, 5
        let probs = [0.0, 0.0, 0.0, 0.1, 0.6, 0.3];
        // top_p 0.5 keeps only token 4
        for u in [0.0, 0.3, 0.99] {
            assert_eq!(nucleus_draw(&probs, 1.0, 0.5, u), 4);
        }
        // top_p 0.85 keeps {4, 5}: mass 0.9, token 4 covers u*0.9 < 0.6
        assert_eq!(nucleus_draw(&probs, 1.0, 0.85, 0.5), 4);
        assert_eq!(nucleus_draw(&probs, 1.0, 0.85, 0.7), 5);
    }

    #[test]
    fn checkpoint_round_trip() {
        let pi = PolicyModel::init(small(), 5, 1.0).unwrap();
        let ck = pi.to_checkpoint(1, 5).unwrap();
        let back = PolicyModel::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, pi);
    }
}
