use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sequence::END;
use crate::autodiff::{DropoutLayout, Graph, Layout, NodeId, ParamVector};
use crate::error::{Result, UpoError};
use crate::seed;

/// Shape of the shared backbone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneDescriptor {
    pub vocab: usize,
    pub context: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
}

impl Default for BackboneDescriptor {
    fn default() -> Self {
        Self {
            vocab: 32,
            context: 16,
            embed_dim: 16,
            hidden_dim: 32,
            dropout_rate: 0.1,
        }
    }
}

/// Number of pooled segments: prompt, first response, second response.
pub(crate) const SEGMENTS: usize = 3;

impl BackboneDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 4 {
            return Err(UpoError::Config(format!("vocab must be >= 4, got {}", self.vocab)));
        }
        if self.context < 4 {
            return Err(UpoError::Config(format!("context must be >= 4, got {}", self.context)));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(UpoError::Config("embedding and hidden dims must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(UpoError::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Same backbone with a context wide enough for a full estimator template.
    pub fn for_estimator(&self) -> Self {
        Self {
            context: 2 * self.context + 4,
            ..*self
        }
    }

    /// Per segment a token mean and a bigram mean, plus the last token.
    pub(crate) fn feature_dim(&self) -> usize {
        (2 * SEGMENTS + 1) * self.embed_dim
    }

    pub(crate) fn layout(&self, head_rows: usize) -> Layout {
        let mut layout = Layout::new();
        layout
            .push("embed", self.vocab, self.embed_dim)
            .push("bigram_embed", self.vocab * self.vocab, self.embed_dim)
            .push("last_embed", self.vocab, self.embed_dim)
            .push("w_hidden", self.hidden_dim, self.feature_dim())
            .push("b_hidden", self.hidden_dim, 1)
            .push("w_head", head_rows, self.hidden_dim)
            .push("b_head", head_rows, 1);
        layout
    }

    /// Dropout sites: site 0 on the pooled features, site 1 on the hidden layer.
    pub fn dropout_layout(&self) -> DropoutLayout {
        DropoutLayout::new(vec![self.feature_dim(), self.hidden_dim])
    }

    pub(crate) fn check_params(&self, params: &ParamVector, head_rows: usize) -> Result<()> {
        self.validate()?;
        let expected = self.layout(head_rows);
        if params.layout() != &expected {
            return Err(UpoError::invalid(
                "parameter layout does not match the backbone descriptor",
            ));
        }
        Ok(())
    }

    /// Random initialization: embeddings N(0, 1), He-scaled hidden weights,
    /// head weights N(0, head_scale^2 / hidden_dim), zero biases.
    pub(crate) fn init_params(&self, head_rows: usize, root: u64, head_scale: f64) -> ParamVector {
        let mut p = ParamVector::zeros(self.layout(head_rows));
        let mut rng = seed::rng(root, "init", &[head_rows as u64]);
        fn fill(p: &mut ParamVector, name: &str, std: f64, rng: &mut rand_chacha::ChaCha8Rng) {
            if std == 0.0 {
                return;
            }
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in p.segment_mut(name).expect("segment exists") {
                *v = normal.sample(rng);
            }
        }
        fill(&mut p, "embed", 1.0, &mut rng);
        fill(&mut p, "bigram_embed", 1.0, &mut rng);
        fill(&mut p, "last_embed", 1.0, &mut rng);
        fill(&mut p, "w_hidden", (2.0 / self.feature_dim() as f64).sqrt(), &mut rng);
        fill(&mut p, "w_head", head_scale / (self.hidden_dim as f64).sqrt(), &mut rng);
        p
    }
}

/// Which of the three models a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Policy,
    Reward,
    Estimator,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Architecture {
    pub kind: ModelKind,
    pub backbone: BackboneDescriptor,
}

/// Parameter nodes of one backbone instance inside a graph.
pub(crate) struct BackboneNodes {
    desc: BackboneDescriptor,
    embed_offset: usize,
    bigram_offset: usize,
    last_offset: usize,
    w_hidden: NodeId,
    b_hidden: NodeId,
    w_head: NodeId,
    b_head: NodeId,
    head_rows: usize,
}

impl BackboneNodes {
    pub fn new(g: &mut Graph, desc: &BackboneDescriptor, layout: &Layout, head_rows: usize) -> Self {
        let seg = |name: &str| layout.get(name).expect("backbone layout segment");
        let param = |g: &mut Graph, name: &str| {
            let s = seg(name);
            g.param(s.offset, s.len())
        };
        let w_hidden = param(g, "w_hidden");
        let b_hidden = param(g, "b_hidden");
        let w_head = param(g, "w_head");
        let b_head = param(g, "b_head");
        Self {
            desc: *desc,
            embed_offset: seg("embed").offset,
            bigram_offset: seg("bigram_embed").offset,
            last_offset: seg("last_embed").offset,
            w_hidden,
            b_hidden,
            w_head,
            b_head,
            head_rows,
        }
    }

    pub fn pooler(&self) -> Pooler {
        Pooler {
            sums: [None; SEGMENTS],
            counts: [0; SEGMENTS],
            pair_sums: [None; SEGMENTS],
            pair_counts: [0; SEGMENTS],
            prev: [None; SEGMENTS],
            last: None,
        }
    }

    /// Pooled features -> dropout -> relu hidden -> dropout -> head logits.
    pub fn head(&self, g: &mut Graph, pooler: &Pooler) -> NodeId {
        let d = self.desc.embed_dim;
        let mut parts = Vec::with_capacity(2 * SEGMENTS + 1);
        let mean = |g: &mut Graph, sum: Option<NodeId>, n: usize| match sum {
            Some(sum) => g.scale(sum, 1.0 / n as f64),
            None => g.constant(vec![0.0; d]),
        };
        for s in 0..SEGMENTS {
            parts.push(mean(g, pooler.sums[s], pooler.counts[s]));
            parts.push(mean(g, pooler.pair_sums[s], pooler.pair_counts[s]));
        }
        parts.push(match pooler.last {
            Some(tok) => g.param(self.last_offset + tok as usize * d, d),
            None => g.constant(vec![0.0; d]),
        });
        let features = g.concat(&parts);
        let features = g.dropout(features, 0);
        let pre = g.matvec(self.w_hidden, features, self.desc.hidden_dim, self.desc.feature_dim());
        let pre = g.add(pre, self.b_hidden);
        let hidden = g.relu(pre);
        let hidden = g.dropout(hidden, 1);
        let out = g.matvec(self.w_head, hidden, self.head_rows, self.desc.hidden_dim);
        g.add(out, self.b_head)
    }
}

/// Running per-segment embedding sums for a token stream.
///
/// Bigrams skip the structural tokens (BOS, SEP, EOS); the first bigram of a
/// later segment starts from the last token of the prompt segment.
#[derive(Clone)]
pub(crate) struct Pooler {
    sums: [Option<NodeId>; SEGMENTS],
    counts: [usize; SEGMENTS],
    pair_sums: [Option<NodeId>; SEGMENTS],
    pair_counts: [usize; SEGMENTS],
    prev: [Option<u32>; SEGMENTS],
    last: Option<u32>,
}

fn accumulate(g: &mut Graph, slot: &mut Option<NodeId>, v: NodeId) {
    *slot = Some(match *slot {
        Some(sum) => g.add(sum, v),
        None => v,
    });
}

impl Pooler {
    pub fn push(&mut self, g: &mut Graph, nodes: &BackboneNodes, token: u32, segment: usize) {
        let d = nodes.desc.embed_dim;
        let v = nodes.desc.vocab;
        let segment = segment.min(SEGMENTS - 1);
        let emb = g.param(nodes.embed_offset + token as usize * d, d);
        accumulate(g, &mut self.sums[segment], emb);
        self.counts[segment] += 1;
        self.last = Some(token);
        if token < END {
            return;
        }
        let prev = self.prev[segment].or(if segment > 0 { self.prev[0] } else { None });
        if let Some(p) = prev {
            let row = p as usize * v + token as usize;
            let pair = g.param(nodes.bigram_offset + row * d, d);
            accumulate(g, &mut self.pair_sums[segment], pair);
            self.pair_counts[segment] += 1;
        }
        self.prev[segment] = Some(token);
    }
}
