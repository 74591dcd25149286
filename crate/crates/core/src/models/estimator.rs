use super::backbone::{Architecture, BackboneDescriptor, BackboneNodes, ModelKind};
use super::sequence::{Sequence, SEP};
use crate::autodiff::{Checkpoint, DropoutLayout, Graph, Layout, MaskSet, NodeId, ParamVector};
use crate::error::{Result, UpoError};
use crate::seed;

/// Binary classifier over rendered templates; class 1 means the labeled
/// chosen response really is preferred.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorModel {
    desc: BackboneDescriptor,
    params: ParamVector,
}

impl EstimatorModel {
    pub fn layout(desc: &BackboneDescriptor) -> Layout {
        desc.layout(2)
    }

    pub fn new(desc: BackboneDescriptor, params: ParamVector) -> Result<Self> {
        desc.check_params(&params, 2)?;
        Ok(Self { desc, params })
    }

    pub fn zeros(desc: BackboneDescriptor) -> Result<Self> {
        desc.validate()?;
        Ok(Self {
            params: ParamVector::zeros(Self::layout(&desc)),
            desc,
        })
    }

    pub fn init(desc: BackboneDescriptor, seed: u64) -> Result<Self> {
        desc.validate()?;
        Ok(Self {
            params: desc.init_params(2, seed::derive(seed, "estimator", &[]), 1.0),
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

    pub fn dropout_layout(&self) -> DropoutLayout {
        self.desc.dropout_layout()
    }

    pub(crate) fn check(&self, template: &Sequence) -> Result<()> {
        template.check_vocab(self.desc.vocab)?;
        if template.len() > self.desc.context {
            return Err(UpoError::LengthOverflow {
                len: template.len(),
                limit: self.desc.context,
            });
        }
        Ok(())
    }

    pub(crate) fn nodes(&self, g: &mut Graph) -> BackboneNodes {
        BackboneNodes::new(g, &self.desc, self.params.layout(), 2)
    }

    /// Class log-probabilities `[log p(c=0), log p(c=1)]`. Each separator
    /// opens the next pooled segment.
    pub(crate) fn build_class_logprobs(&self, g: &mut Graph, nodes: &BackboneNodes, template: &Sequence) -> NodeId {
        let mut pooler = nodes.pooler();
        let mut segment = 0;
        for &t in &template.tokens {
            if t == SEP {
                segment += 1;
            }
            pooler.push(g, nodes, t, segment);
        }
        let logits = nodes.head(g, &pooler);
        g.log_softmax(logits)
    }

    /// `[p(c=0), p(c=1)]`; one stochastic pass when `masks` is given.
    pub fn class_probs(&self, template: &Sequence, masks: Option<&MaskSet>) -> Result<[f64; 2]> {
        self.check(template)?;
        let mut g = Graph::new();
        let nodes = self.nodes(&mut g);
        let lsm = self.build_class_logprobs(&mut g, &nodes, template);
        let probs = g.exp(lsm);
        let v = g.forward(&self.params, &[], masks)?;
        let p = v.get(probs);
        Ok([p[0], p[1]])
    }

    /// Probability that the template's chosen response is genuinely preferred.
    pub fn prob(&self, template: &Sequence, masks: Option<&MaskSet>) -> Result<f64> {
        Ok(self.class_probs(template, masks)?[1])
    }

    pub fn to_checkpoint(&self, iteration: usize, seed: u64) -> Result<Checkpoint> {
        Ok(Checkpoint {
            architecture: serde_json::to_value(Architecture {
                kind: ModelKind::Estimator,
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
        if arch.kind != ModelKind::Estimator {
            return Err(UpoError::CorruptCheckpoint(format!(
                "expected an estimator checkpoint, found {:?}",
                arch.kind
            )));
        }
        Self::new(arch.backbone, ck.params.clone())
    }
}
