use super::backbone::{Architecture, BackboneDescriptor, BackboneNodes, ModelKind};
use super::sequence::Sequence;
use crate::autodiff::{Checkpoint, Graph, Layout, NodeId, ParamVector};
use crate::error::{Result, UpoError};
use crate::seed;

/// Scalar reward `r(x, y)` read from a one-row head.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardModel {
    desc: BackboneDescriptor,
    params: ParamVector,
}

impl RewardModel {
    pub fn layout(desc: &BackboneDescriptor) -> Layout {
        desc.layout(1)
    }

    pub fn new(desc: BackboneDescriptor, params: ParamVector) -> Result<Self> {
        desc.check_params(&params, 1)?;
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
            params: desc.init_params(1, seed::derive(seed, "reward", &[]), 1.0),
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

    pub(crate) fn check(&self, x: &Sequence, y: &Sequence) -> Result<()> {
        x.check_vocab(self.desc.vocab)?;
        y.check_vocab(self.desc.vocab)?;
        let len = x.len() + y.len();
        if len > self.desc.context {
            return Err(UpoError::LengthOverflow {
                len,
                limit: self.desc.context,
            });
        }
        Ok(())
    }

    pub(crate) fn nodes(&self, g: &mut Graph) -> BackboneNodes {
        BackboneNodes::new(g, &self.desc, self.params.layout(), 1)
    }

    pub(crate) fn build_score(&self, g: &mut Graph, nodes: &BackboneNodes, x: &Sequence, y: &Sequence) -> NodeId {
        let mut pooler = nodes.pooler();
        for &t in &x.tokens {
            pooler.push(g, nodes, t, 0);
        }
        for &t in &y.tokens {
            pooler.push(g, nodes, t, 1);
        }
        let head = nodes.head(g, &pooler);
        g.pick(head, 0)
    }

    pub fn score(&self, x: &Sequence, y: &Sequence) -> Result<f64> {
        self.check(x, y)?;
        let mut g = Graph::new();
        let nodes = self.nodes(&mut g);
        let out = self.build_score(&mut g, &nodes, x, y);
        let r = g.forward(&self.params, &[], None)?.scalar(out);
        if !r.is_finite() {
            return Err(UpoError::NonFinite("reward score".into()));
        }
        Ok(r)
    }

    pub fn to_checkpoint(&self, iteration: usize, seed: u64) -> Result<Checkpoint> {
        Ok(Checkpoint {
            architecture: serde_json::to_value(Architecture {
                kind: ModelKind::Reward,
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
        if arch.kind != ModelKind::Reward {
            return Err(UpoError::CorruptCheckpoint(format!(
                "expected a reward checkpoint, found {:?}",
                arch.kind
            )));
        }
        Self::new(arch.backbone, ck.params.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_scores_zero() {
        let rm = RewardModel::zeros(BackboneDescriptor::default()).unwrap();
        for (x, y) in [(vec![4, 5], vec![6, 7, 3]), (vec![], vec![]), (vec![31], vec![4])] {
            assert_eq!(rm.score(&Sequence::prompt(x), &Sequence::response(y)).unwrap(), 0.0);
        }
    }

    #[test]
    fn score_is_pure() {
        let rm = RewardModel::init(BackboneDescriptor::default(), 4).unwrap();
        let x = Sequence::prompt(vec![4, 9, 12]);
        let y = Sequence::response(vec![20, 21, 3]);
        let a = rm.score(&x, &y).unwrap();
        assert_eq!(a.to_bits(), rm.score(&x, &y).unwrap().to_bits());
        assert!(a.is_finite());
    }

    #[test]
    fn length_overflow() {
        let rm = RewardModel::init(BackboneDescriptor::default(), 4).unwrap();
        let x = Sequence::prompt(vec![4; 10]);
        let y = Sequence::response(vec![5; 7]);
        assert!(matches!(
            rm.score(&x, &y),
            Err(UpoError::LengthOverflow { len: 17, limit: 16 })
        ));
    }
}
