mod common;

use common::{toy_batch, toy_desc};
use upo_core::autodiff::{grad_check, Graph, Layout, MaskSet, ParamVector};
use upo_core::models::{render_template, EstimatorModel, PolicyModel, RewardModel, Sequence};
use upo_core::objectives::{
    estimator_loss, nll_regularizer, policy_loss, reward_loss, sft_loss, upo_loss, LabeledTemplate, NllSign,
    PolicyLossParams, ReferenceLogProbs,
};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn reward_loss_gradient() {
    let rm = RewardModel::init(toy_desc(), 11).unwrap();
    let b = toy_batch();
    let err = grad_check(
        |p| {
            let r = reward_loss(&rm.with_params(p.clone())?, &b)?;
            Ok((r.loss, r.grad))
        },
        rm.params(),
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn policy_objective_gradients() {
    let desc = toy_desc();
    let pi = PolicyModel::init(desc, 12, 1.0).unwrap();
    let reference = PolicyModel::init(desc, 13, 1.0).unwrap();
    let b = toy_batch()
        .with_alphas(vec![0.0, 0.2, 0.5, 0.9])
        .unwrap()
        .with_rewards(vec![1.5, -0.3, 0.25, 4.0])
        .unwrap();
    let refs = ReferenceLogProbs::compute(&reference, &b).unwrap();
    let settings = [
        PolicyLossParams::dpo(0.1),
        PolicyLossParams::upo(0.1),
        PolicyLossParams::upo(0.5).with_nll(1.0, 1e-6, NllSign::Corrected),
        PolicyLossParams::upo(0.1).with_nll(0.3, 1e-6, NllSign::PaperLiteral),
    ];
    for s in settings {
        let err = grad_check(
            |p| {
                let r = policy_loss(&pi.with_params(p.clone())?, &refs, &b, s)?;
                Ok((r.loss, r.grad))
            },
            pi.params(),
            EPS,
        )
        .unwrap();
        assert!(err < TOL, "{s:?}: {err}");
    }
    let err = grad_check(
        |p| {
            let r = nll_regularizer(&pi.with_params(p.clone())?, &b, 1.0, 1e-6, NllSign::Corrected)?;
            Ok((r.loss, r.grad))
        },
        pi.params(),
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "nll: {err}");
    let err = grad_check(
        |p| {
            let r = upo_loss(&pi.with_params(p.clone())?, &refs, &b, 0.1)?;
            Ok((r.loss, r.grad))
        },
        pi.params(),
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "upo: {err}");
}

#[test]
fn sft_loss_gradient() {
    let pi = PolicyModel::init(toy_desc(), 14, 1.0).unwrap();
    let demos = vec![
        (Sequence::prompt(vec![4, 5]), Sequence::response(vec![6, 7, 3])),
        (Sequence::prompt(vec![8]), Sequence::response(vec![3])),
    ];
    let err = grad_check(
        |p| {
            let r = sft_loss(&pi.with_params(p.clone())?, &demos)?;
            Ok((r.loss, r.grad))
        },
        pi.params(),
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn estimator_loss_gradient_with_frozen_masks() {
    let desc = toy_desc().for_estimator();
    let est = EstimatorModel::init(desc, 15).unwrap();
    let b = toy_batch();
    let examples: Vec<LabeledTemplate> = b
        .triples
        .iter()
        .enumerate()
        .map(|(i, t)| LabeledTemplate {
            template: render_template(&t.x(), &t.y_w(), &t.y_l(), desc.context).unwrap(),
            label: i % 2 == 0,
        })
        .collect();
    let masks: Vec<MaskSet> = (0..examples.len())
        .map(|i| MaskSet::sample(&est.dropout_layout(), 0.1, 100 + i as u64).unwrap())
        .collect();
    for m in [None, Some(masks.as_slice())] {
        let err = grad_check(
            |p| {
                let r = estimator_loss(&est.with_params(p.clone())?, &examples, m)?;
                Ok((r.loss, r.grad))
            },
            est.params(),
            EPS,
        )
        .unwrap();
        assert!(err < TOL, "masks {}: {err}", m.is_some());
    }
}

fn mlp() -> (Graph, upo_core::autodiff::NodeId, ParamVector) {
    let mut layout = Layout::new();
    layout.push("w1", 2, 3).push("b1", 2, 1).push("w2", 1, 2);
    let values = vec![
        1.0, -2.0, 0.5, // w1 row 0
        0.0, 1.0, 1.0, // w1 row 1
        0.5, -1.0, // b1
        2.0, -3.0, // w2
    ];
    let params = ParamVector::from_values(layout, values).unwrap();
    let mut g = Graph::new();
    let x = g.input(0, 3);
    let w1 = g.param(0, 6);
    let b1 = g.param(6, 2);
    let w2 = g.param(8, 2);
    let z = g.matvec(w1, x, 2, 3);
    let z = g.add(z, b1);
    let h = g.relu(z);
    let out = g.matvec(w2, h, 1, 2);
    let out = g.sigmoid(out);
    (g, out, params)
}

#[test]
fn mlp_matches_hand_evaluation() {
    // x = (1, 0.5, 2): z = (1 - 1 + 1 + 0.5, 0 + 0.5 + 2 - 1) = (1.5, 1.5)
    // h = (1.5, 1.5), w2.h = 3 - 4.5 = -1.5, out = sigmoid(-1.5)
    let (g, out, params) = mlp();
    let x = [1.0, 0.5, 2.0];
    let v = g.forward(&params, &x, None).unwrap();
    let s = 1.0 / (1.0 + 1.5f64.exp());
    assert!((v.scalar(out) - s).abs() < 1e-15);
    // d out / d w2 = s(1-s) h; d out / d b1 = s(1-s) w2 (both units active)
    let grad = g.backward(&v, out).unwrap();
    let ds = s * (1.0 - s);
    let gv = grad.values();
    assert!((gv[8] - ds * 1.5).abs() < 1e-15);
    assert!((gv[9] - ds * 1.5).abs() < 1e-15);
    assert!((gv[6] - ds * 2.0).abs() < 1e-15);
    assert!((gv[7] + ds * 3.0).abs() < 1e-15);
    // d out / d w1[0][j] = ds * w2[0] * x_j
    for j in 0..3 {
        assert!((gv[j] - ds * 2.0 * x[j]).abs() < 1e-15);
        assert!((gv[3 + j] + ds * 3.0 * x[j]).abs() < 1e-15);
    }
    // Dead unit passes no gradient.
    let v = g.forward(&params, &[-5.0, 0.0, 0.0], None).unwrap();
    let grad = g.backward(&v, out).unwrap();
    assert_eq!(&grad.values()[0..3], &[0.0, 0.0, 0.0]);
}

#[test]
fn forward_is_pure() {
    let (g, out, params) = mlp();
    let a = g.forward(&params, &[0.3, -0.2, 0.9], None).unwrap().scalar(out);
    let b = g.forward(&params, &[0.3, -0.2, 0.9], None).unwrap().scalar(out);
    assert_eq!(a.to_bits(), b.to_bits());
}
