use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use upo_core::datagen::{label_seed_data, make_world};
use upo_core::models::{
    render_template, BackboneDescriptor, EstimatorModel, PolicyModel, RewardModel, SamplingOptions,
};
use upo_core::objectives::{dpo_loss, reward_loss, ReferenceLogProbs};
use upo_core::uncertainty::{information_gain, mc_predict, sampling_weights};

fn models(c: &mut Criterion) {
    let desc = BackboneDescriptor::default();
    let world = make_world(1, &desc).unwrap();
    let batch = label_seed_data(&world, 16, 0.3, 2).unwrap();
    let policy = PolicyModel::init(desc, 3, 1.0).unwrap();
    let reference = PolicyModel::init(desc, 4, 1.0).unwrap();
    let refs = ReferenceLogProbs::compute(&reference, &batch).unwrap();
    let rm = RewardModel::init(desc, 5).unwrap();
    let est_desc = desc.for_estimator();
    let est = EstimatorModel::init(est_desc, 6).unwrap();
    let t = &batch.triples[0];
    let template = render_template(&t.x(), &t.y_w(), &t.y_l(), est_desc.context).unwrap();

    c.bench_function("dpo_loss_16", |b| {
        b.iter(|| dpo_loss(&policy, &refs, black_box(&batch), 0.1).unwrap())
    });
    c.bench_function("reward_loss_16", |b| {
        b.iter(|| reward_loss(&rm, black_box(&batch)).unwrap())
    });
    c.bench_function("policy_sample_4", |b| {
        b.iter(|| {
            policy
                .sample(black_box(&t.x()), &SamplingOptions::default(), 4, 7)
                .unwrap()
        })
    });
    c.bench_function("mc_predict_t10", |b| {
        b.iter(|| mc_predict(&est, "t", black_box(&template), 10, 0.1, 8).unwrap())
    });
}

fn uncertainty(c: &mut Criterion) {
    let gains: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.618).fract() * 0.9).collect();
    c.bench_function("sampling_weights_1000", |b| {
        b.iter(|| sampling_weights(black_box(&gains), 1.0).unwrap())
    });
    let mc = upo_core::uncertainty::McPrediction::new("m", (0..10).map(|i| i as f64 / 10.0).collect()).unwrap();
    c.bench_function("information_gain_t10", |b| b.iter(|| information_gain(black_box(&mc))));
}

criterion_group!(benches, models, uncertainty);
criterion_main!(benches);
