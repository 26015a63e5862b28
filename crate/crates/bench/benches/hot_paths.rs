use std::hint::black_box;

use beampred_core::sim::{collect_dataset, DropRun, Scenario};
use beampred_core::{Model, ModelConfig, ModelFamily, SimConfig, TrainConfig, UseCase};
use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;

fn measurement(c: &mut Criterion) {
    let cfg = SimConfig { seed: 1, ..SimConfig::default() };
    let scenario = Scenario::new(&cfg).unwrap();
    let mut run = DropRun::new(&cfg, &scenario, 0, 1);
    let mut t = 0;
    c.bench_function("observe_one_ue_instant", |b| {
        b.iter(|| {
            t += 1;
            black_box(run.observe(0, t).unwrap())
        })
    });
}

fn inference(c: &mut Criterion) {
    for (family, n_b, n_a) in [(ModelFamily::Sbp1Dnn, 16, 64), (ModelFamily::Sbp2CnnDnn, 16, 64), (ModelFamily::TbpLstmCnn, 16, 32)] {
        let cfg = ModelConfig::new(family, n_b, n_a, 5).unwrap();
        let model = Model::new(cfg.clone(), 0).unwrap();
        let x = Array2::from_elem((256, cfg.input_dim()), 0.1);
        c.bench_function(&format!("predict_256_{family:?}_{n_b}"), |b| b.iter(|| black_box(model.predict_proba(&x).unwrap())));
    }
}

fn training(c: &mut Criterion) {
    let mut cfg = SimConfig { seed: 2, use_case: UseCase::Sbp2, ..SimConfig::default() };
    cfg.scale.n_drops = 2;
    cfg.scale.n_instants = 10;
    let (dataset, _) = collect_dataset(&cfg).unwrap();
    let model_cfg = ModelConfig::for_schema(&dataset.schema).unwrap();
    let train = TrainConfig { epochs: 1, ..cfg.train.clone() };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("one_epoch_sbp2_16", |b| {
        b.iter(|| black_box(beampred_core::models::train_model(&model_cfg, &dataset, &train).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, measurement, inference, training);
criterion_main!(benches);
