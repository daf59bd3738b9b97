// Scratch probe for learning behavior; superseded by the acceptance suite.

use clb_core::bundle::{Activation, BundleConfig};
use clb_core::data::{gen_synthetic, SynthKind, SynthSpec};
use clb_core::tasks::{ClbModel, HwnModel, TaskKind, TaskSpec};
use clb_core::training::{evaluate, train, TrainConfig};
use clb_core::Split;
use std::time::Instant;

fn mo_data(n: usize) -> clb_core::Dataset {
    gen_synthetic(&SynthSpec::new(SynthKind::MultiOutputCorrelated, n), 42).unwrap()
}

fn mo_task() -> TaskSpec {
    TaskSpec {
        kind: TaskKind::MultiOutput,
        inputs: vec![10],
        outputs: vec![2, 2, 2],
        projection_dim: None,
        use_label_embedding: false,
        bags: false,
    }
}

#[test]
#[ignore]
fn probe_overfit_configs() {
    let data = mo_data(200);
    for (patience, d_c, d_m, lr) in [
        (10usize, 16usize, 8usize, 0.001f64),
        (20, 16, 8, 0.001),
        (20, 24, 12, 0.001),
        (20, 16, 8, 0.003),
        (40, 16, 8, 0.003),
    ] {
        let cfg = BundleConfig {
            n_layers: 10,
            d_central: d_c,
            d_mini: d_m,
            n_minicolumns: 3,
            activation: Activation::Relu,
            ..BundleConfig::default()
        };
        let mut model = ClbModel::new(cfg, mo_task(), 1).unwrap();
        let tcfg = TrainConfig {
            seed: 1,
            patience_epochs: patience,
            lr0: lr,
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let report = train(&mut model, &data, &tcfg).unwrap();
        let tr = evaluate(&model, &data, Split::Train).unwrap();
        let te = evaluate(&model, &data, Split::Test).unwrap();
        println!(
            "patience={patience} d=({d_c},{d_m}) lr={lr}: epochs={} train_f1={:.4} test_f1={:.4} {:?}",
            report.epochs.len(),
            tr.micro_f1,
            te.micro_f1,
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_hwn_vs_clb() {
    let data = mo_data(200);
    // CLB
    let cfg = BundleConfig {
        n_layers: 10,
        d_central: 16,
        d_mini: 8,
        n_minicolumns: 3,
        activation: Activation::Relu,
        ..BundleConfig::default()
    };
    for seed in 0..3u64 {
        let mut model = ClbModel::new(cfg.clone(), mo_task(), seed).unwrap();
        let tcfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &tcfg).unwrap();
        let te = evaluate(&model, &data, Split::Test).unwrap();
        println!("CLB seed={seed}: test_f1={:.4} hl={:.4}", te.micro_f1, te.hamming_loss);
    }
    // HWN per label: combine predictions
    for seed in 0..3u64 {
        let mut preds: Vec<Vec<usize>> = Vec::new();
        for label in 0..3usize {
            let proj = data.project_output(label).unwrap();
            let mut hwn = HwnModel::new(10, 16, 10, Activation::Relu, 0, seed).unwrap();
            let tcfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            train(&mut hwn, &proj, &tcfg).unwrap();
            let idx = proj.split_indices(Split::Test);
            let col: Vec<usize> = idx
                .iter()
                .map(|&i| {
                    clb_core::training::Model::predict(&hwn, &proj.samples[i])
                        .unwrap()
                        .hard()[0]
                })
                .collect();
            if preds.is_empty() {
                preds = col.iter().map(|&p| vec![p]).collect();
            } else {
                for (row, &p) in preds.iter_mut().zip(col.iter()) {
                    row.push(p);
                }
            }
        }
        let targets = data.split_targets(Split::Test);
        let f1 = clb_core::data::micro_f1(&preds, &targets, &[2, 2, 2]).unwrap();
        println!("HWN seed={seed}: test_f1={f1:.4}");
    }
}

#[test]
#[ignore]
fn probe_embedding_similarity() {
    let data = mo_data(400);
    let task = TaskSpec {
        use_label_embedding: true,
        ..mo_task()
    };
    for seed in 0..5u64 {
        let cfg = BundleConfig {
            n_layers: 10,
            d_central: 16,
            d_mini: 8,
            n_minicolumns: 3,
            share_minicolumns: true,
            embed_dim: Some(4),
            activation: Activation::Relu,
            ..BundleConfig::default()
        };
        let mut model = ClbModel::new(cfg, task.clone(), seed).unwrap();
        let tcfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &tcfg).unwrap();
        let te = evaluate(&model, &data, Split::Test).unwrap();
        let embed = model.params.embedding().unwrap();
        let (sim, _) = clb_core::data::embedding_similarity_matrix(embed);
        println!(
            "seed={seed}: test_f1={:.3} sim(0,1)={:.3} sim(0,2)={:.3} sim(1,2)={:.3} ok={}",
            te.micro_f1,
            sim[0][1],
            sim[0][2],
            sim[1][2],
            sim[0][1] > sim[0][2]
        );
    }
}
// appended probe
#[test]
#[ignore]
fn probe_sample_sizes() {
    for n in [100usize, 120, 160, 200] {
        let data = mo_data(n);
        let cfg = BundleConfig {
            n_layers: 10,
            d_central: 16,
            d_mini: 8,
            n_minicolumns: 3,
            activation: Activation::Relu,
            ..BundleConfig::default()
        };
        let mut clb_f1 = Vec::new();
        let mut hwn_f1 = Vec::new();
        for seed in 0..5u64 {
            let mut model = ClbModel::new(cfg.clone(), mo_task(), seed).unwrap();
            let tcfg = TrainConfig { seed, ..TrainConfig::default() };
            train(&mut model, &data, &tcfg).unwrap();
            clb_f1.push(evaluate(&model, &data, Split::Test).unwrap().micro_f1);

            let mut preds: Vec<Vec<usize>> = Vec::new();
            for label in 0..3usize {
                let proj = data.project_output(label).unwrap();
                let mut hwn = HwnModel::new(10, 16, 10, Activation::Relu, 0, seed).unwrap();
                let tcfg = TrainConfig { seed, ..TrainConfig::default() };
                train(&mut hwn, &proj, &tcfg).unwrap();
                let idx = proj.split_indices(Split::Test);
                let col: Vec<usize> = idx.iter().map(|&i| {
                    clb_core::training::Model::predict(&hwn, &proj.samples[i]).unwrap().hard()[0]
                }).collect();
                if preds.is_empty() {
                    preds = col.iter().map(|&p| vec![p]).collect();
                } else {
                    for (row, &p) in preds.iter_mut().zip(col.iter()) { row.push(p); }
                }
            }
            let targets = data.split_targets(Split::Test);
            hwn_f1.push(clb_core::data::micro_f1(&preds, &targets, &[2, 2, 2]).unwrap());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!("n={n}: CLB mean={:.4} {:?} | HWN mean={:.4} {:?}", mean(&clb_f1), clb_f1.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>(), mean(&hwn_f1), hwn_f1.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
    }
}
// appended probe
#[test]
#[ignore]
fn probe_capacity_at_n120() {
    let data = mo_data(120);
    for (dc, dm, hd, lr) in [
        (16usize, 8usize, 16usize, 0.001f64),
        (24, 12, 24, 0.001),
        (16, 8, 16, 0.002),
        (24, 12, 24, 0.002),
    ] {
        let cfg = BundleConfig {
            n_layers: 10,
            d_central: dc,
            d_mini: dm,
            n_minicolumns: 3,
            activation: Activation::Relu,
            ..BundleConfig::default()
        };
        let mut clb_f1 = Vec::new();
        let mut hwn_f1 = Vec::new();
        for seed in 0..5u64 {
            let mut model = ClbModel::new(cfg.clone(), mo_task(), seed).unwrap();
            let tcfg = TrainConfig { seed, lr0: lr, ..TrainConfig::default() };
            train(&mut model, &data, &tcfg).unwrap();
            clb_f1.push(evaluate(&model, &data, Split::Test).unwrap().micro_f1);

            let mut preds: Vec<Vec<usize>> = Vec::new();
            for label in 0..3usize {
                let proj = data.project_output(label).unwrap();
                let mut hwn = HwnModel::new(10, hd, 10, Activation::Relu, 0, seed).unwrap();
                let tcfg = TrainConfig { seed, lr0: lr, ..TrainConfig::default() };
                train(&mut hwn, &proj, &tcfg).unwrap();
                let idx = proj.split_indices(Split::Test);
                let col: Vec<usize> = idx.iter().map(|&i| {
                    clb_core::training::Model::predict(&hwn, &proj.samples[i]).unwrap().hard()[0]
                }).collect();
                if preds.is_empty() {
                    preds = col.iter().map(|&p| vec![p]).collect();
                } else {
                    for (row, &p) in preds.iter_mut().zip(col.iter()) { row.push(p); }
                }
            }
            let targets = data.split_targets(Split::Test);
            hwn_f1.push(clb_core::data::micro_f1(&preds, &targets, &[2, 2, 2]).unwrap());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!("d=({dc},{dm}) hwn_d={hd} lr={lr}: CLB mean={:.4} | HWN mean={:.4} | gap={:+.4}",
            mean(&clb_f1), mean(&hwn_f1), mean(&clb_f1) - mean(&hwn_f1));
    }
}
// appended probe
fn logistic_accuracy(data: &clb_core::Dataset, view: usize) -> f64 {
    // Plain logistic regression on one view via gradient descent.
    let dim = data.meta.part_dims[view];
    let train = data.split_indices(Split::Train);
    let test = data.split_indices(Split::Test);
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    for _ in 0..500 {
        let mut gw = vec![0.0f64; dim];
        let mut gb = 0.0f64;
        for &i in &train {
            let x = data.samples[i].parts[view].to_dense();
            let y = data.samples[i].targets[0] as f64;
            let z: f64 = w.iter().zip(x.iter()).map(|(a, c)| a * c).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let d = p - y;
            for (g, xv) in gw.iter_mut().zip(x.iter()) { *g += d * xv; }
            gb += d;
        }
        let n = train.len() as f64;
        for (wv, g) in w.iter_mut().zip(gw.iter()) { *wv -= 0.5 * g / n; }
        b -= 0.5 * gb / n;
    }
    let mut correct = 0usize;
    for &i in &test {
        let x = data.samples[i].parts[view].to_dense();
        let z: f64 = w.iter().zip(x.iter()).map(|(a, c)| a * c).sum::<f64>() + b;
        let pred = usize::from(z > 0.0);
        if pred == data.samples[i].targets[0] { correct += 1; }
    }
    correct as f64 / test.len() as f64
}

#[test]
#[ignore]
fn probe_xor_fast_configs() {
    for (n, t, dc, dm, dp, lr) in [
        (400usize, 6usize, 10usize, 5usize, 6usize, 0.002f64),
        (400, 10, 12, 6, 8, 0.001),
        (300, 6, 12, 6, 8, 0.002),
    ] {
        let data = gen_synthetic(&SynthSpec::new(SynthKind::MultiViewXor, n), 42).unwrap();
        let task = TaskSpec {
            kind: TaskKind::MultiInput,
            inputs: vec![4, 6],
            outputs: vec![2],
            projection_dim: Some(dp),
            use_label_embedding: false,
            bags: false,
        };
        let cfg = BundleConfig {
            n_layers: t,
            d_central: dc,
            d_mini: dm,
            n_minicolumns: 2,
            activation: Activation::Relu,
            ..BundleConfig::default()
        };
        let t0 = Instant::now();
        let mut f1s = Vec::new();
        for seed in 0..5u64 {
            let mut model = ClbModel::new(cfg.clone(), task.clone(), seed).unwrap();
            let tcfg = TrainConfig { seed, lr0: lr, ..TrainConfig::default() };
            train(&mut model, &data, &tcfg).unwrap();
            f1s.push(evaluate(&model, &data, Split::Test).unwrap().micro_f1);
        }
        let mean = f1s.iter().sum::<f64>() / 5.0;
        let acc0 = logistic_accuracy(&data, 0);
        let acc1 = logistic_accuracy(&data, 1);
        println!("=> n={n} T={t} d=({dc},{dm}) dp={dp} lr={lr}: CLB mean={mean:.4} {f1s:?} logistic=({acc0:.3},{acc1:.3}) {:?}", t0.elapsed());
    }
}
