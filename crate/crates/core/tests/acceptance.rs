//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers (run with `--nocapture` to see them live).
//!
//! Criteria 6-8 train real desk-scale networks on CPU and take tens of
//! minutes each; everything else is fast.

use chanest::analysis::{
    attention_analysis, complexity_report, config_hash, default_buckets, emit_outputs,
    run_experiment, Algorithm, ComplexityConstants, ExperimentConfig,
};
use chanest::channel::{Dataset, ObsMode, SystemConfig};
use chanest::estimators::{
    spec_for, CcmBank, CnnArch, Estimator, EstimatorKind, FnnArch, FnnAttArch, LsEstimator,
    MmseRegional, MmseSingle, NeuralEstimator, SeparateLsEstimator,
};
use chanest::harness::{
    build_dataset, evaluate_mse, generate_splits, train, train_mixed_snr, LossKind, TrainConfig,
    TrainingData,
};
use chanest::nn::gradcheck::{check_gradients, GradCheck};
use chanest::nn::{LayerSpec, LayerState, Model, ModelSpec, Tensor};
use chanest::numerics::RngStream;

// ---------------------------------------------------------------------------
// Criterion 1: Table 2 reproduction
// ---------------------------------------------------------------------------

fn round_sig3(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mag = 10f64.powf(x.abs().log10().floor() - 2.0);
    (x / mag).round() * mag
}

#[test]
fn criterion_01_complexity_table_reproduction() {
    let started = std::time::Instant::now();
    let constants = ComplexityConstants::paper();

    // (algorithm, published flops, published params)
    let published = [
        (Algorithm::Cnn, 1.794e7, 0.141e6),
        (Algorithm::CnnAtt, 1.801e7, 0.169e6),
        (Algorithm::MmseRegional, 1.689e7, 1.966e6),
        (Algorithm::FnnAtt, 0.103e7, 1.072e6),
        (Algorithm::Svbi, 5.516e7, 0.0),
    ];
    for (alg, flops_pub, params_pub) in published {
        let report = complexity_report(alg, &constants).unwrap();
        match alg {
            Algorithm::FnnAtt => {
                // FLOPs within 2%.
                let rel = (report.flops_total - flops_pub).abs() / flops_pub;
                assert!(
                    rel < 0.02,
                    "fnn-att flops {} vs {flops_pub} ({rel:.3})",
                    report.flops_total
                );
                // Parameters within 6%; the closed form under-counts the
                // published table and the gap is reported, not reconciled.
                let rel = (report.params_total - params_pub).abs() / params_pub;
                assert!(
                    rel < 0.06,
                    "fnn-att params {} vs {params_pub} ({rel:.3})",
                    report.params_total
                );
                println!(
                    "  fnn-att params: closed form {} vs published {params_pub} ({:.2}% apart)",
                    report.params_total,
                    rel * 100.0
                );
            }
            Algorithm::MmseRegional => {
                assert_eq!(
                    round_sig3(report.flops_total),
                    round_sig3(flops_pub),
                    "mmse-regional flops"
                );
                // Parameter count matches exactly: 60 shared CCMs x 2 N^2.
                assert_eq!(report.params_total, 1_966_080.0);
                assert_eq!(round_sig3(report.params_total / 1e6) , 1.97);
            }
            Algorithm::Svbi => {
                assert_eq!(
                    round_sig3(report.flops_total),
                    round_sig3(flops_pub),
                    "s-vbi flops"
                );
                assert_eq!(report.params_total, 0.0, "s-vbi params");
            }
            _ => {
                assert_eq!(
                    round_sig3(report.flops_total),
                    round_sig3(flops_pub),
                    "{} flops {} vs {flops_pub}",
                    report.algorithm,
                    report.flops_total
                );
                let rel = (report.params_total - params_pub).abs() / params_pub;
                assert!(
                    rel < 0.02,
                    "{} params {} vs {params_pub} ({rel:.3})",
                    report.algorithm,
                    report.params_total
                );
            }
        }
    }

    // Cross-check the closed forms against the built models' own counters.
    let cfg = SystemConfig::paper();
    for (kind, alg) in [
        (
            EstimatorKind::Cnn {
                arch: CnnArch::default(),
            },
            Algorithm::Cnn,
        ),
        (
            EstimatorKind::FnnAtt {
                arch: FnnAttArch::default(),
            },
            Algorithm::FnnAtt,
        ),
    ] {
        let mode = if matches!(kind, EstimatorKind::FnnAtt { .. }) {
            ObsMode::Had
        } else {
            ObsMode::FullArray
        };
        let model = Model::<f32>::new(spec_for(&kind, &cfg, mode).unwrap(), 0).unwrap();
        let mut constants_full = constants.clone();
        constants_full.drop_final_attention = false;
        let report = complexity_report(alg, &constants_full).unwrap();
        assert_eq!(
            model.param_counts().weights as f64,
            report.params_total,
            "{} counter disagrees with closed form",
            kind.tag()
        );
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("PASS criterion 1: Table 2 reproduced ({elapsed:?})");
}

// ---------------------------------------------------------------------------
// Criterion 2: gradient correctness
// ---------------------------------------------------------------------------

fn random_dims(stream: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + stream.index(hi - lo + 1)
}

fn gradcheck_config(family: usize, stream: &mut RngStream) -> (ModelSpec, Vec<usize>) {
    match family {
        0 => {
            let in_ch = random_dims(stream, 1, 4);
            let out_ch = random_dims(stream, 1, 4);
            let ksize = [1, 3, 5][stream.index(3)];
            let stride = 1 + stream.index(2);
            let same_pad = stream.uniform() < 0.5;
            let p = random_dims(stream, ksize.max(4), 9);
            (
                ModelSpec {
                    input_shape: vec![p, in_ch],
                    layers: vec![LayerSpec::Conv1d {
                        in_ch,
                        out_ch,
                        ksize,
                        stride,
                        same_pad: same_pad && ksize % 2 == 1,
                        bias: stream.uniform() < 0.7,
                    }],
                },
                vec![random_dims(stream, 2, 4), p, in_ch],
            )
        }
        1 => {
            let d_in = random_dims(stream, 1, 6);
            let d_out = random_dims(stream, 1, 6);
            (
                ModelSpec {
                    input_shape: vec![d_in],
                    layers: vec![LayerSpec::Dense {
                        d_in,
                        d_out,
                        bias: stream.uniform() < 0.7,
                    }],
                },
                vec![random_dims(stream, 2, 5), d_in],
            )
        }
        2 => {
            let c = random_dims(stream, 1, 5);
            let p = random_dims(stream, 1, 6);
            (
                ModelSpec {
                    input_shape: vec![p, c],
                    layers: vec![LayerSpec::BatchNorm { features: c }],
                },
                vec![random_dims(stream, 2, 6), p, c],
            )
        }
        3 => {
            let d = random_dims(stream, 2, 8);
            (
                ModelSpec {
                    input_shape: vec![d],
                    layers: vec![LayerSpec::Relu, LayerSpec::Sigmoid],
                },
                vec![random_dims(stream, 2, 4), d],
            )
        }
        4 => {
            let c = random_dims(stream, 1, 5);
            let p = random_dims(stream, 2, 7);
            (
                ModelSpec {
                    input_shape: vec![p, c],
                    layers: vec![LayerSpec::GlobalAvgPool],
                },
                vec![random_dims(stream, 2, 4), p, c],
            )
        }
        5 => {
            let ratio = 1 + stream.index(2);
            let c = ratio * random_dims(stream, 1, 3);
            let p = random_dims(stream, 2, 6);
            (
                ModelSpec {
                    input_shape: vec![p, c],
                    layers: vec![LayerSpec::Attention { channels: c, ratio }],
                },
                vec![random_dims(stream, 2, 4), p, c],
            )
        }
        6 => {
            // Full convolutional block chain.
            let f = 2 * random_dims(stream, 1, 2);
            let p = random_dims(stream, 5, 8);
            (
                ModelSpec {
                    input_shape: vec![p, 2],
                    layers: vec![
                        LayerSpec::Conv1d {
                            in_ch: 2,
                            out_ch: f,
                            ksize: 3,
                            stride: 1,
                            same_pad: true,
                            bias: true,
                        },
                        LayerSpec::BatchNorm { features: f },
                        LayerSpec::Relu,
                        LayerSpec::Attention {
                            channels: f,
                            ratio: 2,
                        },
                        LayerSpec::Conv1d {
                            in_ch: f,
                            out_ch: 2,
                            ksize: 1,
                            stride: 1,
                            same_pad: true,
                            bias: true,
                        },
                        LayerSpec::Flatten,
                    ],
                },
                vec![random_dims(stream, 2, 3), p, 2],
            )
        }
        _ => {
            // Attention-embedded fully connected chain.
            let feats = random_dims(stream, 2, 3);
            let ch = 2 * random_dims(stream, 1, 3);
            let d_in = random_dims(stream, 2, 5);
            let d_out = random_dims(stream, 2, 5);
            let hidden = feats * ch;
            (
                ModelSpec {
                    input_shape: vec![d_in],
                    layers: vec![
                        LayerSpec::Dense {
                            d_in,
                            d_out: hidden,
                            bias: true,
                        },
                        LayerSpec::Relu,
                        LayerSpec::BatchNorm { features: hidden },
                        LayerSpec::Reshape {
                            features: feats,
                            channels: ch,
                        },
                        LayerSpec::Attention {
                            channels: ch,
                            ratio: 2,
                        },
                        LayerSpec::Flatten,
                        LayerSpec::Dense {
                            d_in: hidden,
                            d_out,
                            bias: true,
                        },
                    ],
                },
                vec![random_dims(stream, 2, 3), d_in],
            )
        }
    }
}

#[test]
fn criterion_02_gradient_correctness() {
    let started = std::time::Instant::now();
    let step = 1e-5;
    let total_configs = 112;
    let mut checked = 0;
    let mut worst: f64 = 0.0;

    for i in 0..total_configs {
        let family = i % 8;
        // Re-roll a configuration whose ReLU inputs sit too close to a kink
        // for finite differences.
        let mut attempt = 0u64;
        loop {
            let mut stream = RngStream::new(9000 + i as u64, attempt);
            let (spec, in_shape) = gradcheck_config(family, &mut stream);
            let len: usize = in_shape.iter().product();
            let input = Tensor::<f64>::new(
                in_shape.clone(),
                (0..len).map(|_| stream.normal() * 0.9).collect(),
            );
            let mut model = Model::<f64>::new(spec, 7700 + i as u64 + attempt).unwrap();
            let probe = model.forward_train(&input).unwrap();
            let target = Tensor::<f64>::new(
                probe.shape().to_vec(),
                (0..probe.len()).map(|_| stream.normal() * 0.9).collect(),
            );
            match check_gradients(&mut model, &input, &target, step).unwrap() {
                GradCheck::MaxRelErr(err) => {
                    assert!(
                        err < 1e-4,
                        "config {i} (family {family}): max rel err {err:.3e}"
                    );
                    worst = worst.max(err);
                    checked += 1;
                    break;
                }
                GradCheck::KinkTooClose => {
                    attempt += 1;
                    assert!(attempt < 32, "config {i}: no kink-free draw found");
                }
            }
        }
    }

    let elapsed = started.elapsed();
    assert!(checked >= 100, "only {checked} configurations checked");
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "PASS criterion 2: {checked} gradient checks, worst relative error {worst:.2e} ({elapsed:?})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: LS oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_ls_oracle() {
    let started = std::time::Instant::now();
    let mut cfg = SystemConfig::desk();
    cfg.n_antennas = 64;
    cfg.n_rf_chains = 16;
    cfg.snr_db = vec![0.0, 10.0, 20.0];
    cfg.master_seed = 31;
    let ds = Dataset::generate(&cfg, ObsMode::FullArray, 10_000, 0).unwrap();
    let ls = LsEstimator::new(64);
    let report = evaluate_mse(&ls, &ds, &[0, 1, 2]).unwrap();
    for row in &report.rows {
        let want = 64.0 * SystemConfig::noise_var(row.snr_db);
        let rel = (row.mse_linear - want).abs() / want;
        assert!(
            rel < 0.03,
            "snr {} dB: mse {} vs N sigma^2 {want} ({rel:.4})",
            row.snr_db,
            row.mse_linear
        );
        println!(
            "  {} dB: mse {:.5} vs N sigma^2 {want:.5} ({:.2}% off)",
            row.snr_db,
            row.mse_linear,
            rel * 100.0
        );
    }
    println!("PASS criterion 3: LS oracle within 3% ({:?})", started.elapsed());
}

// ---------------------------------------------------------------------------
// Criterion 4: unitary invariance of the MSE
// ---------------------------------------------------------------------------

fn fitted_normalizer(ds: &Dataset, slots: &[usize]) -> chanest::estimators::Normalizer {
    TrainingData::fit_normalizer(ds, slots).unwrap()
}

#[test]
fn criterion_04_unitary_invariance() {
    let started = std::time::Instant::now();
    let mut cfg = SystemConfig::desk();
    cfg.snr_db = vec![10.0];
    cfg.master_seed = 41;

    // Full-array estimators over 1000 samples.
    let fit = Dataset::generate(&cfg, ObsMode::FullArray, 3000, 100_000).unwrap();
    let ds = Dataset::generate(&cfg, ObsMode::FullArray, 1000, 0).unwrap();
    let noise_vars = [SystemConfig::noise_var(10.0)];
    let bank_single = CcmBank::fit_single(&fit.samples).unwrap();
    let bank_regional = CcmBank::fit(&fit.samples, 3.0, true).unwrap();

    let mut estimators: Vec<Box<dyn Estimator>> = vec![
        Box::new(LsEstimator::new(cfg.n_antennas)),
        Box::new(MmseSingle::new(bank_single.single().unwrap(), &noise_vars).unwrap()),
        Box::new(MmseRegional::new(&bank_regional, &noise_vars).unwrap()),
        Box::new(SeparateLsEstimator::new(cfg.n_antennas, cfg.n_rf_chains, 41)),
    ];
    let norm = fitted_normalizer(&ds, &[0]);
    for kind in [
        EstimatorKind::Cnn {
            arch: CnnArch::desk(),
        },
        EstimatorKind::CnnAtt {
            arch: CnnArch::desk(),
        },
        EstimatorKind::Fnn {
            arch: FnnArch::full_array(),
        },
        EstimatorKind::FnnAtt {
            arch: FnnAttArch::desk(),
        },
    ] {
        let model =
            Model::<f32>::new(spec_for(&kind, &cfg, ObsMode::FullArray).unwrap(), 42).unwrap();
        estimators.push(Box::new(NeuralEstimator::new(
            kind,
            ObsMode::FullArray,
            cfg.n_antennas,
            model,
            norm.clone(),
        )));
    }
    for est in &estimators {
        let report = evaluate_mse(est.as_ref(), &ds, &[0]).unwrap();
        let gap = report.rows[0].max_domain_gap;
        assert!(gap < 1e-10, "{}: domain gap {gap:.3e}", est.name());
        println!("  {}: max domain gap {gap:.2e}", est.name());
    }

    // HAD estimators over 1000 samples.
    let ds_had = Dataset::generate(&cfg, ObsMode::Had, 1000, 0).unwrap();
    let norm_had = fitted_normalizer(&ds_had, &[0]);
    let mut had_estimators: Vec<Box<dyn Estimator>> = vec![Box::new(SeparateLsEstimator::new(
        cfg.n_antennas,
        cfg.n_rf_chains,
        42,
    ))];
    for kind in [
        EstimatorKind::Cnn {
            arch: CnnArch::desk(),
        },
        EstimatorKind::Fnn {
            arch: FnnArch::default(),
        },
        EstimatorKind::FnnAtt {
            arch: FnnAttArch::desk(),
        },
    ] {
        let model = Model::<f32>::new(spec_for(&kind, &cfg, ObsMode::Had).unwrap(), 43).unwrap();
        had_estimators.push(Box::new(NeuralEstimator::new(
            kind,
            ObsMode::Had,
            cfg.n_antennas,
            model,
            norm_had.clone(),
        )));
    }
    for est in &had_estimators {
        let report = evaluate_mse(est.as_ref(), &ds_had, &[0]).unwrap();
        let gap = report.rows[0].max_domain_gap;
        assert!(gap < 1e-10, "{} (had): domain gap {gap:.3e}", est.name());
    }

    println!(
        "PASS criterion 4: angular and antenna MSE agree to 1e-10 for every estimator ({:?})",
        started.elapsed()
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: MMSE ordering
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_mmse_ordering() {
    let started = std::time::Instant::now();
    let mut cfg = SystemConfig::desk();
    cfg.snr_db = vec![10.0];
    cfg.master_seed = 51;

    let fit = Dataset::generate(&cfg, ObsMode::FullArray, 50_000, 1_000_000).unwrap();
    let eval = Dataset::generate(&cfg, ObsMode::FullArray, 5_000, 0).unwrap();
    let noise_vars = [SystemConfig::noise_var(10.0)];

    let bank_single = CcmBank::fit_single(&fit.samples).unwrap();
    let bank_regional = CcmBank::fit(&fit.samples, 3.0, true).unwrap();
    bank_regional.validate().unwrap();

    let ls = LsEstimator::new(cfg.n_antennas);
    let single = MmseSingle::new(bank_single.single().unwrap(), &noise_vars).unwrap();
    let regional = MmseRegional::new(&bank_regional, &noise_vars).unwrap();

    let r_ls = evaluate_mse(&ls, &eval, &[0]).unwrap().rows.remove(0);
    let r_single = evaluate_mse(&single, &eval, &[0]).unwrap().rows.remove(0);
    let r_regional = evaluate_mse(&regional, &eval, &[0]).unwrap().rows.remove(0);
    println!(
        "  ls {:.4} (se {:.4}), mmse-single {:.4} (se {:.4}), mmse-regional {:.4} (se {:.4})",
        r_ls.mse_linear,
        r_ls.stderr,
        r_single.mse_linear,
        r_single.stderr,
        r_regional.mse_linear,
        r_regional.stderr
    );

    let sig = |a: &chanest::harness::MseRow, b: &chanest::harness::MseRow| {
        (b.mse_linear - a.mse_linear) / (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
    };
    let z_regional_single = sig(&r_regional, &r_single);
    let z_single_ls = sig(&r_single, &r_ls);
    assert!(
        z_regional_single > 3.0,
        "regional vs single separation {z_regional_single:.2} standard errors"
    );
    assert!(
        z_single_ls > 3.0,
        "single vs ls separation {z_single_ls:.2} standard errors"
    );
    println!(
        "PASS criterion 5: mse(regional) < mse(single) < mse(ls) at {z_regional_single:.1} and {z_single_ls:.1} standard errors ({:?})",
        started.elapsed()
    );
}

// ---------------------------------------------------------------------------
// Criteria 6-8: trained-network properties (slow)
// ---------------------------------------------------------------------------

fn acceptance_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 500,
        initial_lr: 1e-3,
        lr_decay_factor: 0.1,
        decay_patience: 10,
        stop_patience: 25,
        max_epochs: 200,
        loss: LossKind::Mse,
        seed,
    }
}

/// Trains one neural estimator on the given slots and returns it with its
/// stopped-epoch count.
fn train_neural(
    kind: &EstimatorKind,
    cfg: &SystemConfig,
    mode: ObsMode,
    train_ds: &Dataset,
    val_ds: &Dataset,
    slots: &[usize],
    tcfg: &TrainConfig,
) -> (NeuralEstimator, usize, f64) {
    let norm = TrainingData::fit_normalizer(train_ds, slots).unwrap();
    let train_data = TrainingData::assemble(train_ds, slots, &norm).unwrap();
    let val_data = TrainingData::assemble(val_ds, slots, &norm).unwrap();
    let mut model = Model::<f32>::new(spec_for(kind, cfg, mode).unwrap(), tcfg.seed).unwrap();
    let report = if tcfg.loss == LossKind::WeightedMse {
        train_mixed_snr(&mut model, &train_data, &val_data, tcfg).unwrap()
    } else {
        train(&mut model, &train_data, &val_data, tcfg).unwrap()
    };
    (
        NeuralEstimator::new(kind.clone(), mode, cfg.n_antennas, model, norm),
        report.stopped_epoch,
        report.best_val_loss,
    )
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

#[test]
fn criterion_06_attention_gain_without_had() {
    let started = std::time::Instant::now();
    let seeds = [1u64, 2, 3];
    let mut mse_cnn = Vec::new();
    let mut mse_att = Vec::new();
    let mut mse_ls = Vec::new();

    for &seed in &seeds {
        let mut cfg = SystemConfig::desk();
        cfg.snr_db = vec![20.0];
        cfg.master_seed = seed;
        let (train_ds, val_ds, test_ds) =
            generate_splits(&cfg, ObsMode::FullArray, 20_000).unwrap();
        let tcfg = acceptance_train_config(seed);

        for (kind, sink) in [
            (
                EstimatorKind::Cnn {
                    arch: CnnArch::desk(),
                },
                &mut mse_cnn,
            ),
            (
                EstimatorKind::CnnAtt {
                    arch: CnnArch::desk(),
                },
                &mut mse_att,
            ),
        ] {
            let (est, epochs, best_val) = train_neural(
                &kind,
                &cfg,
                ObsMode::FullArray,
                &train_ds,
                &val_ds,
                &[0],
                &tcfg,
            );
            let mse = evaluate_mse(&est, &test_ds, &[0]).unwrap().rows[0].mse_linear;
            println!(
                "  seed {seed} {}: {epochs} epochs, best val {best_val:.4e}, test mse {mse:.5}",
                kind.tag()
            );
            sink.push(mse);
        }
        let ls = LsEstimator::new(cfg.n_antennas);
        mse_ls.push(evaluate_mse(&ls, &test_ds, &[0]).unwrap().rows[0].mse_linear);
    }

    let med_cnn = median(&mut mse_cnn);
    let med_att = median(&mut mse_att);
    let med_ls = median(&mut mse_ls);
    println!("  medians: cnn {med_cnn:.5}, cnn-att {med_att:.5}, ls {med_ls:.5}");
    assert!(
        med_att <= 0.95 * med_cnn,
        "attention gain too small: {med_att:.5} vs 0.95 x {med_cnn:.5}"
    );
    assert!(med_att < med_ls && med_cnn < med_ls, "networks must beat LS");
    println!(
        "PASS criterion 6: median cnn-att/cnn = {:.3}, both beat LS ({:?})",
        med_att / med_cnn,
        started.elapsed()
    );
}

#[test]
fn criterion_07_attention_gain_with_had() {
    let started = std::time::Instant::now();
    let seeds = [1u64, 2, 3];
    let mut mse_fnn = Vec::new();
    let mut mse_att = Vec::new();

    for &seed in &seeds {
        let mut cfg = SystemConfig::desk();
        cfg.snr_db = vec![10.0];
        cfg.master_seed = seed;
        let (train_ds, val_ds, test_ds) = generate_splits(&cfg, ObsMode::Had, 20_000).unwrap();
        let tcfg = acceptance_train_config(seed);

        for (kind, sink) in [
            (
                EstimatorKind::Fnn {
                    arch: FnnArch::default(),
                },
                &mut mse_fnn,
            ),
            (
                EstimatorKind::FnnAtt {
                    arch: FnnAttArch::desk(),
                },
                &mut mse_att,
            ),
        ] {
            let (est, epochs, best_val) =
                train_neural(&kind, &cfg, ObsMode::Had, &train_ds, &val_ds, &[0], &tcfg);
            let mse = evaluate_mse(&est, &test_ds, &[0]).unwrap().rows[0].mse_linear;
            println!(
                "  seed {seed} {}: {epochs} epochs, best val {best_val:.4e}, test mse {mse:.5}",
                kind.tag()
            );
            sink.push(mse);
        }
    }

    let med_fnn = median(&mut mse_fnn);
    let med_att = median(&mut mse_att);
    println!("  medians: fnn {med_fnn:.5}, fnn-att {med_att:.5}");
    assert!(
        med_att <= 0.8 * med_fnn,
        "HAD attention gain too small: {med_att:.5} vs 0.8 x {med_fnn:.5}"
    );
    println!(
        "PASS criterion 7: median fnn-att/fnn = {:.3} ({:?})",
        med_att / med_fnn,
        started.elapsed()
    );
}

#[test]
fn criterion_08_mixed_snr_robustness() {
    let started = std::time::Instant::now();
    let mut cfg = SystemConfig::desk();
    cfg.snr_db = vec![0.0, 5.0, 10.0, 15.0, 20.0];
    cfg.master_seed = 81;
    // 10k records, each observed at all five SNR points: dedicated and mixed
    // training see the same per-SNR sample counts.
    let (train_ds, val_ds, test_ds) = generate_splits(&cfg, ObsMode::Had, 10_000).unwrap();
    let kind = EstimatorKind::FnnAtt {
        arch: FnnAttArch::desk(),
    };

    let mut dedicated = Vec::new();
    for slot in 0..cfg.snr_db.len() {
        let tcfg = acceptance_train_config(81 + slot as u64);
        let (est, epochs, _) = train_neural(
            &kind,
            &cfg,
            ObsMode::Had,
            &train_ds,
            &val_ds,
            &[slot],
            &tcfg,
        );
        let mse = evaluate_mse(&est, &test_ds, &[slot]).unwrap().rows[0].mse_linear;
        println!(
            "  dedicated @ {} dB: {epochs} epochs, test mse {mse:.5}",
            cfg.snr_db[slot]
        );
        dedicated.push(mse);
    }

    let all_slots: Vec<usize> = (0..cfg.snr_db.len()).collect();
    let tcfg = TrainConfig {
        loss: LossKind::WeightedMse,
        ..acceptance_train_config(89)
    };
    let (mixed_est, epochs, _) = train_neural(
        &kind,
        &cfg,
        ObsMode::Had,
        &train_ds,
        &val_ds,
        &all_slots,
        &tcfg,
    );
    println!("  mixed model: {epochs} epochs");

    for (slot, &ded) in dedicated.iter().enumerate() {
        let mixed = evaluate_mse(&mixed_est, &test_ds, &[slot]).unwrap().rows[0].mse_linear;
        let rel = (mixed - ded).abs() / ded;
        println!(
            "  {} dB: mixed {mixed:.5} vs dedicated {ded:.5} ({:+.1}%)",
            cfg.snr_db[slot],
            100.0 * (mixed - ded) / ded
        );
        assert!(
            rel <= 0.15,
            "{} dB: mixed {mixed:.5} deviates {:.1}% from dedicated {ded:.5}",
            cfg.snr_db[slot],
            rel * 100.0
        );
    }
    println!(
        "PASS criterion 8: mixed-SNR model within 15% of dedicated models at all five points ({:?})",
        started.elapsed()
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: attention-map sanity
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_attention_map_sanity() {
    let started = std::time::Instant::now();
    let mut cfg = SystemConfig::desk();
    cfg.n_antennas = 32;
    cfg.n_rf_chains = 8;
    cfg.snr_db = vec![10.0];
    cfg.master_seed = 91;
    let ds = Dataset::generate(&cfg, ObsMode::Had, 512, 0).unwrap();
    let kind = EstimatorKind::FnnAtt {
        arch: FnnAttArch {
            features: 8,
            channels: 16,
            ratio: 2,
        },
    };
    let norm = fitted_normalizer(&ds, &[0]);

    // Live model: every gate strictly inside (0, 1), nothing saturated.
    let model = Model::<f32>::new(spec_for(&kind, &cfg, ObsMode::Had).unwrap(), 9).unwrap();
    let est = NeuralEstimator::new(kind.clone(), ObsMode::Had, cfg.n_antennas, model, norm.clone());
    let a = attention_analysis(&est, &ds, 0, &default_buckets()).unwrap();
    for r in &a.records {
        for &v in &r.map {
            assert!(v > 0.0 && v < 1.0, "gate {v} outside (0,1)");
        }
    }
    assert!(a.saturated_layers.is_empty());

    // Deterministic re-extraction.
    let b = attention_analysis(&est, &ds, 0, &default_buckets()).unwrap();
    assert_eq!(a.records.len(), b.records.len());
    for (ra, rb) in a.records.iter().zip(b.records.iter()) {
        assert_eq!(ra.map, rb.map, "re-extraction differs");
    }

    // Synthetically zeroed attention path: flagged as constant 0.5.
    let mut dead_model =
        Model::<f32>::new(spec_for(&kind, &cfg, ObsMode::Had).unwrap(), 9).unwrap();
    for layer in dead_model.layers_mut() {
        if let LayerState::Attention(att) = layer {
            att.w_squeeze.data_mut().iter_mut().for_each(|v| *v = 0.0);
            att.w_excite.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let dead = NeuralEstimator::new(kind, ObsMode::Had, cfg.n_antennas, dead_model, norm);
    let c = attention_analysis(&dead, &ds, 0, &default_buckets()).unwrap();
    assert_eq!(c.saturated_layers, vec![0], "zeroed layer not flagged");

    println!(
        "PASS criterion 9: gates in (0,1), saturation detector fires, extraction deterministic ({:?})",
        started.elapsed()
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: end-to-end reproducibility
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_reproducibility() {
    let started = std::time::Instant::now();
    let toml = r#"
[experiment]
name = "repro"
seed = 7
scale = "desk"
mode = "full-array"

[dataset]
count = 1000
snr_db = [20.0]

[train]
batch_size = 100
max_epochs = 8
[arch]
cnn_blocks = 1
cnn_filters = 16

[grid]
estimators = ["ls", "cnn-att"]
"#;
    let cfg = ExperimentConfig::from_toml(toml).unwrap();
    println!("  config hash {}", config_hash(&cfg).unwrap());

    let mut artifacts: Vec<(Vec<Vec<u8>>, String)> = Vec::new();
    for run in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        // Full pipeline: dataset files on disk, sweep, CSV emission.
        let sys = cfg.resolved_system();
        let splits = build_dataset(
            &sys,
            cfg.experiment.mode,
            cfg.dataset.count,
            dir.path(),
            &cfg.experiment.name,
        )
        .unwrap();
        let bundle = run_experiment(&cfg, dir.path(), &|_| {}).unwrap();
        emit_outputs(&bundle, dir.path()).unwrap();

        let mut files = Vec::new();
        for stem in [&splits.train, &splits.val, &splits.test] {
            files.push(std::fs::read(stem.with_extension("bin")).unwrap());
            files.push(std::fs::read(stem.with_extension("json")).unwrap());
        }
        let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        println!("  run {run}: {} dataset files, {} csv bytes", files.len(), csv.len());
        artifacts.push((files, csv));
    }

    let (files_a, csv_a) = &artifacts[0];
    let (files_b, csv_b) = &artifacts[1];
    for (i, (a, b)) in files_a.iter().zip(files_b.iter()).enumerate() {
        assert_eq!(a, b, "dataset file {i} differs between runs");
    }
    assert_eq!(csv_a, csv_b, "evaluation CSVs differ between runs");
    println!(
        "PASS criterion 10: bit-identical dataset files and identical evaluation CSVs ({:?})",
        started.elapsed()
    );
}
