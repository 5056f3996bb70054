//! Command-line surface of the channel-estimation lab.
//!
//! Subcommands: `generate`, `train`, `eval`, `sweep`, `attention`,
//! `complexity`, `report`. Exit codes: 0 success, 1 configuration error,
//! 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chanest::analysis::{
    attention_analysis, complexity_table, default_buckets, emit_outputs, run_experiment,
    ComplexityConstants, ExperimentConfig, ResultBundle, Scale, SineBucket,
};
use chanest::channel::Dataset;
use chanest::error::Error;
use chanest::estimators::{
    CcmBank, Estimator, EstimatorKind, LsEstimator, MmseRegional, MmseSingle, NeuralEstimator,
    SeparateLsEstimator,
};
use chanest::harness::{
    build_dataset, evaluate_mse, generate_splits, train, train_mixed_snr, LossKind, TrainConfig,
    TrainingData,
};
use chanest::nn::Model;

#[derive(Parser)]
#[command(
    name = "chanest",
    about = "Massive-MIMO uplink channel estimation lab",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the parameter scale preset.
    #[arg(long, value_parser = parse_scale)]
    scale: Option<Scale>,
}

fn parse_scale(s: &str) -> Result<Scale, String> {
    match s {
        "paper" => Ok(Scale::Paper),
        "desk" => Ok(Scale::Desk),
        other => Err(format!("unknown scale '{other}' (expected paper|desk)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/val/test dataset file pairs described by a config.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train one neural estimator and write its checkpoint and loss curves.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Estimator tag (cnn, cnn-att, fnn, fnn-att).
        #[arg(long)]
        estimator: String,
        /// SNR point to train at (omit with --mixed-snr).
        #[arg(long)]
        snr_db: Option<f64>,
        /// Train one model over all SNR points with the weighted loss.
        #[arg(long)]
        mixed_snr: bool,
        /// Load datasets generated by `generate` from this directory instead
        /// of regenerating in memory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate an estimator on the test split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Classical estimator tag (ls, mmse-single, mmse-regional,
        /// separate-ls); classical fitting uses the training split.
        #[arg(long, conflicts_with = "checkpoint")]
        estimator: Option<String>,
        /// Neural checkpoint to evaluate.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the full experiment grid (resumable) and emit result files.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Extract attention maps and mean-AoA-bucketed statistics.
    Attention {
        #[command(flatten)]
        common: CommonArgs,
        /// Neural checkpoint with at least one attention module.
        #[arg(long)]
        checkpoint: PathBuf,
        /// SNR point to analyze at.
        #[arg(long)]
        snr_db: Option<f64>,
        /// Sine buckets as "lo:hi,lo:hi,..." (default: two adjacent ranges
        /// plus one far range).
        #[arg(long)]
        buckets: Option<String>,
    },
    /// Print the closed-form FLOPs/parameter table.
    Complexity {
        /// Parameter scale for the constants.
        #[arg(long, value_parser = parse_scale, default_value = "paper")]
        scale: Scale,
        /// Drop the pilot-processing (acquisition) FLOPs.
        #[arg(long)]
        no_acquisition: bool,
        /// Keep the final attention module in the totals.
        #[arg(long)]
        keep_final_attention: bool,
        /// Also write complexity.csv and complexity.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit CSV outputs from a stored result bundle.
    Report {
        /// A results.json produced by `sweep`.
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Toml(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn load_config(common: &CommonArgs) -> chanest::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config).map_err(|e| match e {
        // An unreadable config file is a configuration problem (exit 1).
        Error::Io(io) => Error::Config(format!(
            "cannot read config {}: {io}",
            common.config.display()
        )),
        other => other,
    })?;
    if let Some(seed) = common.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(scale) = common.scale {
        cfg.experiment.scale = scale;
    }
    Ok(cfg)
}

fn system_of(cfg: &ExperimentConfig) -> chanest::Result<chanest::channel::SystemConfig> {
    // The sweep resolves per-point systems itself; every other subcommand
    // works on the base system.
    let sys = cfg.resolved_system();
    sys.validate()?;
    Ok(sys)
}

fn splits_for(
    cfg: &ExperimentConfig,
    data: &Option<PathBuf>,
) -> chanest::Result<(Dataset, Dataset, Dataset)> {
    let sys = system_of(cfg)?;
    match data {
        Some(dir) => {
            let stem = |part: &str| dir.join(format!("{}_{part}", cfg.experiment.name));
            Ok((
                Dataset::load(&stem("train"))?,
                Dataset::load(&stem("val"))?,
                Dataset::load(&stem("test"))?,
            ))
        }
        None => generate_splits(&sys, cfg.experiment.mode, cfg.dataset.count),
    }
}

fn train_config(cfg: &ExperimentConfig, loss: LossKind) -> TrainConfig {
    TrainConfig {
        batch_size: cfg.train.batch_size,
        initial_lr: cfg.train.initial_lr,
        lr_decay_factor: cfg.train.lr_decay_factor,
        decay_patience: cfg.train.decay_patience,
        stop_patience: cfg.train.stop_patience,
        max_epochs: cfg.train.max_epochs,
        loss,
        seed: cfg.experiment.seed,
    }
}

fn slot_of(ds: &Dataset, snr_db: f64) -> chanest::Result<usize> {
    ds.snr_slot(snr_db)
        .ok_or_else(|| Error::Config(format!("SNR {snr_db} dB is not in the dataset schedule")))
}

fn dispatch(cli: Cli) -> chanest::Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = load_config(&common)?;
            let sys = system_of(&cfg)?;
            let splits = build_dataset(
                &sys,
                cfg.experiment.mode,
                cfg.dataset.count,
                &common.out,
                &cfg.experiment.name,
            )?;
            println!("wrote {}", splits.train.display());
            println!("wrote {}", splits.val.display());
            println!("wrote {}", splits.test.display());
            Ok(())
        }

        Command::Train {
            common,
            estimator,
            snr_db,
            mixed_snr,
            data,
        } => {
            let cfg = load_config(&common)?;
            let sys = system_of(&cfg)?;
            let kind = cfg.resolve_estimator(&estimator)?;
            if !kind.is_neural() {
                return Err(Error::Config(format!(
                    "'{estimator}' is not trainable; classical estimators are fitted by `eval`"
                )));
            }
            let (train_ds, val_ds, _test) = splits_for(&cfg, &data)?;
            let spec = chanest::estimators::spec_for(&kind, &sys, cfg.experiment.mode)?;
            let mut model = Model::<f32>::new(spec, cfg.experiment.seed)?;

            let (norm, report, label) = if mixed_snr {
                let slots: Vec<usize> = (0..train_ds.snr_points().len()).collect();
                let norm = TrainingData::fit_normalizer(&train_ds, &slots)?;
                let tr = TrainingData::assemble(&train_ds, &slots, &norm)?;
                let va = TrainingData::assemble(&val_ds, &slots, &norm)?;
                let tcfg = train_config(&cfg, LossKind::WeightedMse);
                let report = train_mixed_snr(&mut model, &tr, &va, &tcfg)?;
                (norm, report, "mixed".to_string())
            } else {
                let snr = snr_db.ok_or_else(|| {
                    Error::Config("--snr-db is required unless --mixed-snr is set".into())
                })?;
                let slot = slot_of(&train_ds, snr)?;
                let norm = TrainingData::fit_normalizer(&train_ds, &[slot])?;
                let tr = TrainingData::assemble(&train_ds, &[slot], &norm)?;
                let va = TrainingData::assemble(&val_ds, &[slot], &norm)?;
                let tcfg = train_config(&cfg, LossKind::Mse);
                let report = train(&mut model, &tr, &va, &tcfg)?;
                (norm, report, format!("{snr}db"))
            };

            std::fs::create_dir_all(&common.out)?;
            let mut est =
                NeuralEstimator::new(kind, cfg.experiment.mode, sys.n_antennas, model, norm);
            let ckpt = common.out.join(format!("{estimator}_{label}.ckpt"));
            est.save(&ckpt)?;
            let report_path = common.out.join(format!("{estimator}_{label}_report.json"));
            std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
            let curve_path = common.out.join(format!("{estimator}_{label}_curve.csv"));
            std::fs::write(&curve_path, report.to_csv())?;
            println!(
                "trained {estimator}: {} epochs, best val {:.6e} at epoch {}",
                report.stopped_epoch, report.best_val_loss, report.best_epoch
            );
            println!("wrote {}", ckpt.display());
            println!("wrote {}", report_path.display());
            println!("wrote {}", curve_path.display());
            Ok(())
        }

        Command::Eval {
            common,
            estimator,
            checkpoint,
            data,
        } => {
            let cfg = load_config(&common)?;
            let sys = system_of(&cfg)?;
            let (train_ds, _val, test_ds) = splits_for(&cfg, &data)?;
            let slots: Vec<usize> = (0..test_ds.snr_points().len()).collect();
            let noise_vars: Vec<f64> = test_ds
                .snr_points()
                .iter()
                .map(|s| chanest::channel::SystemConfig::noise_var(*s))
                .collect();

            let est: Box<dyn Estimator> = match (&estimator, &checkpoint) {
                (Some(tag), None) => match cfg.resolve_estimator(tag)? {
                    EstimatorKind::Ls => Box::new(LsEstimator::new(sys.n_antennas)),
                    EstimatorKind::MmseSingle => {
                        let bank = CcmBank::fit_single(&train_ds.samples)?;
                        let bank_path = common.out.join("ccm_single.bank");
                        std::fs::create_dir_all(&common.out)?;
                        bank.save(&bank_path)?;
                        Box::new(MmseSingle::new(bank.single()?, &noise_vars)?)
                    }
                    EstimatorKind::MmseRegional {
                        region_width_deg,
                        sine_sharing,
                    } => {
                        let bank =
                            CcmBank::fit(&train_ds.samples, region_width_deg, sine_sharing)?;
                        let bank_path = common.out.join("ccm_regional.bank");
                        std::fs::create_dir_all(&common.out)?;
                        bank.save(&bank_path)?;
                        Box::new(MmseRegional::new(&bank, &noise_vars)?)
                    }
                    EstimatorKind::SeparateLs => Box::new(SeparateLsEstimator::new(
                        sys.n_antennas,
                        sys.n_rf_chains,
                        cfg.experiment.seed,
                    )),
                    neural => {
                        return Err(Error::Config(format!(
                            "'{}' needs a checkpoint; train it first",
                            neural.tag()
                        )))
                    }
                },
                (None, Some(path)) => Box::new(NeuralEstimator::load(path)?),
                _ => {
                    return Err(Error::Config(
                        "eval needs exactly one of --estimator or --checkpoint".into(),
                    ))
                }
            };

            let report = evaluate_mse(est.as_ref(), &test_ds, &slots)?;
            std::fs::create_dir_all(&common.out)?;
            let json_path = common.out.join(format!("mse_{}.json", report.estimator));
            std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
            let mut csv = String::from("estimator,snr_db,mse_linear,mse_db,stderr,n\n");
            println!("estimator  snr_db  mse_linear    mse_db   n");
            for row in &report.rows {
                println!(
                    "{:<10} {:>6} {:>12.6e} {:>8.3} {:>6}",
                    report.estimator, row.snr_db, row.mse_linear, row.mse_db, row.n
                );
                csv.push_str(&format!(
                    "{},{},{:.12e},{:.6},{:.6e},{}\n",
                    report.estimator, row.snr_db, row.mse_linear, row.mse_db, row.stderr, row.n
                ));
            }
            let csv_path = common.out.join(format!("mse_{}.csv", report.estimator));
            std::fs::write(&csv_path, csv)?;
            println!("wrote {}", json_path.display());
            println!("wrote {}", csv_path.display());
            Ok(())
        }

        Command::Sweep { common } => {
            let cfg = load_config(&common)?;
            let bundle = run_experiment(&cfg, &common.out, &|msg| println!("{msg}"))?;
            let written = emit_outputs(&bundle, &common.out)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }

        Command::Attention {
            common,
            checkpoint,
            snr_db,
            buckets,
        } => {
            let cfg = load_config(&common)?;
            let est = NeuralEstimator::load(&checkpoint)?;
            let (_train, _val, test_ds) = splits_for(&cfg, &None)?;
            let slot = match snr_db {
                Some(s) => slot_of(&test_ds, s)?,
                None => 0,
            };
            let buckets = match buckets {
                Some(spec) => parse_buckets(&spec)?,
                None => default_buckets(),
            };
            let analysis = attention_analysis(&est, &test_ds, slot, &buckets)?;

            std::fs::create_dir_all(&common.out)?;
            let json_path = common.out.join("attention_analysis.json");
            std::fs::write(&json_path, serde_json::to_string_pretty(&analysis)?)?;
            let mut csv = String::from("bucket,layer,count,channel,mean_gate\n");
            for avg in &analysis.bucket_averages {
                for (ch, v) in avg.mean_map.iter().enumerate() {
                    csv.push_str(&format!(
                        "{},{},{},{},{:.9}\n",
                        avg.bucket, avg.layer, avg.count, ch, v
                    ));
                }
            }
            let csv_path = common.out.join("attention_bucket_averages.csv");
            std::fs::write(&csv_path, csv)?;
            println!(
                "attention layers: {}, saturated: {:?}",
                est.model.attention_layers().len(),
                analysis.saturated_layers
            );
            for d in &analysis.inter_bucket_distances {
                println!(
                    "layer {} buckets {}-{}: distance {:.4}",
                    d.layer, d.bucket_a, d.bucket_b, d.l2
                );
            }
            println!("wrote {}", json_path.display());
            println!("wrote {}", csv_path.display());
            Ok(())
        }

        Command::Complexity {
            scale,
            no_acquisition,
            keep_final_attention,
            out,
        } => {
            let mut constants = ComplexityConstants::paper();
            if scale == Scale::Desk {
                let desk = chanest::channel::SystemConfig::desk();
                constants.n_antennas = desk.n_antennas;
                constants.n_rf_chains = desk.n_rf_chains;
                constants.cnn = chanest::estimators::CnnArch::desk();
                constants.fnn_att = chanest::estimators::FnnAttArch::desk();
            }
            constants.include_acquisition = !no_acquisition;
            constants.drop_final_attention = !keep_final_attention;
            let table = complexity_table(&constants)?;
            println!(
                "{:<14} {:>14} {:>14} {:>14} {:>14}",
                "algorithm", "flops", "flops(x1e7)", "params", "params(x1e6)"
            );
            let mut csv =
                String::from("algorithm,flops_core,flops_attention,flops_acquisition,flops_total,params_core,params_attention,params_total\n");
            for r in &table {
                println!(
                    "{:<14} {:>14.0} {:>14.4} {:>14.0} {:>14.4}",
                    r.algorithm,
                    r.flops_total,
                    r.flops_total / 1e7,
                    r.params_total,
                    r.params_total / 1e6
                );
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.algorithm,
                    r.flops_core,
                    r.flops_attention,
                    r.flops_acquisition,
                    r.flops_total,
                    r.params_core,
                    r.params_attention,
                    r.params_total
                ));
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("complexity.csv"), csv)?;
                std::fs::write(
                    dir.join("complexity.json"),
                    serde_json::to_string_pretty(&table)?,
                )?;
                println!("wrote {}", dir.join("complexity.csv").display());
                println!("wrote {}", dir.join("complexity.json").display());
            }
            Ok(())
        }

        Command::Report { bundle, out } => {
            let bundle: ResultBundle = serde_json::from_str(&std::fs::read_to_string(&bundle)?)?;
            let written = emit_outputs(&bundle, &out)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn parse_buckets(spec: &str) -> chanest::Result<Vec<SineBucket>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let (lo, hi) = part
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("bad bucket '{part}' (want lo:hi)")))?;
        let lo: f64 = lo
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad bucket bound '{lo}'")))?;
        let hi: f64 = hi
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad bucket bound '{hi}'")))?;
        if !(lo < hi) || !(-1.0..=1.0).contains(&lo) || !(-1.0..=1.0).contains(&hi) {
            return Err(Error::Config(format!(
                "bucket '{part}' must satisfy -1 <= lo < hi <= 1"
            )));
        }
        out.push(SineBucket { lo, hi });
    }
    if out.is_empty() {
        return Err(Error::Config("no buckets given".into()));
    }
    Ok(out)
}
