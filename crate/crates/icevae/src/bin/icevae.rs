//! File-based pipeline: synth -> split -> baseline/train -> calibrate ->
//! adjust -> verify -> report. Every artifact embeds the seed and the hash
//! of the config that produced it; subcommand outputs are valid inputs of
//! the next stage with no hidden state.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::DType;
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use icevae::baseline::{badj_adjust, climatological_bias};
use icevae::data::{
    ensemble_mean, read_cube, synthetic_generate, temporal_split, write_cube, Cube,
    HindcastCube, ObsCube, Provenance, SplitSet, SplitSpec, Splits, SyntheticConfig,
};
use icevae::error::IceError;
use icevae::grid::PolarGrid;
use icevae::infer::{calibrate_scale, sample_ensemble, DEFAULT_SCALES};
use icevae::model::{CvaeModel, NetConfig};
use icevae::train::{build_dataset, train, TrainConfig};
use icevae::verify::{verify_cube, write_report, MetricReport, VerifyOptions};

#[derive(Parser)]
#[command(name = "icevae", about = "Probabilistic sea-ice forecast bias correction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic hindcast/observation pair with known biases.
    Synth {
        /// SyntheticConfig JSON; defaults apply for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Grid as LATxLON, e.g. 32x64 (longitudes must be even).
        #[arg(long, default_value = "32x64")]
        grid: String,
        /// Overrides the config member count.
        #[arg(long)]
        members: Option<usize>,
        #[arg(long, default_value_t = 72)]
        n_init: usize,
        #[arg(long, default_value_t = 0)]
        first_init: i32,
        #[arg(long, default_value_t = 0.12)]
        land_fraction: f64,
        #[arg(long, default_value_t = true)]
        pole_hole: bool,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Resolve temporal train/val/test splits against the obs record.
    Split {
        #[arg(long)]
        hindcast: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        train_end: i32,
        #[arg(long)]
        val_end: i32,
        #[arg(long)]
        test_end: i32,
        #[arg(long, default_value = "out/splits.json")]
        out: PathBuf,
    },
    /// Climatological-mean adjustment of every member (badj).
    Baseline {
        #[arg(long)]
        hindcast: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long, default_value = "out/badj.icecube")]
        out: PathBuf,
    },
    /// Train the conditional VAE on the train split.
    Train {
        #[arg(long)]
        hindcast: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        /// TrainConfig JSON; defaults mirror the published recipe.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Network preset: desk (reduced) or full (latent 1000).
        #[arg(long, default_value = "desk")]
        net: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Choose the prior spread scale by SOE on the validation split.
    Calibrate {
        #[arg(long)]
        hindcast: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 20)]
        members: usize,
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Sample the corrected ensemble (nadj) on one split.
    Adjust {
        #[arg(long)]
        hindcast: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 100)]
        members: usize,
        /// Prior spread scale; pass the calibrated value.
        #[arg(long, default_value_t = 3.0)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out/nadj.icecube")]
        out: PathBuf,
    },
    /// Verify any adjusted cube against observations on one split.
    Verify {
        #[arg(long)]
        forecast: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out/report")]
        out_dir: PathBuf,
    },
    /// Merge verification reports into per-metric comparison files.
    Report {
        /// Directory holding `<label>_summary.json` files.
        #[arg(long, default_value = "out/report")]
        dir: PathBuf,
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long, default_value = "out/report")]
        out_dir: PathBuf,
    },
}

fn exit_code(e: &IceError) -> u8 {
    match e {
        IceError::InvalidConfig(_) | IceError::LeadOutOfRange(_) | IceError::OddLongitudes(_) => 2,
        IceError::Numerical(_)
        | IceError::Tensor(_)
        | IceError::ZeroVariance { .. }
        | IceError::DegenerateForecast => 4,
        _ => 3,
    }
}

fn config_hash<T: Serialize>(config: &T) -> Result<String, IceError> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn parse_grid(s: &str) -> Result<(usize, usize), IceError> {
    let parts: Vec<&str> = s.split('x').collect();
    let parse = |p: &str| {
        p.parse::<usize>()
            .map_err(|_| IceError::InvalidConfig(format!("bad grid spec {s:?}, expected LATxLON")))
    };
    match parts.as_slice() {
        [a, b] => Ok((parse(a)?, parse(b)?)),
        _ => Err(IceError::InvalidConfig(format!(
            "bad grid spec {s:?}, expected LATxLON"
        ))),
    }
}

fn load_hindcast(path: &Path) -> Result<HindcastCube, IceError> {
    read_cube(path)?.0.into_hindcast()
}

fn load_obs(path: &Path) -> Result<ObsCube, IceError> {
    read_cube(path)?.0.into_obs()
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SplitsFile {
    provenance: Provenance,
    spec: SplitSpec,
    splits: Splits,
}

fn load_splits(path: &Path) -> Result<SplitsFile, IceError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| IceError::MalformedHeader(e.to_string()))
}

fn split_by_name<'a>(splits: &'a Splits, name: &str) -> Result<&'a SplitSet, IceError> {
    match name {
        "train" => Ok(&splits.train),
        "val" => Ok(&splits.val),
        "test" => Ok(&splits.test),
        other => Err(IceError::InvalidConfig(format!(
            "unknown split {other:?}, expected train|val|test"
        ))),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), IceError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), IceError> {
    match cli.cmd {
        Cmd::Synth {
            config,
            seed,
            grid,
            members,
            n_init,
            first_init,
            land_fraction,
            pole_hole,
            out_dir,
        } => {
            let mut cfg: SyntheticConfig = match config {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
                    .map_err(|e| IceError::InvalidConfig(e.to_string()))?,
                None => SyntheticConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = members {
                cfg.n_member = m;
            }
            let (n_lat, n_lon) = parse_grid(&grid)?;
            let grid = PolarGrid::synthetic(n_lat, n_lon, land_fraction, pole_hole, cfg.seed)?;
            let out = synthetic_generate(&cfg, &grid, first_init, n_init)?;
            std::fs::create_dir_all(&out_dir)?;
            let prov = Provenance {
                seed: cfg.seed,
                config_hash: config_hash(&cfg)?,
            };
            write_cube(
                &Cube::Hindcast(out.hindcast),
                &out_dir.join("hindcast.icecube"),
                Some(prov.clone()),
            )?;
            write_cube(
                &Cube::Obs(out.obs),
                &out_dir.join("obs.icecube"),
                Some(prov.clone()),
            )?;
            write_json(
                &serde_json::json!({ "provenance": prov, "config": cfg }),
                &out_dir.join("synth_config.json"),
            )?;
            eprintln!("wrote hindcast.icecube, obs.icecube to {}", out_dir.display());
        }
        Cmd::Split {
            hindcast,
            obs,
            train_end,
            val_end,
            test_end,
            out,
        } => {
            let h = load_hindcast(&hindcast)?;
            let o = load_obs(&obs)?;
            let spec = SplitSpec {
                train_end,
                val_end,
                test_end,
            };
            let splits = temporal_split(&h, &o, &spec)?;
            eprintln!(
                "train {} / val {} / test {} pairs ({} dropped without obs)",
                splits.train.len(),
                splits.val.len(),
                splits.test.len(),
                splits.dropped_no_obs
            );
            let file = SplitsFile {
                provenance: Provenance {
                    seed: 0,
                    config_hash: config_hash(&spec)?,
                },
                spec,
                splits,
            };
            write_json(&file, &out)?;
        }
        Cmd::Baseline {
            hindcast,
            obs,
            splits,
            out,
        } => {
            let h = load_hindcast(&hindcast)?;
            let o = load_obs(&obs)?;
            let sf = load_splits(&splits)?;
            let bias = climatological_bias(&h, &o, &sf.splits.train)?;
            let adjusted = badj_adjust(&h, &bias)?;
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            write_cube(
                &Cube::Hindcast(adjusted),
                &out,
                Some(Provenance {
                    seed: 0,
                    config_hash: sf.provenance.config_hash,
                }),
            )?;
            eprintln!("wrote {}", out.display());
        }
        Cmd::Train {
            hindcast,
            obs,
            splits,
            config,
            net,
            epochs,
            seed,
            out_dir,
        } => {
            let h = load_hindcast(&hindcast)?;
            let o = load_obs(&obs)?;
            let sf = load_splits(&splits)?;
            let mut cfg: TrainConfig = match config {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
                    .map_err(|e| IceError::InvalidConfig(e.to_string()))?,
                None => TrainConfig::default(),
            };
            if let Some(e) = epochs {
                cfg.max_epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let folded = h.grid.folded_shape();
            let net_cfg = match net.as_str() {
                "desk" => NetConfig::desk(folded),
                "full" => NetConfig {
                    grid_shape: folded,
                    ..NetConfig::default()
                },
                other => {
                    return Err(IceError::InvalidConfig(format!(
                        "unknown net preset {other:?}, expected desk|full"
                    )))
                }
            };
            let model = CvaeModel::new(net_cfg.clone(), cfg.seed, DType::F32)?;
            let xbar = ensemble_mean(&h);
            let train_ds = build_dataset(&h, &o, &xbar, &sf.splits.train, &model)?;
            let val_ds = build_dataset(&h, &o, &xbar, &sf.splits.val, &model)?;
            let valid = icevae::grid::fold_polar(
                ndarray::Array2::<f32>::zeros(h.grid.shape()).view(),
                &h.grid,
            )?
            .valid_mask;
            let masks = model.mask_pyramid(&valid)?;
            std::fs::create_dir_all(&out_dir)?;
            let result = train(
                &model,
                &train_ds,
                &val_ds,
                &masks,
                &cfg,
                Some(&out_dir.join("model.ckpt")),
                Some(&out_dir.join("train_log.csv")),
            )?;
            write_json(
                &serde_json::json!({
                    "provenance": Provenance { seed: cfg.seed, config_hash: config_hash(&(&cfg, &net_cfg))? },
                    "train_config": cfg,
                    "net_config": net_cfg,
                    "best_epoch": result.best_epoch,
                    "best_val": result.best_val,
                    "stopped_early": result.stopped_early,
                    "epochs_run": result.epochs.len(),
                }),
                &out_dir.join("train_result.json"),
            )?;
            eprintln!(
                "trained {} epochs, best val {:.6} at epoch {}",
                result.epochs.len(),
                result.best_val,
                result.best_epoch
            );
        }
        Cmd::Calibrate {
            hindcast,
            obs,
            splits,
            model,
            members,
            scales,
            seed,
            out_dir,
        } => {
            let h = load_hindcast(&hindcast)?;
            let o = load_obs(&obs)?;
            let sf = load_splits(&splits)?;
            let m = CvaeModel::load(&model, DType::F32)?;
            let xbar = ensemble_mean(&h);
            let scales = scales.unwrap_or_else(|| DEFAULT_SCALES.to_vec());
            std::fs::create_dir_all(&out_dir)?;
            let result = calibrate_scale(
                &m,
                &h,
                &o,
                &xbar,
                &sf.splits.val,
                members,
                seed,
                &scales,
                Some(&out_dir.join("scale_diagnostics.csv")),
            )?;
            write_json(
                &serde_json::json!({
                    "provenance": Provenance { seed, config_hash: config_hash(&scales)? },
                    "scale": result.scale,
                    "candidates": result.candidates,
                }),
                &out_dir.join("calibration.json"),
            )?;
            eprintln!("calibrated scale {}", result.scale);
        }
        Cmd::Adjust {
            hindcast,
            splits,
            model,
            split,
            members,
            scale,
            seed,
            out,
        } => {
            let h = load_hindcast(&hindcast)?;
            let sf = load_splits(&splits)?;
            let pairs = split_by_name(&sf.splits, &split)?;
            let m = CvaeModel::load(&model, DType::F32)?;
            let xbar = ensemble_mean(&h);
            let nadj = sample_ensemble(&m, &h, &xbar, pairs, members, scale, seed)?;
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            write_cube(
                &Cube::Hindcast(nadj),
                &out,
                Some(Provenance {
                    seed,
                    config_hash: config_hash(&(members, scale, &split))?,
                }),
            )?;
            eprintln!("wrote {}", out.display());
        }
        Cmd::Verify {
            forecast,
            obs,
            splits,
            split,
            label,
            seed,
            out_dir,
        } => {
            let f = load_hindcast(&forecast)?;
            let o = load_obs(&obs)?;
            let sf = load_splits(&splits)?;
            let pairs = split_by_name(&sf.splits, &split)?;
            let report = verify_cube(
                &f,
                &o,
                pairs,
                &label,
                &VerifyOptions {
                    seed,
                    ..Default::default()
                },
            )?;
            write_report(&report, &out_dir)?;
            eprintln!(
                "wrote report for {label}: mean SOE {:.3}, mean RMSE {:.4}",
                report.mean_soe(),
                report.mean_rmse()
            );
        }
        Cmd::Report {
            dir,
            labels,
            out_dir,
        } => {
            if labels.is_empty() {
                return Err(IceError::InvalidConfig(
                    "--labels requires at least one label".into(),
                ));
            }
            let mut reports = Vec::new();
            for label in &labels {
                let path = dir.join(format!("{label}_summary.json"));
                let text = std::fs::read_to_string(&path)?;
                let report: MetricReport = serde_json::from_str(&text)
                    .map_err(|e| IceError::MalformedHeader(e.to_string()))?;
                reports.push(report);
            }
            std::fs::create_dir_all(&out_dir)?;
            // six per-lead panels mirroring the headline comparison figure
            let panels: [(&str, fn(&icevae::verify::LeadMetrics) -> f64); 6] = [
                ("soe", |l| l.soe),
                ("rmse_grid", |l| l.rmse_grid),
                ("rmse_sia", |l| l.rmse_sia),
                ("rmse_sie", |l| l.rmse_sie),
                ("iiee", |l| l.mean_iiee),
                ("pattern_corr", |l| l.pattern_corr),
            ];
            for (name, get) in panels {
                for report in &reports {
                    let mut out = String::from("lead,value\n");
                    for l in &report.leads {
                        out.push_str(&format!("{},{}\n", l.lead, get(l)));
                    }
                    std::fs::write(
                        out_dir.join(format!("fig_{name}_{}.csv", report.label)),
                        out,
                    )?;
                }
            }
            // combined wide table
            let mut out = String::from(
                "label,lead,soe,rmse_grid,spread,rmse_sia,rmse_sie,mean_iiee,pattern_corr\n",
            );
            for report in &reports {
                for l in &report.leads {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{}\n",
                        report.label,
                        l.lead,
                        l.soe,
                        l.rmse_grid,
                        l.spread,
                        l.rmse_sia,
                        l.rmse_sie,
                        l.mean_iiee,
                        l.pattern_corr
                    ));
                }
            }
            std::fs::write(out_dir.join("comparison.csv"), out)?;
            eprintln!("wrote comparison files for {}", labels.join(", "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
