//! End-to-end pipeline on a 32x64 synthetic hindcast: generate data,
//! split temporally, fit the climatological baseline (badj), train the
//! conditional VAE, calibrate the prior spread scale on validation,
//! sample the corrected ensemble (nadj) on the test split, and compare
//! both against observations.

use candle_core::DType;
use icevae::baseline::{badj_adjust, climatological_bias};
use icevae::data::{ensemble_mean, synthetic_generate, temporal_split, SplitSpec, SyntheticConfig};
use icevae::grid::{fold_polar, PolarGrid};
use icevae::infer::{calibrate_scale, sample_ensemble};
use icevae::model::{CvaeModel, NetConfig};
use icevae::train::{build_dataset, train, TrainConfig};
use icevae::verify::{verify_cube, VerifyOptions};
use ndarray::Array2;

fn main() -> anyhow::Result<()> {
    let t0 = std::time::Instant::now();
    let grid = PolarGrid::synthetic(32, 64, 0.12, true, 42)?;
    let synth = SyntheticConfig {
        seed: 42,
        member_noise_sd: 0.02,
        obs_noise_sd: 0.06,
        bias_lead_growth: 0.002,
        n_member: 10,
        ..Default::default()
    };
    let out = synthetic_generate(&synth, &grid, 0, 48)?;
    let splits = temporal_split(
        &out.hindcast,
        &out.obs,
        &SplitSpec {
            train_end: 24,
            val_end: 36,
            test_end: 48,
        },
    )?;
    println!(
        "data ready: {} train / {} val / {} test pairs ({:.1}s)",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        t0.elapsed().as_secs_f64()
    );

    // climatological baseline
    let bias = climatological_bias(&out.hindcast, &out.obs, &splits.train)?;
    let badj = badj_adjust(&out.hindcast, &bias)?;

    // network training
    let model = CvaeModel::new(NetConfig::toy(grid.folded_shape()), 42, DType::F32)?;
    println!("model has {} parameters", model.params.n_params());
    let xbar = ensemble_mean(&out.hindcast);
    let train_ds = build_dataset(&out.hindcast, &out.obs, &xbar, &splits.train, &model)?;
    let val_ds = build_dataset(&out.hindcast, &out.obs, &xbar, &splits.val, &model)?;
    let valid = fold_polar(Array2::<f32>::zeros(grid.shape()).view(), &grid)?.valid_mask;
    let masks = model.mask_pyramid(&valid)?;
    let cfg = TrainConfig {
        lr: 3e-3,
        batch_size: 8,
        scheduler_period: 12,
        max_epochs: 12,
        early_stop_from: 1000,
        seed: 42,
        ..Default::default()
    };
    let result = train(&model, &train_ds, &val_ds, &masks, &cfg, None, None)?;
    for e in &result.epochs {
        println!(
            "epoch {:>2}: train total {:.5} | val total {:.5} recon {:.5} kl {:.5} det {:.5}",
            e.epoch, e.train.total, e.val.total, e.val.recon, e.val.kl, e.val.det
        );
    }
    println!(
        "trained {} epochs, best val {:.5} at epoch {} ({:.1}s)",
        result.epochs.len(),
        result.best_val,
        result.best_epoch,
        t0.elapsed().as_secs_f64()
    );

    // scale calibration on validation pairs
    let cal = calibrate_scale(
        &model,
        &out.hindcast,
        &out.obs,
        &xbar,
        &splits.val,
        30,
        777,
        &[1.0, 2.0, 4.0, 8.0, 16.0, 18.0, 20.0, 24.0],
        None,
    )?;
    for d in &cal.candidates {
        println!(
            "scale {:>3}: SOE {:.3}, RMSE {:.5}",
            d.scale, d.mean_soe, d.mean_rmse
        );
    }
    println!("calibrated scale: {}", cal.scale);

    // corrected ensemble on the test split
    let nadj = sample_ensemble(
        &model,
        &out.hindcast,
        &xbar,
        &splits.test,
        30,
        cal.scale,
        777,
    )?;

    let opts = VerifyOptions::default();
    let raw_r = verify_cube(&out.hindcast, &out.obs, &splits.test, "raw", &opts)?;
    let badj_r = verify_cube(&badj, &out.obs, &splits.test, "badj", &opts)?;
    let nadj_r = verify_cube(&nadj, &out.obs, &splits.test, "nadj", &opts)?;

    println!("lead  raw RMSE  badj RMSE  nadj RMSE  badj SOE  nadj SOE");
    for l in &nadj_r.leads {
        let r = raw_r.lead(l.lead).unwrap();
        let b = badj_r.lead(l.lead).unwrap();
        println!(
            "{:>4}  {:.5}   {:.5}    {:.5}    {:.3}     {:.3}",
            l.lead, r.rmse_grid, b.rmse_grid, l.rmse_grid, b.soe, l.soe
        );
    }
    println!(
        "mean RMSE: raw {:.5}, badj {:.5}, nadj {:.5}",
        raw_r.mean_rmse(),
        badj_r.mean_rmse(),
        nadj_r.mean_rmse()
    );
    println!(
        "mean |SOE-1|: badj {:.4}, nadj {:.4}",
        badj_r.mean_abs_soe_minus_one(),
        nadj_r.mean_abs_soe_minus_one()
    );
    let badj_dev: Vec<f64> = badj_r
        .rank_cdf
        .iter()
        .map(|(_, c)| c.max_uniform_deviation())
        .collect();
    let nadj_dev: Vec<f64> = nadj_r
        .rank_cdf
        .iter()
        .map(|(_, c)| c.max_uniform_deviation())
        .collect();
    println!("rank-CDF max deviation per lead: badj {badj_dev:.3?} nadj {nadj_dev:.3?}");
    println!("total wall time {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
