//! Train a reduced conditional VAE for a few epochs on a small synthetic
//! dataset and print the loss trajectory.

use candle_core::DType;
use icevae::data::{ensemble_mean, synthetic_generate, temporal_split, SplitSpec, SyntheticConfig};
use icevae::grid::{fold_polar, PolarGrid};
use icevae::model::{CvaeModel, NetConfig};
use icevae::train::{build_dataset, train, TrainConfig};
use ndarray::Array2;

fn main() -> anyhow::Result<()> {
    let grid = PolarGrid::synthetic(8, 32, 0.1, false, 11)?;
    let config = SyntheticConfig {
        seed: 11,
        n_member: 5,
        ..Default::default()
    };
    let out = synthetic_generate(&config, &grid, 0, 48)?;
    let splits = temporal_split(
        &out.hindcast,
        &out.obs,
        &SplitSpec {
            train_end: 30,
            val_end: 40,
            test_end: 48,
        },
    )?;

    let model = CvaeModel::new(NetConfig::toy(grid.folded_shape()), 0, DType::F32)?;
    println!("model has {} parameters", model.params.n_params());

    let xbar = ensemble_mean(&out.hindcast);
    let train_ds = build_dataset(&out.hindcast, &out.obs, &xbar, &splits.train, &model)?;
    let val_ds = build_dataset(&out.hindcast, &out.obs, &xbar, &splits.val, &model)?;
    let valid = fold_polar(Array2::<f32>::zeros(grid.shape()).view(), &grid)?.valid_mask;
    let masks = model.mask_pyramid(&valid)?;

    let cfg = TrainConfig {
        lr: 1e-3,
        batch_size: 32,
        max_epochs: 10,
        early_stop_from: 1000,
        seed: 0,
        ..Default::default()
    };
    let result = train(&model, &train_ds, &val_ds, &masks, &cfg, None, None)?;
    println!("epoch   lr        train     val");
    for e in &result.epochs {
        println!(
            "{:>5}   {:.1e}   {:.5}   {:.5}",
            e.epoch, e.lr, e.train.total, e.val.total
        );
    }
    println!(
        "best validation loss {:.5} at epoch {}",
        result.best_val, result.best_epoch
    );
    Ok(())
}
