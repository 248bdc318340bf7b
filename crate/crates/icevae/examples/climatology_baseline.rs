//! Split a hindcast temporally, fit the lead- and season-dependent
//! climatological bias on the training split, and apply it (badj).

use icevae::baseline::{badj_adjust, climatological_bias};
use icevae::data::{synthetic_generate, temporal_split, SplitSpec, SyntheticConfig};
use icevae::grid::PolarGrid;
use icevae::verify::{verify_cube, VerifyOptions};

fn main() -> anyhow::Result<()> {
    let grid = PolarGrid::synthetic(16, 32, 0.12, true, 3)?;
    let config = SyntheticConfig {
        seed: 3,
        n_member: 10,
        ..Default::default()
    };
    let out = synthetic_generate(&config, &grid, 0, 72)?;
    let spec = SplitSpec {
        train_end: 48,
        val_end: 60,
        test_end: 72,
    };
    let splits = temporal_split(&out.hindcast, &out.obs, &spec)?;
    println!(
        "train/val/test pairs: {}/{}/{}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );

    let bias = climatological_bias(&out.hindcast, &out.obs, &splits.train)?;
    let badj = badj_adjust(&out.hindcast, &bias)?;

    let opts = VerifyOptions::default();
    let raw = verify_cube(&out.hindcast, &out.obs, &splits.test, "raw", &opts)?;
    let adj = verify_cube(&badj, &out.obs, &splits.test, "badj", &opts)?;
    println!("lead  raw RMSE   badj RMSE");
    for (r, a) in raw.leads.iter().zip(adj.leads.iter()) {
        println!("{:>4}  {:.5}    {:.5}", r.lead, r.rmse_grid, a.rmse_grid);
    }
    println!(
        "mean RMSE: raw {:.5} -> badj {:.5}",
        raw.mean_rmse(),
        adj.mean_rmse()
    );
    Ok(())
}
