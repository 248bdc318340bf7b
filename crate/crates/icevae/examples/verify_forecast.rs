//! Verify a raw synthetic hindcast against observations: SOE, RMSE and
//! spread, integrated ice metrics, rank CDFs, and QQ quantiles.

use icevae::data::{synthetic_generate, temporal_split, SplitSpec, SyntheticConfig};
use icevae::grid::PolarGrid;
use icevae::verify::{verify_cube, write_report, VerifyOptions};

fn main() -> anyhow::Result<()> {
    let grid = PolarGrid::synthetic(16, 32, 0.12, true, 4)?;
    let config = SyntheticConfig {
        seed: 4,
        n_member: 10,
        ..Default::default()
    };
    let out = synthetic_generate(&config, &grid, 0, 72)?;
    let splits = temporal_split(
        &out.hindcast,
        &out.obs,
        &SplitSpec {
            train_end: 48,
            val_end: 60,
            test_end: 72,
        },
    )?;

    let report = verify_cube(
        &out.hindcast,
        &out.obs,
        &splits.test,
        "raw",
        &VerifyOptions::default(),
    )?;
    println!("lead  SOE     RMSE     spread   IIEE(km2)    pattern r");
    for l in &report.leads {
        println!(
            "{:>4}  {:.3}  {:.5}  {:.5}  {:>11.0}  {:.4}",
            l.lead, l.soe, l.rmse_grid, l.spread, l.mean_iiee, l.pattern_corr
        );
    }
    for (lead, cdf) in &report.rank_cdf {
        println!(
            "lead {lead}: rank-CDF max deviation from uniform {:.4} ({} samples)",
            cdf.max_uniform_deviation(),
            cdf.n_samples()
        );
    }

    let dir = std::env::temp_dir().join("icevae_verify_example");
    write_report(&report, &dir)?;
    println!("plot-ready files written to {}", dir.display());
    Ok(())
}
