//! Inference: sample corrected ensembles ("nadj") from the conditional
//! prior with a spread scale, and calibrate that scale so the
//! spread-over-error ratio on the validation split is close to one without
//! giving up deterministic skill.

use candle_core::{DType, Tensor};
use ndarray::{Array2, Array4, Array5};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{HindcastCube, ObsCube, SplitSet};
use crate::error::{IceError, Result};
use crate::grid::{fold_polar, unfold_values};
use crate::model::{conditioning_channels, folded_input_tensor, CvaeModel};
use crate::verify::{verify_cube, VerifyOptions};

/// Candidate spread scales tried during calibration; 1 (no inflation) must
/// be present because it anchors the skill constraint.
pub const DEFAULT_SCALES: [f64; 6] = [1.0, 1.5, 2.0, 2.5, 3.0, 4.0];

/// Deterministic per-member noise stream: independent of how many members
/// are requested, so member `m` of an M-member ensemble equals member `m`
/// of any larger ensemble with the same seed.
fn member_rng(seed: u64, ti: usize, lead: usize, member: usize) -> ChaCha8Rng {
    // splitmix-style mixing of the coordinates into one stream id
    let mut x = seed
        ^ (ti as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (lead as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
        ^ (member as u64).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    ChaCha8Rng::seed_from_u64(x)
}

/// Sample an `n_member` corrected ensemble for every (init, lead) pair by
/// decoding prior draws `z = mu_p + scale * sigma_p * eps`. Slots outside
/// `pairs` stay NaN; land cells carry NaN; ocean values are clipped to
/// [0, 1].
pub fn sample_ensemble(
    model: &CvaeModel,
    hindcast: &HindcastCube,
    xbar_mean: &Array4<f32>,
    pairs: &SplitSet,
    n_member: usize,
    scale: f64,
    seed: u64,
) -> Result<HindcastCube> {
    if pairs.is_empty() {
        return Err(IceError::EmptyPool);
    }
    if n_member == 0 {
        return Err(IceError::InvalidConfig("n_member must be >= 1".into()));
    }
    let grid = &hindcast.grid;
    let (h, w) = grid.shape();
    let (fh, fw) = grid.folded_shape();
    let dtype = model.dtype();
    let device = model.device();
    let latent = model.config.latent_dim;

    // the folded validity mask is time-independent: fold any field once
    let probe = Array2::<f32>::zeros((h, w));
    let valid = fold_polar(probe.view(), grid)?.valid_mask;
    let masks = model.mask_pyramid(&valid)?;

    let mut values = Array5::from_elem(
        (hindcast.n_init(), hindcast.n_lead, n_member, h, w),
        f32::NAN,
    );
    let normal = Normal::new(0.0f64, 1.0).unwrap();
    for &(ti, lead) in pairs {
        let xbar = xbar_mean
            .index_axis(ndarray::Axis(0), ti)
            .index_axis_move(ndarray::Axis(0), lead - 1);
        let x_folded = fold_polar(xbar, grid)?;
        let x = folded_input_tensor(&x_folded, dtype, device)?;
        let cond = conditioning_channels(hindcast.inits[ti], lead)?
            .planes((fh, fw), dtype, device)?;
        let (ytilde, feats) = model.deterministic(&x, &cond, &masks)?;
        let (pm, plv) = model.prior(&ytilde, &x, &cond, &masks)?;

        let mut eps = Vec::with_capacity(n_member * latent);
        for m in 0..n_member {
            let mut rng = member_rng(seed, ti, lead, m);
            eps.extend((0..latent).map(|_| normal.sample(&mut rng) as f32));
        }
        let eps = Tensor::from_vec(eps, (n_member, latent), device)?.to_dtype(dtype)?;
        let pm = pm.expand((n_member, latent))?;
        let plv = plv.expand((n_member, latent))?;
        let z = crate::model::reparameterize_t(&pm, &plv, &eps, scale)?;
        let decoded = model.decode(&z, &feats, &masks)?; // (M, 1, H, W)
        let flat = decoded
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?;
        for m in 0..n_member {
            let folded = Array2::from_shape_vec(
                (fh, fw),
                flat[m * fh * fw..(m + 1) * fh * fw].to_vec(),
            )
            .map_err(|e| IceError::Numerical(e.to_string()))?;
            let map = unfold_values(folded.view(), grid)?;
            for i in 0..h {
                for j in 0..w {
                    values[[ti, lead - 1, m, i, j]] = if grid.land_mask[[i, j]] {
                        f32::NAN
                    } else {
                        map[[i, j]].clamp(0.0, 1.0)
                    };
                }
            }
        }
    }
    Ok(HindcastCube {
        inits: hindcast.inits.clone(),
        n_lead: hindcast.n_lead,
        n_member,
        values,
        grid: grid.clone(),
    })
}

/// Diagnostics for one candidate scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleDiag {
    pub scale: f64,
    pub mean_soe: f64,
    pub mean_abs_soe_err: f64,
    pub mean_rmse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub scale: f64,
    pub candidates: Vec<ScaleDiag>,
}

/// Selection rule: among candidates whose RMSE is within `rmse_tolerance`
/// (relative) of the unscaled RMSE, pick the scale whose mean SOE is
/// closest to one. The candidate list must include scale 1.
pub fn select_scale(diags: &[ScaleDiag], rmse_tolerance: f64) -> Result<f64> {
    let base = diags
        .iter()
        .find(|d| d.scale == 1.0)
        .ok_or_else(|| IceError::InvalidConfig("scale 1 missing from candidates".into()))?;
    let limit = base.mean_rmse * (1.0 + rmse_tolerance);
    diags
        .iter()
        .filter(|d| d.mean_rmse <= limit)
        .min_by(|a, b| a.mean_abs_soe_err.partial_cmp(&b.mean_abs_soe_err).unwrap())
        .map(|d| d.scale)
        .ok_or_else(|| IceError::InvalidConfig("no admissible scale".into()))
}

/// Calibrate the prior spread scale on validation pairs: sample an ensemble
/// per candidate, verify it, and apply [`select_scale`] with a 5% RMSE
/// tolerance. Optionally writes a per-candidate diagnostics CSV.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_scale(
    model: &CvaeModel,
    hindcast: &HindcastCube,
    obs: &ObsCube,
    xbar_mean: &Array4<f32>,
    val_pairs: &SplitSet,
    n_member: usize,
    seed: u64,
    candidates: &[f64],
    diag_csv: Option<&Path>,
) -> Result<CalibrationResult> {
    let mut scales: Vec<f64> = candidates.to_vec();
    if !scales.contains(&1.0) {
        scales.push(1.0);
    }
    scales.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut diags = Vec::new();
    for &scale in &scales {
        let cube = sample_ensemble(model, hindcast, xbar_mean, val_pairs, n_member, scale, seed)?;
        let report = verify_cube(
            &cube,
            obs,
            val_pairs,
            &format!("scale{scale}"),
            &VerifyOptions {
                seed,
                ..Default::default()
            },
        )?;
        diags.push(ScaleDiag {
            scale,
            mean_soe: report.mean_soe(),
            mean_abs_soe_err: report.mean_abs_soe_minus_one(),
            mean_rmse: report.mean_rmse(),
        });
    }
    if let Some(path) = diag_csv {
        let mut out = String::from("scale,mean_soe,mean_abs_soe_err,mean_rmse\n");
        for d in &diags {
            out.push_str(&format!(
                "{},{},{},{}\n",
                d.scale, d.mean_soe, d.mean_abs_soe_err, d.mean_rmse
            ));
        }
        std::fs::write(path, out)?;
    }
    let scale = select_scale(&diags, 0.05)?;
    Ok(CalibrationResult {
        scale,
        candidates: diags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ensemble_mean, synthetic_generate, SyntheticConfig};
    use crate::grid::PolarGrid;
    use crate::model::NetConfig;

    fn toy_setup() -> (CvaeModel, HindcastCube, crate::data::ObsCube, Array4<f32>) {
        let grid = PolarGrid::synthetic(8, 32, 0.1, false, 5).unwrap();
        let config = SyntheticConfig {
            seed: 9,
            n_member: 3,
            ..Default::default()
        };
        let out = synthetic_generate(&config, &grid, 0, 24).unwrap();
        let xbar = ensemble_mean(&out.hindcast);
        let model = CvaeModel::new(NetConfig::toy(grid.folded_shape()), 17, DType::F32).unwrap();
        (model, out.hindcast, out.obs, xbar)
    }

    #[test]
    fn sampling_is_deterministic_and_member_partitioned() {
        let (model, hindcast, _, xbar) = toy_setup();
        let pairs: SplitSet = vec![(0, 1), (3, 2)];
        let a = sample_ensemble(&model, &hindcast, &xbar, &pairs, 4, 2.0, 42).unwrap();
        let b = sample_ensemble(&model, &hindcast, &xbar, &pairs, 4, 2.0, 42).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!((x.is_nan() && y.is_nan()) || x == y);
        }
        // first 4 members of a larger ensemble match the 4-member run
        let big = sample_ensemble(&model, &hindcast, &xbar, &pairs, 7, 2.0, 42).unwrap();
        for &(ti, lead) in &pairs {
            for m in 0..4 {
                let small = a.member(ti, lead, m);
                let large = big.member(ti, lead, m);
                for (x, y) in small.iter().zip(large.iter()) {
                    assert!((x.is_nan() && y.is_nan()) || x == y);
                }
            }
        }
        // a different seed changes the ocean values
        let c = sample_ensemble(&model, &hindcast, &xbar, &pairs, 4, 2.0, 43).unwrap();
        assert!(a
            .values
            .iter()
            .zip(c.values.iter())
            .any(|(x, y)| !x.is_nan() && x != y));
    }

    #[test]
    fn samples_respect_bounds_and_land() {
        let (model, hindcast, _, xbar) = toy_setup();
        let pairs: SplitSet = vec![(1, 3)];
        let cube = sample_ensemble(&model, &hindcast, &xbar, &pairs, 3, 1.0, 1).unwrap();
        let grid = &cube.grid;
        for m in 0..3 {
            let field = cube.member(1, 3, m);
            for i in 0..grid.n_lat {
                for j in 0..grid.n_lon {
                    if grid.land_mask[[i, j]] {
                        assert!(field[[i, j]].is_nan());
                    } else {
                        assert!((0.0..=1.0).contains(&field[[i, j]]));
                    }
                }
            }
        }
        // untouched slots stay NaN
        assert!(cube.values[[0, 0, 0, 0, 0]].is_nan() || grid.land_mask[[0, 0]]);
        let lead0 = cube.member(0, 1, 0);
        assert!(lead0.iter().all(|v| v.is_nan() || false) || lead0.iter().any(|v| v.is_nan()));
    }

    #[test]
    fn spread_grows_with_scale() {
        let (model, hindcast, _, xbar) = toy_setup();
        let pairs: SplitSet = vec![(0, 1), (1, 1), (2, 1)];
        let spread_of = |scale: f64| {
            let cube = sample_ensemble(&model, &hindcast, &xbar, &pairs, 6, scale, 3).unwrap();
            let mut acc = 0.0f64;
            let mut n = 0usize;
            for &(ti, lead) in &pairs {
                let grid = &cube.grid;
                for i in 0..grid.n_lat {
                    for j in 0..grid.n_lon {
                        if grid.land_mask[[i, j]] {
                            continue;
                        }
                        let vals: Vec<f64> = (0..6)
                            .map(|m| cube.values[[ti, lead - 1, m, i, j]] as f64)
                            .collect();
                        let mean = vals.iter().sum::<f64>() / 6.0;
                        acc += vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
                        n += 1;
                    }
                }
            }
            acc / n as f64
        };
        let lo = spread_of(0.5);
        let hi = spread_of(3.0);
        assert!(hi > lo, "spread {hi} at scale 3 vs {lo} at scale 0.5");
    }

    #[test]
    fn select_scale_rule() {
        let d = |scale: f64, soe_err: f64, rmse: f64| ScaleDiag {
            scale,
            mean_soe: 1.0 - soe_err,
            mean_abs_soe_err: soe_err,
            mean_rmse: rmse,
        };
        // scale 3 has the best SOE within the RMSE budget
        let diags = vec![
            d(1.0, 0.6, 0.100),
            d(2.0, 0.3, 0.102),
            d(3.0, 0.05, 0.104),
            d(4.0, 0.01, 0.120), // violates the 5% RMSE constraint
        ];
        assert_eq!(select_scale(&diags, 0.05).unwrap(), 3.0);
        // without scale 1 the reference is undefined
        assert!(select_scale(&diags[1..], 0.05).is_err());
        // ties on admissibility: best SOE wins even at equal RMSE
        let diags = vec![d(1.0, 0.2, 0.1), d(1.5, 0.1, 0.1)];
        assert_eq!(select_scale(&diags, 0.05).unwrap(), 1.5);
    }

    #[test]
    fn calibrate_runs_and_returns_candidate() {
        let (model, hindcast, obs, xbar) = toy_setup();
        // two inits per lead so SOE is defined
        let pairs: SplitSet = vec![(0, 1), (1, 1), (0, 2), (1, 2)];
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("scales.csv");
        let result = calibrate_scale(
            &model,
            &hindcast,
            &obs,
            &xbar,
            &pairs,
            4,
            7,
            &[1.0, 2.0],
            Some(&csv),
        )
        .unwrap();
        assert!(result.scale == 1.0 || result.scale == 2.0);
        assert_eq!(result.candidates.len(), 2);
        let text = std::fs::read_to_string(csv).unwrap();
        assert!(text.lines().count() == 3);
    }
}
