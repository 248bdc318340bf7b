//! Lead-time-dependent climatological-mean bias correction, the benchmark
//! the generative correction is compared against ("badj").
//!
//! The bias is stratified by target calendar month and lead, since SIC bias
//! is strongly seasonal; stratifying only by lead would mix seasons.

use ndarray::Array4;

use crate::data::{ensemble_mean, HindcastCube, ObsCube, SplitSet};
use crate::error::{IceError, Result};

/// Per-stratum mean error of the ensemble mean against observations,
/// indexed by (target calendar month, lead-1, lat, lon).
#[derive(Debug, Clone)]
pub struct ClimatologicalBias {
    pub values: Array4<f64>,
    /// Training sample count per (target month, lead) stratum.
    pub counts: Vec<Vec<usize>>,
}

pub fn climatological_bias(
    hindcast: &HindcastCube,
    obs: &ObsCube,
    train_idx: &SplitSet,
) -> Result<ClimatologicalBias> {
    let (h, w) = hindcast.grid.shape();
    let n_lead = hindcast.n_lead;
    let mean = ensemble_mean(hindcast);
    let mut values = Array4::zeros((12, n_lead, h, w));
    let mut counts = vec![vec![0usize; n_lead]; 12];
    for &(ti, lead) in train_idx {
        let target = hindcast.target_month(ti, lead);
        let m = target.rem_euclid(12) as usize;
        let ob = obs.at(hindcast.inits[ti], lead)?;
        for i in 0..h {
            for j in 0..w {
                if hindcast.grid.land_mask[[i, j]] {
                    continue;
                }
                values[[m, lead - 1, i, j]] +=
                    mean[[ti, lead - 1, i, j]] as f64 - ob[[i, j]] as f64;
            }
        }
        counts[m][lead - 1] += 1;
    }
    for m in 0..12 {
        for l in 0..n_lead {
            if counts[m][l] == 0 {
                return Err(IceError::EmptyStratum {
                    month: m as u32,
                    lead: l as u32 + 1,
                });
            }
            let c = counts[m][l] as f64;
            for i in 0..h {
                for j in 0..w {
                    values[[m, l, i, j]] /= c;
                }
            }
        }
    }
    Ok(ClimatologicalBias { values, counts })
}

/// Subtract the climatological bias from every member, clipping to [0, 1].
pub fn badj_adjust(hindcast: &HindcastCube, bias: &ClimatologicalBias) -> Result<HindcastCube> {
    let (h, w) = hindcast.grid.shape();
    if bias.values.dim() != (12, hindcast.n_lead, h, w) {
        return Err(IceError::ShapeMismatch {
            expected: format!("12x{}x{h}x{w}", hindcast.n_lead),
            got: format!("{:?}", bias.values.dim()),
        });
    }
    let mut out = hindcast.clone();
    for (ti, &init) in hindcast.inits.iter().enumerate() {
        for lead in 1..=hindcast.n_lead {
            let m = (init + lead as i32).rem_euclid(12) as usize;
            for member in 0..hindcast.n_member {
                for i in 0..h {
                    for j in 0..w {
                        if hindcast.grid.land_mask[[i, j]] {
                            continue;
                        }
                        let v = hindcast.values[[ti, lead - 1, member, i, j]] as f64
                            - bias.values[[m, lead - 1, i, j]];
                        out.values[[ti, lead - 1, member, i, j]] = v.clamp(0.0, 1.0) as f32;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_generate, temporal_split, SplitSpec, SyntheticConfig, N_LEAD};
    use crate::grid::PolarGrid;

    fn setup(noise_free: bool) -> (crate::data::SyntheticOutput, crate::data::Splits) {
        let grid = PolarGrid::synthetic(8, 16, 0.1, false, 3).unwrap();
        let config = SyntheticConfig {
            seed: 21,
            bias_amplitude: 0.02,
            bias_lead_growth: 0.001,
            member_noise_sd: if noise_free { 0.0 } else { 0.05 },
            obs_noise_sd: 0.0,
            anomaly_sd: 0.02,
            n_member: 3,
            ..Default::default()
        };
        let out = synthetic_generate(&config, &grid, 0, 60).unwrap();
        let spec = SplitSpec {
            train_end: 36,
            val_end: 48,
            test_end: 60,
        };
        let splits = temporal_split(&out.hindcast, &out.obs, &spec).unwrap();
        (out, splits)
    }

    #[test]
    fn noise_free_bias_recovered_exactly() {
        let (out, splits) = setup(true);
        let bias = climatological_bias(&out.hindcast, &out.obs, &splits.train).unwrap();
        let grid = &out.hindcast.grid;
        for m in 0..12 {
            for lead in 1..=N_LEAD {
                // any absolute month with this calendar month works
                let target = 24 + ((m as i32) - (24 + 0i32).rem_euclid(12)).rem_euclid(12);
                let expect = out.bias.field(target, lead);
                for i in 0..grid.n_lat {
                    for j in 0..grid.n_lon {
                        if grid.land_mask[[i, j]] {
                            continue;
                        }
                        assert!(
                            (bias.values[[m, lead - 1, i, j]] - expect[[i, j]]).abs() < 1e-6,
                            "stratum ({m},{lead}) cell ({i},{j})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn noise_free_adjustment_matches_obs() {
        let (out, splits) = setup(true);
        let bias = climatological_bias(&out.hindcast, &out.obs, &splits.train).unwrap();
        let adjusted = badj_adjust(&out.hindcast, &bias).unwrap();
        let mean = ensemble_mean(&adjusted);
        let grid = &adjusted.grid;
        for &(ti, lead) in splits.test.iter() {
            let ob = out.obs.at(adjusted.inits[ti], lead).unwrap();
            for i in 0..grid.n_lat {
                for j in 0..grid.n_lon {
                    if grid.land_mask[[i, j]] {
                        continue;
                    }
                    assert!(
                        (mean[[ti, lead - 1, i, j]] - ob[[i, j]]).abs() < 1e-6,
                        "cell ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_bias_is_identity_and_clipping_holds() {
        let (out, splits) = setup(false);
        let hindcast = &out.hindcast;
        let mut bias = climatological_bias(hindcast, &out.obs, &splits.train).unwrap();
        bias.values.fill(0.0);
        let adjusted = badj_adjust(hindcast, &bias).unwrap();
        for (a, b) in adjusted.values.iter().zip(hindcast.values.iter()) {
            if !a.is_nan() {
                assert_eq!(a, b);
            }
        }

        bias.values.fill(0.2);
        let clipped = badj_adjust(hindcast, &bias).unwrap();
        for v in clipped.values.iter() {
            if !v.is_nan() {
                assert!((0.0..=1.0).contains(v));
            }
        }
        // member value below the bias clips to zero
        let mut tiny = hindcast.clone();
        tiny.values.iter_mut().for_each(|v| {
            if !v.is_nan() {
                *v = 0.05;
            }
        });
        let c = badj_adjust(&tiny, &bias).unwrap();
        for v in c.values.iter() {
            if !v.is_nan() {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn empty_stratum_is_reported() {
        let (out, mut splits) = setup(true);
        // drop every lead-3 pair from training
        splits.train.retain(|(_, l)| *l != 3);
        let err = climatological_bias(&out.hindcast, &out.obs, &splits.train).unwrap_err();
        match err {
            IceError::EmptyStratum { lead, .. } => assert_eq!(lead, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn commutes_with_member_permutation() {
        let (out, splits) = setup(false);
        let bias = climatological_bias(&out.hindcast, &out.obs, &splits.train).unwrap();
        let mut permuted = out.hindcast.clone();
        let n = permuted.n_member;
        for ti in 0..permuted.n_init() {
            for l in 0..permuted.n_lead {
                for i in 0..permuted.grid.n_lat {
                    for j in 0..permuted.grid.n_lon {
                        let tmp = permuted.values[[ti, l, 0, i, j]];
                        permuted.values[[ti, l, 0, i, j]] = permuted.values[[ti, l, n - 1, i, j]];
                        permuted.values[[ti, l, n - 1, i, j]] = tmp;
                    }
                }
            }
        }
        let a = ensemble_mean(&badj_adjust(&out.hindcast, &bias).unwrap());
        let b = ensemble_mean(&badj_adjust(&permuted, &bias).unwrap());
        for (x, y) in a.iter().zip(b.iter()) {
            if !x.is_nan() {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }
}
