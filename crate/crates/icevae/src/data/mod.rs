//! Forecast-aligned data cubes, temporal train/validation/test splitting,
//! synthetic hindcast generation, and cube file I/O.

mod io;
mod split;
mod synth;

pub use io::{read_cube, write_cube, Cube, Provenance, FORMAT_VERSION};
pub use split::{temporal_split, SplitSet, SplitSpec, Splits};
pub use synth::{synthetic_generate, InjectedBias, SyntheticConfig, SyntheticOutput};

use ndarray::{Array3, Array4, Array5, ArrayView2};

use crate::error::{IceError, Result};
use crate::grid::PolarGrid;

/// Number of monthly leads per forecast.
pub const N_LEAD: usize = 12;

/// Ensemble hindcast values indexed by (init, lead, member, lat, lon).
///
/// `inits` are months since an arbitrary epoch; lead `l` (1..=12) targets
/// calendar month `init + l`. Ocean values are SIC in [0,1]; land cells
/// carry NaN and are never read.
#[derive(Debug, Clone)]
pub struct HindcastCube {
    pub inits: Vec<i32>,
    pub n_lead: usize,
    pub n_member: usize,
    /// (T, n_lead, n_member, n_lat, n_lon)
    pub values: Array5<f32>,
    pub grid: PolarGrid,
}

/// Observations stored once per calendar month and exposed through the
/// forecast-aligned (init, lead) view, which makes the alignment invariant
/// `obs[t][l] == obs[t'][l']` for `t + l == t' + l'` hold by construction.
#[derive(Debug, Clone)]
pub struct ObsCube {
    /// Month index of `values[0]`.
    pub first_month: i32,
    /// (n_months, n_lat, n_lon)
    pub values: Array3<f32>,
    pub n_lead: usize,
    pub grid: PolarGrid,
}

impl HindcastCube {
    pub fn n_init(&self) -> usize {
        self.inits.len()
    }

    /// Target month of forecast `t_idx` at 1-based lead `lead`.
    pub fn target_month(&self, t_idx: usize, lead: usize) -> i32 {
        self.inits[t_idx] + lead as i32
    }

    pub fn member(&self, t_idx: usize, lead: usize, member: usize) -> ArrayView2<'_, f32> {
        self.values
            .index_axis(ndarray::Axis(0), t_idx)
            .index_axis_move(ndarray::Axis(0), lead - 1)
            .index_axis_move(ndarray::Axis(0), member)
    }
}

impl ObsCube {
    pub fn last_month(&self) -> i32 {
        self.first_month + self.values.dim().0 as i32 - 1
    }

    pub fn has_month(&self, month: i32) -> bool {
        month >= self.first_month && month <= self.last_month()
    }

    /// Observation for calendar month `month`.
    pub fn month(&self, month: i32) -> Result<ArrayView2<'_, f32>> {
        if !self.has_month(month) {
            return Err(IceError::ShapeMismatch {
                expected: format!("month in {}..={}", self.first_month, self.last_month()),
                got: month.to_string(),
            });
        }
        let idx = (month - self.first_month) as usize;
        Ok(self.values.index_axis(ndarray::Axis(0), idx))
    }

    /// Forecast-aligned view: observation targeted by (`init`, `lead`).
    pub fn at(&self, init: i32, lead: usize) -> Result<ArrayView2<'_, f32>> {
        self.month(init + lead as i32)
    }
}

/// Arithmetic mean over the member axis; NaN land sentinels propagate.
pub fn ensemble_mean(cube: &HindcastCube) -> Array4<f32> {
    let (t, l, n, h, w) = cube.values.dim();
    let mut out = Array4::zeros((t, l, h, w));
    for ti in 0..t {
        for li in 0..l {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0f64;
                    for m in 0..n {
                        acc += cube.values[[ti, li, m, i, j]] as f64;
                    }
                    out[[ti, li, i, j]] = (acc / n as f64) as f32;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_cube(t: usize, n: usize, h: usize, w: usize, seed: u64) -> HindcastCube {
        let grid = PolarGrid::new(h, w, 50.0, 1.0, Array2::from_elem((h, w), false)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array5::from_shape_fn((t, N_LEAD, n, h, w), |_| rng.gen::<f32>());
        HindcastCube {
            inits: (0..t as i32).collect(),
            n_lead: N_LEAD,
            n_member: n,
            values,
            grid,
        }
    }

    #[test]
    fn ensemble_mean_single_member_identity() {
        let cube = toy_cube(2, 1, 3, 4, 1);
        let mean = ensemble_mean(&cube);
        for ti in 0..2 {
            for li in 0..N_LEAD {
                for i in 0..3 {
                    for j in 0..4 {
                        assert_eq!(mean[[ti, li, i, j]], cube.values[[ti, li, 0, i, j]]);
                    }
                }
            }
        }
    }

    #[test]
    fn ensemble_mean_two_members() {
        let mut cube = toy_cube(1, 2, 1, 2, 2);
        cube.values[[0, 0, 0, 0, 0]] = 0.2;
        cube.values[[0, 0, 1, 0, 0]] = 0.4;
        let mean = ensemble_mean(&cube);
        assert!((mean[[0, 0, 0, 0]] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn ensemble_mean_matches_loop_oracle() {
        let cube = toy_cube(3, 5, 4, 6, 3);
        let mean = ensemble_mean(&cube);
        for ti in 0..3 {
            for li in 0..N_LEAD {
                for i in 0..4 {
                    for j in 0..6 {
                        let mut acc = 0.0f64;
                        for m in 0..5 {
                            acc += cube.values[[ti, li, m, i, j]] as f64;
                        }
                        let expect = acc / 5.0;
                        // output is rounded to f32
                        assert!((mean[[ti, li, i, j]] as f64 - expect).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn obs_alignment_invariant() {
        let grid = PolarGrid::new(2, 4, 50.0, 1.0, Array2::from_elem((2, 4), false)).unwrap();
        let values = Array3::from_shape_fn((30, 2, 4), |(m, i, j)| (m * 8 + i * 4 + j) as f32);
        let obs = ObsCube {
            first_month: 5,
            values,
            n_lead: N_LEAD,
            grid,
        };
        // t + l identical => identical field
        let a = obs.at(7, 3).unwrap().to_owned();
        let b = obs.at(9, 1).unwrap().to_owned();
        assert_eq!(a, b);
        assert!(obs.at(100, 1).is_err());
    }
}
