//! Synthetic hindcast/observation generator with a known injected bias.
//!
//! Stands in for real coupled-model hindcasts and satellite observations.
//! The truth field is a spatially smooth seasonal cycle plus a linear trend
//! and an AR(1) interannual anomaly, squashed through a logistic so that
//! marginal-ice values (0.15..0.90) stay well populated. Model members add
//! a deterministic bias `b(target month, lead)` with smooth spatial
//! modulation, plus per-member noise. The injected bias is returned so the
//! baseline and verification modules can check recovery against ground truth.

use ndarray::{Array2, Array3, Array5};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::data::{HindcastCube, ObsCube, N_LEAD};
use crate::error::{IceError, Result};
use crate::grid::PolarGrid;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// SIC per year, applied in logit space scaled by 4.
    pub trend_per_year: f64,
    /// Approximate SIC amplitude of the seasonal cycle.
    pub seasonal_amplitude: f64,
    /// Approximate SIC amplitude of the interannual anomaly.
    pub anomaly_sd: f64,
    /// Seasonal part of the injected model bias, in SIC.
    pub bias_amplitude: f64,
    /// Linear lead-time growth of the injected bias, SIC per month.
    pub bias_lead_growth: f64,
    pub member_noise_sd: f64,
    pub obs_noise_sd: f64,
    /// AR(1) coefficient of the interannual anomaly, in [0, 1).
    pub red_noise_ar1: f64,
    pub n_member: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trend_per_year: -0.005,
            seasonal_amplitude: 0.25,
            anomaly_sd: 0.05,
            bias_amplitude: 0.08,
            bias_lead_growth: 0.005,
            member_noise_sd: 0.05,
            obs_noise_sd: 0.01,
            red_noise_ar1: 0.6,
            n_member: 10,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.member_noise_sd < 0.0 || self.obs_noise_sd < 0.0 || self.anomaly_sd < 0.0 {
            return Err(IceError::InvalidConfig(
                "noise standard deviations must be >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.red_noise_ar1) {
            return Err(IceError::InvalidConfig(format!(
                "red_noise_ar1 must be in [0, 1), got {}",
                self.red_noise_ar1
            )));
        }
        if self.n_member == 0 {
            return Err(IceError::InvalidConfig("n_member must be >= 1".into()));
        }
        Ok(())
    }
}

/// The deterministic bias injected into the synthetic model members,
/// as a function of target calendar month and lead.
#[derive(Debug, Clone)]
pub struct InjectedBias {
    pub amplitude: f64,
    pub lead_growth: f64,
    /// Smooth spatial modulation in [0, 1].
    pub pattern: Array2<f64>,
}

impl InjectedBias {
    /// Seasonal factor shared with the truth field, peaking in late winter.
    pub fn seasonal(month: i32) -> f64 {
        let m = month.rem_euclid(12) as f64;
        (2.0 * PI * (m - 2.0) / 12.0).cos()
    }

    /// Bias field for a given target month and 1-based lead.
    pub fn field(&self, target_month: i32, lead: usize) -> Array2<f64> {
        let s = Self::seasonal(target_month);
        let scale = self.amplitude * s + self.lead_growth * lead as f64;
        self.pattern.mapv(|p| scale * p)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub hindcast: HindcastCube,
    pub obs: ObsCube,
    pub bias: InjectedBias,
    /// Truth per calendar month, same layout as the observation record.
    pub truth: Array3<f32>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smooth spatial basis used for the anomaly modes and bias modulation.
fn mode(i: usize, j: usize, h: usize, w: usize, ki: f64, kj: f64, phase: f64) -> f64 {
    let u = (i as f64 + 0.5) / h as f64;
    let v = (j as f64 + 0.5) / w as f64;
    (PI * ki * u + phase).sin() * (2.0 * PI * kj * v + phase).cos()
}

/// Generate a hindcast/observation pair over `n_init` monthly initializations
/// starting at `first_init`. The observational record spans all target months
/// `first_init + 1 ..= first_init + n_init - 1 + 12`.
pub fn synthetic_generate(
    config: &SyntheticConfig,
    grid: &PolarGrid,
    first_init: i32,
    n_init: usize,
) -> Result<SyntheticOutput> {
    config.validate()?;
    if n_init == 0 {
        return Err(IceError::InvalidConfig("n_init must be >= 1".into()));
    }
    let (h, w) = grid.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    // smooth spatial structure: base state increases poleward with a gentle
    // longitudinal wave
    let base = Array2::from_shape_fn((h, w), |(i, j)| {
        let u = (i as f64 + 0.5) / h as f64;
        let v = (j as f64 + 0.5) / w as f64;
        3.2 * u - 1.4 + 0.4 * (2.0 * PI * v).sin()
    });
    let seasonal_pattern = Array2::from_shape_fn((h, w), |(i, j)| {
        0.6 + 0.4 * mode(i, j, h, w, 1.0, 1.0, 0.3)
    });
    let bias_pattern = Array2::from_shape_fn((h, w), |(i, j)| {
        0.5 + 0.5 * mode(i, j, h, w, 2.0, 1.0, 1.1)
    });

    const N_MODES: usize = 4;
    let anomaly_modes: Vec<Array2<f64>> = (0..N_MODES)
        .map(|k| {
            Array2::from_shape_fn((h, w), |(i, j)| {
                mode(i, j, h, w, 1.0 + k as f64, 1.0 + (k % 2) as f64, 0.7 * k as f64)
            })
        })
        .collect();

    let first_month = first_init + 1;
    let n_months = n_init - 1 + N_LEAD;
    let last_init = first_init + n_init as i32 - 1;

    // AR(1) coefficients per anomaly mode, one step per calendar month
    let ar1 = config.red_noise_ar1;
    let innov = (1.0 - ar1 * ar1).sqrt();
    let mut coeffs = vec![vec![0.0f64; N_MODES]; n_months];
    for k in 0..N_MODES {
        coeffs[0][k] = std_normal.sample(&mut rng);
    }
    for m in 1..n_months {
        for k in 0..N_MODES {
            coeffs[m][k] = ar1 * coeffs[m - 1][k] + innov * std_normal.sample(&mut rng);
        }
    }

    // truth and observations per calendar month
    let mut truth = Array3::zeros((n_months, h, w));
    let mut obs_values = Array3::zeros((n_months, h, w));
    for m in 0..n_months {
        let month = first_month + m as i32;
        let s = InjectedBias::seasonal(month);
        let years = (month - first_month) as f64 / 12.0;
        for i in 0..h {
            for j in 0..w {
                if grid.land_mask[[i, j]] {
                    truth[[m, i, j]] = f32::NAN;
                    obs_values[[m, i, j]] = f32::NAN;
                    continue;
                }
                let mut raw = base[[i, j]]
                    + 4.0 * config.seasonal_amplitude * s * seasonal_pattern[[i, j]]
                    + 4.0 * config.trend_per_year * years;
                for k in 0..N_MODES {
                    raw += 4.0 * config.anomaly_sd * coeffs[m][k] * anomaly_modes[k][[i, j]]
                        / (N_MODES as f64).sqrt();
                }
                // logistic squash with a small margin keeps cells off the
                // hard bounds unless noise or bias pushes them there
                let t = 0.03 + 0.94 * sigmoid(raw);
                truth[[m, i, j]] = t as f32;
                let noise = if config.obs_noise_sd > 0.0 {
                    config.obs_noise_sd * std_normal.sample(&mut rng)
                } else {
                    0.0
                };
                obs_values[[m, i, j]] = ((t + noise).clamp(0.0, 1.0)) as f32;
            }
        }
    }

    let bias = InjectedBias {
        amplitude: config.bias_amplitude,
        lead_growth: config.bias_lead_growth,
        pattern: bias_pattern,
    };

    // hindcast members: truth at the target month plus bias plus member noise
    let n = config.n_member;
    let mut values = Array5::zeros((n_init, N_LEAD, n, h, w));
    for ti in 0..n_init {
        let init = first_init + ti as i32;
        for lead in 1..=N_LEAD {
            let target = init + lead as i32;
            let m = (target - first_month) as usize;
            let bfield = bias.field(target, lead);
            for member in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        if grid.land_mask[[i, j]] {
                            values[[ti, lead - 1, member, i, j]] = f32::NAN;
                            continue;
                        }
                        let noise = if config.member_noise_sd > 0.0 {
                            config.member_noise_sd * std_normal.sample(&mut rng)
                        } else {
                            0.0
                        };
                        let v = truth[[m, i, j]] as f64 + bfield[[i, j]] + noise;
                        values[[ti, lead - 1, member, i, j]] = (v.clamp(0.0, 1.0)) as f32;
                    }
                }
            }
        }
    }
    let _ = last_init;

    let hindcast = HindcastCube {
        inits: (0..n_init as i32).map(|k| first_init + k).collect(),
        n_lead: N_LEAD,
        n_member: n,
        values,
        grid: grid.clone(),
    };
    let obs = ObsCube {
        first_month,
        values: obs_values,
        n_lead: N_LEAD,
        grid: grid.clone(),
    };
    Ok(SyntheticOutput {
        hindcast,
        obs,
        bias,
        truth,
    })
}
