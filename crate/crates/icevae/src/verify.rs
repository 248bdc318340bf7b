//! Probabilistic and deterministic verification: rank-histogram CDFs,
//! spread-over-error, QQ quantiles, RMSE and spread, integrated ice
//! area/extent, integrated ice edge error, and pattern correlation.
//!
//! All metrics are pure functions computed in f64; per-lead drivers pool
//! over initialization times. Rank ties are broken uniformly at random
//! with a seeded generator, since clipping at 0/1 makes ties common in SIC.

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{HindcastCube, ObsCube, SplitSet};
use crate::error::{IceError, Result};
use crate::grid::{area_weighted_mean, PolarGrid};

/// SIC threshold defining the ice edge for SIE and IIEE.
pub const ICE_EDGE_THRESHOLD: f64 = 0.15;
/// Marginal-ice band used to focus probabilistic verification.
pub const MARGINAL_LO: f64 = 0.15;
pub const MARGINAL_HI: f64 = 0.90;

/// True where the observed field lies in the marginal-ice band and is ocean.
pub fn marginal_ice_mask(obs: ArrayView2<f32>, land_mask: &Array2<bool>) -> Array2<bool> {
    Array2::from_shape_fn(obs.dim(), |(i, j)| {
        let v = obs[[i, j]] as f64;
        !land_mask[[i, j]] && !v.is_nan() && (MARGINAL_LO..=MARGINAL_HI).contains(&v)
    })
}

/// Rank of `obs` among `members`, ties broken uniformly at random.
fn rank_with_ties<R: Rng>(members: &[f32], obs: f32, rng: &mut R) -> usize {
    let mut less = 0usize;
    let mut eq = 0usize;
    for &m in members {
        if m < obs {
            less += 1;
        } else if m == obs {
            eq += 1;
        }
    }
    if eq == 0 {
        less
    } else {
        less + rng.gen_range(0..=eq)
    }
}

/// Pooled rank histogram over ranks 0..=N and its CDF.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankCdf {
    pub counts: Vec<u64>,
    pub cdf: Vec<f64>,
}

impl RankCdf {
    pub fn n_samples(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Maximum absolute deviation from the uniform CDF.
    pub fn max_uniform_deviation(&self) -> f64 {
        let n = self.cdf.len();
        self.cdf
            .iter()
            .enumerate()
            .map(|(k, c)| (c - (k + 1) as f64 / n as f64).abs())
            .fold(0.0, f64::max)
    }
}

/// Pool ranks over cases of (members, observation) for a fixed ensemble size.
pub fn rank_histogram_cdf(cases: &[(Vec<f32>, f32)], n_member: usize, seed: u64) -> Result<RankCdf> {
    if cases.is_empty() {
        return Err(IceError::EmptyPool);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; n_member + 1];
    for (members, obs) in cases {
        debug_assert_eq!(members.len(), n_member);
        counts[rank_with_ties(members, *obs, &mut rng)] += 1;
    }
    let total: u64 = counts.iter().sum();
    let mut cdf = Vec::with_capacity(counts.len());
    let mut acc = 0u64;
    for c in &counts {
        acc += c;
        cdf.push(acc as f64 / total as f64);
    }
    Ok(RankCdf { counts, cdf })
}

/// Per-cell statistics shared by SOE and RMSE/spread: ensemble variance
/// (ddof=1) and squared error of the ensemble mean, averaged over init times.
fn per_cell_stats(
    ensemble: ArrayView4<f32>,
    obs: ArrayView3<f32>,
    grid: &PolarGrid,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let (t, n, h, w) = ensemble.dim();
    if obs.dim() != (t, h, w) || (h, w) != grid.shape() {
        return Err(IceError::ShapeMismatch {
            expected: format!("({t},{h},{w}) on the cube grid"),
            got: format!("{:?}", obs.dim()),
        });
    }
    let mut var = Array2::zeros((h, w));
    let mut mse = Array2::zeros((h, w));
    let mut spread = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            if grid.land_mask[[i, j]] {
                continue;
            }
            let mut var_acc = 0.0;
            let mut mse_acc = 0.0;
            let mut sd_acc = 0.0;
            for ti in 0..t {
                let mut mean = 0.0f64;
                for m in 0..n {
                    mean += ensemble[[ti, m, i, j]] as f64;
                }
                mean /= n as f64;
                let mut ss = 0.0f64;
                for m in 0..n {
                    let d = ensemble[[ti, m, i, j]] as f64 - mean;
                    ss += d * d;
                }
                let s2 = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
                var_acc += s2;
                sd_acc += s2.sqrt();
                let e = mean - obs[[ti, i, j]] as f64;
                mse_acc += e * e;
            }
            var[[i, j]] = var_acc / t as f64;
            mse[[i, j]] = mse_acc / t as f64;
            spread[[i, j]] = sd_acc / t as f64;
        }
    }
    Ok((var, mse, spread))
}

/// Spread-over-error ratio for one lead: area-weighted ensemble variance and
/// ensemble-mean MSE are averaged separately, then
/// `sqrt((N+1)/N * var / mse)`.
pub fn soe(ensemble: ArrayView4<f32>, obs: ArrayView3<f32>, grid: &PolarGrid) -> Result<f64> {
    let (t, n, _, _) = ensemble.dim();
    if t < 2 || n < 2 {
        return Err(IceError::InvalidConfig(format!(
            "SOE requires >= 2 init times and >= 2 members, got {t} and {n}"
        )));
    }
    let (var, mse, _) = per_cell_stats(ensemble, obs, grid)?;
    let ocean = grid.land_mask.mapv(|m| !m);
    let num = area_weighted_mean(var.view(), grid.cell_area.view(), ocean.view())?;
    let den = area_weighted_mean(mse.view(), grid.cell_area.view(), ocean.view())?;
    if den == 0.0 {
        return Err(IceError::DegenerateForecast);
    }
    Ok(((n as f64 + 1.0) / n as f64 * num / den).sqrt())
}

/// Grid-cell RMSE of the ensemble mean and mean ensemble spread (std) for
/// one lead, both area-weighted over ocean cells.
pub fn rmse_and_spread(
    ensemble: ArrayView4<f32>,
    obs: ArrayView3<f32>,
    grid: &PolarGrid,
) -> Result<(f64, f64)> {
    let (var_unused, mse, spread) = per_cell_stats(ensemble, obs, grid)?;
    let _ = var_unused;
    let rmse_map = mse.mapv(f64::sqrt);
    let ocean = grid.land_mask.mapv(|m| !m);
    let rmse = area_weighted_mean(rmse_map.view(), grid.cell_area.view(), ocean.view())?;
    let sp = area_weighted_mean(spread.view(), grid.cell_area.view(), ocean.view())?;
    Ok((rmse, sp))
}

/// Empirical quantile with linear interpolation of order statistics.
fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = level.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Paired empirical quantiles of the two pools at the given levels.
pub fn qq_quantiles(
    ensemble_pool: &[f32],
    obs_pool: &[f32],
    levels: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if ensemble_pool.is_empty() || obs_pool.is_empty() {
        return Err(IceError::EmptyPool);
    }
    let mut ep: Vec<f64> = ensemble_pool.iter().map(|v| *v as f64).collect();
    let mut op: Vec<f64> = obs_pool.iter().map(|v| *v as f64).collect();
    ep.sort_by(|a, b| a.partial_cmp(b).unwrap());
    op.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(levels
        .iter()
        .map(|&p| (quantile_sorted(&ep, p), quantile_sorted(&op, p)))
        .collect())
}

/// Total sea-ice area: sum of SIC times cell area over ocean cells, km^2.
pub fn sia(field: ArrayView2<f32>, grid: &PolarGrid) -> f64 {
    let mut acc = 0.0;
    for i in 0..grid.n_lat {
        for j in 0..grid.n_lon {
            if !grid.land_mask[[i, j]] && !field[[i, j]].is_nan() {
                acc += field[[i, j]] as f64 * grid.cell_area[[i, j]];
            }
        }
    }
    acc
}

/// Sea-ice extent: total area of ocean cells with SIC strictly above 0.15.
pub fn sie(field: ArrayView2<f32>, grid: &PolarGrid) -> f64 {
    let mut acc = 0.0;
    for i in 0..grid.n_lat {
        for j in 0..grid.n_lon {
            if !grid.land_mask[[i, j]] && field[[i, j]] as f64 > ICE_EDGE_THRESHOLD {
                acc += grid.cell_area[[i, j]];
            }
        }
    }
    acc
}

/// Integrated ice edge error: area where exactly one of the two fields
/// exceeds the ice-edge threshold.
pub fn iiee(forecast: ArrayView2<f32>, obs: ArrayView2<f32>, grid: &PolarGrid) -> f64 {
    let mut acc = 0.0;
    for i in 0..grid.n_lat {
        for j in 0..grid.n_lon {
            if grid.land_mask[[i, j]] {
                continue;
            }
            let a = forecast[[i, j]] as f64 > ICE_EDGE_THRESHOLD;
            let b = obs[[i, j]] as f64 > ICE_EDGE_THRESHOLD;
            if a != b {
                acc += grid.cell_area[[i, j]];
            }
        }
    }
    acc
}

/// Area-weighted centered Pearson correlation between two maps.
pub fn pattern_correlation(
    forecast: ArrayView2<f32>,
    obs: ArrayView2<f32>,
    grid: &PolarGrid,
) -> Result<f64> {
    let ocean = grid.land_mask.mapv(|m| !m);
    let f = Array2::from_shape_fn(forecast.dim(), |(i, j)| forecast[[i, j]] as f64);
    let o = Array2::from_shape_fn(obs.dim(), |(i, j)| obs[[i, j]] as f64);
    let fm = area_weighted_mean(f.view(), grid.cell_area.view(), ocean.view())?;
    let om = area_weighted_mean(o.view(), grid.cell_area.view(), ocean.view())?;
    let mut sff = 0.0;
    let mut soo = 0.0;
    let mut sfo = 0.0;
    for i in 0..grid.n_lat {
        for j in 0..grid.n_lon {
            if grid.land_mask[[i, j]] {
                continue;
            }
            let w = grid.cell_area[[i, j]];
            let df = f[[i, j]] - fm;
            let dq = o[[i, j]] - om;
            sff += w * df * df;
            soo += w * dq * dq;
            sfo += w * df * dq;
        }
    }
    if sff == 0.0 || soo == 0.0 {
        return Err(IceError::Numerical("zero variance in map".into()));
    }
    Ok(sfo / (sff.sqrt() * soo.sqrt()))
}

/// Scalar verification results for one lead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeadMetrics {
    pub lead: usize,
    pub n_init: usize,
    pub soe: f64,
    pub rmse_grid: f64,
    pub spread: f64,
    pub rmse_sia: f64,
    pub rmse_sie: f64,
    pub mean_iiee: f64,
    pub pattern_corr: f64,
}

/// Full per-lead verification report for one adjusted ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub n_member: usize,
    pub leads: Vec<LeadMetrics>,
    /// (lead, CDF over ranks 0..=N)
    pub rank_cdf: Vec<(usize, RankCdf)>,
    /// (lead, paired (ensemble, obs) quantiles)
    pub qq: Vec<(usize, Vec<(f64, f64)>)>,
    pub quantile_levels: Vec<f64>,
}

impl MetricReport {
    pub fn lead(&self, lead: usize) -> Option<&LeadMetrics> {
        self.leads.iter().find(|l| l.lead == lead)
    }

    pub fn mean_abs_soe_minus_one(&self) -> f64 {
        let s: f64 = self.leads.iter().map(|l| (l.soe - 1.0).abs()).sum();
        s / self.leads.len() as f64
    }

    pub fn mean_rmse(&self) -> f64 {
        self.leads.iter().map(|l| l.rmse_grid).sum::<f64>() / self.leads.len() as f64
    }

    pub fn mean_soe(&self) -> f64 {
        self.leads.iter().map(|l| l.soe).sum::<f64>() / self.leads.len() as f64
    }

    /// Mean absolute gap between paired quantiles, averaged over leads.
    pub fn mean_qq_deviation(&self) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for (_, pairs) in &self.qq {
            for (e, o) in pairs {
                acc += (e - o).abs();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            acc / n as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Seed for rank tie-breaking.
    pub seed: u64,
    pub quantile_levels: Vec<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            quantile_levels: (1..100).map(|k| k as f64 / 100.0).collect(),
        }
    }
}

/// Verify an adjusted ensemble cube against observations over the given
/// (init, lead) pairs, grouped per lead. Leads with fewer than two init
/// times are skipped.
pub fn verify_cube(
    forecast: &HindcastCube,
    obs: &ObsCube,
    pairs: &SplitSet,
    label: &str,
    opts: &VerifyOptions,
) -> Result<MetricReport> {
    let grid = &forecast.grid;
    let (h, w) = grid.shape();
    let n = forecast.n_member;
    let mut leads = Vec::new();
    let mut rank_cdf = Vec::new();
    let mut qq = Vec::new();
    for lead in 1..=forecast.n_lead {
        let inits: Vec<usize> = pairs
            .iter()
            .filter(|(_, l)| *l == lead)
            .map(|(ti, _)| *ti)
            .collect();
        if inits.len() < 2 {
            continue;
        }
        let t = inits.len();
        let mut ens = Array4::zeros((t, n, h, w));
        let mut ob = Array3::zeros((t, h, w));
        for (k, &ti) in inits.iter().enumerate() {
            let field = obs.at(forecast.inits[ti], lead)?;
            for m in 0..n {
                let mem = forecast.member(ti, lead, m);
                for i in 0..h {
                    for j in 0..w {
                        ens[[k, m, i, j]] = mem[[i, j]];
                    }
                }
            }
            for i in 0..h {
                for j in 0..w {
                    ob[[k, i, j]] = field[[i, j]];
                }
            }
        }
        let soe_v = soe(ens.view(), ob.view(), grid)?;
        let (rmse_grid, spread) = rmse_and_spread(ens.view(), ob.view(), grid)?;

        // bulk measures over init times
        let mut sia_se = 0.0;
        let mut sie_se = 0.0;
        let mut iiee_acc = 0.0;
        let mut corr_acc = 0.0;
        let mut cases: Vec<(Vec<f32>, f32)> = Vec::new();
        let mut ens_pool: Vec<f32> = Vec::new();
        let mut obs_pool: Vec<f32> = Vec::new();
        for (k, &ti) in inits.iter().enumerate() {
            let obs_field = ob.index_axis(ndarray::Axis(0), k);
            let mut mean = Array2::zeros((h, w));
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0f64;
                    for m in 0..n {
                        acc += ens[[k, m, i, j]] as f64;
                    }
                    mean[[i, j]] = (acc / n as f64) as f32;
                }
            }
            let ds = sia(mean.view(), grid) - sia(obs_field, grid);
            sia_se += ds * ds;
            let de = sie(mean.view(), grid) - sie(obs_field, grid);
            sie_se += de * de;
            iiee_acc += iiee(mean.view(), obs_field, grid);
            corr_acc = corr_acc
                + pattern_correlation(mean.view(), obs_field, grid).map_err(|_| {
                    IceError::ZeroVariance {
                        t: forecast.inits[ti],
                        l: lead as u32,
                    }
                })?;
            // pooled marginal-ice cases for rank/QQ
            let marginal = marginal_ice_mask(obs_field, &grid.land_mask);
            for i in 0..h {
                for j in 0..w {
                    if marginal[[i, j]] {
                        let members: Vec<f32> = (0..n).map(|m| ens[[k, m, i, j]]).collect();
                        obs_pool.push(obs_field[[i, j]]);
                        ens_pool.extend_from_slice(&members);
                        cases.push((members, obs_field[[i, j]]));
                    }
                }
            }
        }
        let lm = LeadMetrics {
            lead,
            n_init: t,
            soe: soe_v,
            rmse_grid,
            spread,
            rmse_sia: (sia_se / t as f64).sqrt(),
            rmse_sie: (sie_se / t as f64).sqrt(),
            mean_iiee: iiee_acc / t as f64,
            pattern_corr: corr_acc / t as f64,
        };
        leads.push(lm);
        if !cases.is_empty() {
            rank_cdf.push((
                lead,
                rank_histogram_cdf(&cases, n, opts.seed.wrapping_add(lead as u64))?,
            ));
            qq.push((
                lead,
                qq_quantiles(&ens_pool, &obs_pool, &opts.quantile_levels)?,
            ));
        }
    }
    if leads.is_empty() {
        return Err(IceError::EmptyPool);
    }
    Ok(MetricReport {
        label: label.to_string(),
        n_member: n,
        leads,
        rank_cdf,
        qq,
        quantile_levels: opts.quantile_levels.clone(),
    })
}

/// Write a report as a per-lead CSV table, plot-ready two-column files per
/// curve, and a JSON summary.
pub fn write_report(report: &MetricReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let label = &report.label;
    let mut csv = String::from(
        "lead,n_init,soe,rmse_grid,spread,rmse_sia,rmse_sie,mean_iiee,pattern_corr\n",
    );
    for l in &report.leads {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            l.lead,
            l.n_init,
            l.soe,
            l.rmse_grid,
            l.spread,
            l.rmse_sia,
            l.rmse_sie,
            l.mean_iiee,
            l.pattern_corr
        ));
    }
    std::fs::write(dir.join(format!("{label}_metrics.csv")), csv)?;
    for (lead, cdf) in &report.rank_cdf {
        let mut out = String::from("rank,cdf\n");
        for (k, c) in cdf.cdf.iter().enumerate() {
            out.push_str(&format!("{k},{c}\n"));
        }
        std::fs::write(dir.join(format!("{label}_rank_cdf_lead{lead:02}.csv")), out)?;
    }
    for (lead, pairs) in &report.qq {
        let mut out = String::from("ensemble_quantile,obs_quantile\n");
        for (e, o) in pairs {
            out.push_str(&format!("{e},{o}\n"));
        }
        std::fs::write(dir.join(format!("{label}_qq_lead{lead:02}.csv")), out)?;
    }
    std::fs::write(
        dir.join(format!("{label}_summary.json")),
        serde_json::to_vec_pretty(report)?,
    )?;
    Ok(())
}
