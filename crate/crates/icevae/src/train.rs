//! ELBO training: closed-form KL between diagonal Gaussians, dimensional
//! loss normalization, a linearly decaying learning rate with periodic
//! restarts, and early stopping on the validation loss.

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array4;
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{HindcastCube, ObsCube, SplitSet};
use crate::error::{IceError, Result};
use crate::grid::fold_polar;
use crate::model::{
    conditioning_channels, folded_input_tensor, CvaeModel, LatentGaussian,
};

/// Closed-form KL divergence KL(q || p) between diagonal Gaussians.
pub fn kl_gaussian(q: &LatentGaussian, p: &LatentGaussian) -> f64 {
    q.mean
        .iter()
        .zip(q.log_var.iter())
        .zip(p.mean.iter().zip(p.log_var.iter()))
        .map(|((qm, qlv), (pm, plv))| {
            0.5 * (plv - qlv) + (qlv.exp() + (qm - pm) * (qm - pm)) / (2.0 * plv.exp()) - 0.5
        })
        .sum()
}

/// Tensor form of [`kl_gaussian`]: per-sample KL summed over the latent
/// dimension, shape (B,).
pub fn kl_gaussian_t(
    q_mean: &Tensor,
    q_log_var: &Tensor,
    p_mean: &Tensor,
    p_log_var: &Tensor,
) -> Result<Tensor> {
    let var_ratio = (q_log_var - p_log_var)?.exp()?;
    let diff = (q_mean - p_mean)?;
    let mahal = (diff.sqr()? / p_log_var.exp()?)?;
    let inner = (((p_log_var - q_log_var)? * 0.5)? + ((var_ratio + mahal)? * 0.5)?)?;
    Ok(inner.sum(1)?.affine(1.0, -0.5 * q_mean.dim(1)? as f64)?)
}

/// Scalar components of one loss evaluation, all already normalized.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub det: f64,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// The learning rate decays linearly to zero over this many epochs,
    /// then restarts at the base rate.
    pub scheduler_period: usize,
    pub max_epochs: usize,
    /// First epoch (0-based) at which early stopping may trigger.
    pub early_stop_from: usize,
    pub patience: usize,
    /// Weight of the deterministic-branch reconstruction term.
    pub det_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 100,
            scheduler_period: 50,
            max_epochs: 150,
            early_stop_from: 85,
            patience: 10,
            det_weight: 1.0,
            seed: 0,
        }
    }
}

/// Learning rate at 0-based epoch `e`: linear decay to zero over the
/// scheduler period, restarting at the base rate.
pub fn lr_at_epoch(cfg: &TrainConfig, e: usize) -> f64 {
    let p = cfg.scheduler_period.max(1);
    cfg.lr * (1.0 - (e % p) as f64 / p as f64)
}

/// Folded training tensors for a set of (init, lead) samples: observation
/// targets, ensemble-mean inputs, and conditioning planes.
pub struct Dataset {
    /// (S, 1, H, W)
    pub y: Tensor,
    /// (S, 1, H, W)
    pub xbar: Tensor,
    /// (S, 3, H, W)
    pub cond: Tensor,
    pub n: usize,
}

/// Assemble a dataset from forecast-aligned pairs. `xbar_mean` is the
/// unfolded ensemble mean (T, n_lead, H, W).
pub fn build_dataset(
    hindcast: &HindcastCube,
    obs: &ObsCube,
    xbar_mean: &Array4<f32>,
    pairs: &SplitSet,
    model: &CvaeModel,
) -> Result<Dataset> {
    if pairs.is_empty() {
        return Err(IceError::EmptyPool);
    }
    let grid = &hindcast.grid;
    let (fh, fw) = grid.folded_shape();
    let dtype = model.dtype();
    let device = model.device();
    let mut ys = Vec::with_capacity(pairs.len());
    let mut xs = Vec::with_capacity(pairs.len());
    let mut cs = Vec::with_capacity(pairs.len());
    for &(ti, lead) in pairs {
        let y_field = obs.at(hindcast.inits[ti], lead)?;
        let y_folded = fold_polar(y_field, grid)?;
        ys.push(folded_input_tensor(&y_folded, dtype, device)?);
        let xbar = xbar_mean
            .index_axis(ndarray::Axis(0), ti)
            .index_axis_move(ndarray::Axis(0), lead - 1);
        let x_folded = fold_polar(xbar, grid)?;
        xs.push(folded_input_tensor(&x_folded, dtype, device)?);
        let cond = conditioning_channels(hindcast.inits[ti], lead)?;
        cs.push(cond.planes((fh, fw), dtype, device)?);
    }
    Ok(Dataset {
        y: Tensor::cat(&ys, 0)?,
        xbar: Tensor::cat(&xs, 0)?,
        cond: Tensor::cat(&cs, 0)?,
        n: pairs.len(),
    })
}

impl Dataset {
    fn select(&self, idx: &[usize], device: &candle_core::Device) -> Result<(Tensor, Tensor, Tensor)> {
        let idx: Vec<u32> = idx.iter().map(|i| *i as u32).collect();
        let idx = Tensor::from_vec(idx.clone(), idx.len(), device)?;
        Ok((
            self.y.index_select(&idx, 0)?,
            self.xbar.index_select(&idx, 0)?,
            self.cond.index_select(&idx, 0)?,
        ))
    }
}

/// One ELBO evaluation on a batch. Reconstruction is the masked MSE per
/// ocean cell scaled by the decoder noise variance; the KL is normalized
/// per latent dimension; the deterministic branch gets its own MSE term.
pub fn batch_loss(
    model: &CvaeModel,
    y: &Tensor,
    xbar: &Tensor,
    cond: &Tensor,
    masks: &[Tensor],
    eps: &Tensor,
    det_weight: f64,
) -> Result<(Tensor, LossParts)> {
    let b = y.dim(0)? as f64;
    let mask0 = &masks[0];
    let n_valid = mask0.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if n_valid == 0.0 {
        return Err(IceError::AllMasked);
    }

    let (ytilde, feats) = model.deterministic(xbar, cond, masks)?;
    let (qm, qlv) = model.encode(y, xbar, cond, masks)?;
    let (pm, plv) = model.prior(&ytilde, xbar, cond, masks)?;
    let z = crate::model::reparameterize_t(&qm, &qlv, eps, 1.0)?;
    let yhat = model.decode(&z, &feats, masks)?;

    let masked_mse = |pred: &Tensor| -> Result<Tensor> {
        let d = (pred - y)?.broadcast_mul(mask0)?;
        Ok((d.sqr()?.sum_all()? / (b * n_valid))?)
    };
    let recon = (masked_mse(&yhat)? / model.config.decoder_noise_var)?;
    let kl = (kl_gaussian_t(&qm, &qlv, &pm, &plv)?.mean(0)?
        / model.config.latent_dim as f64)?;
    let det = masked_mse(&ytilde)?;

    let total = ((&recon + (&kl * model.config.kl_weight)?)? + (&det * det_weight)?)?;
    let parts = LossParts {
        total: total.to_dtype(DType::F64)?.to_scalar::<f64>()?,
        recon: recon.to_dtype(DType::F64)?.to_scalar::<f64>()?,
        kl: kl.to_dtype(DType::F64)?.to_scalar::<f64>()?,
        det: det.to_dtype(DType::F64)?.to_scalar::<f64>()?,
    };
    if !parts.total.is_finite() {
        return Err(IceError::Numerical("non-finite training loss".into()));
    }
    Ok((total, parts))
}

fn normal_eps(
    rng: &mut ChaCha8Rng,
    b: usize,
    latent: usize,
    dtype: DType,
    device: &candle_core::Device,
) -> Result<Tensor> {
    let normal = Normal::new(0.0f64, 1.0).unwrap();
    let data: Vec<f32> = (0..b * latent).map(|_| normal.sample(rng) as f32).collect();
    Ok(Tensor::from_vec(data, (b, latent), device)?.to_dtype(dtype)?)
}

/// Per-epoch statistics recorded in the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossParts,
    pub val: LossParts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResult {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
}

fn eval_dataset(
    model: &CvaeModel,
    ds: &Dataset,
    masks: &[Tensor],
    cfg: &TrainConfig,
    batch: usize,
) -> Result<LossParts> {
    // fixed eval seed so the validation loss is comparable across epochs
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut acc = LossParts {
        total: 0.0,
        recon: 0.0,
        kl: 0.0,
        det: 0.0,
    };
    let mut seen = 0usize;
    let idx: Vec<usize> = (0..ds.n).collect();
    for chunk in idx.chunks(batch) {
        let (y, xbar, cond) = ds.select(chunk, model.device())?;
        let eps = normal_eps(
            &mut rng,
            chunk.len(),
            model.config.latent_dim,
            model.dtype(),
            model.device(),
        )?;
        let (_, parts) = batch_loss(model, &y, &xbar, &cond, masks, &eps, cfg.det_weight)?;
        let w = chunk.len() as f64;
        acc.total += parts.total * w;
        acc.recon += parts.recon * w;
        acc.kl += parts.kl * w;
        acc.det += parts.det * w;
        seen += chunk.len();
    }
    let n = seen as f64;
    Ok(LossParts {
        total: acc.total / n,
        recon: acc.recon / n,
        kl: acc.kl / n,
        det: acc.det / n,
    })
}

/// Train the model in place. Tracks the best validation loss, restores the
/// best parameters when finished, and optionally writes a checkpoint and a
/// CSV log.
pub fn train(
    model: &CvaeModel,
    train_ds: &Dataset,
    val_ds: &Dataset,
    masks: &[Tensor],
    cfg: &TrainConfig,
    checkpoint_path: Option<&Path>,
    log_path: Option<&Path>,
) -> Result<TrainResult> {
    let mut opt = AdamW::new(
        model.params.all_vars(),
        ParamsAdamW {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epochs = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Option<Vec<Vec<f32>>> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut log = String::from("epoch,lr,train_total,train_recon,train_kl,train_det,val_total,val_recon,val_kl,val_det\n");

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at_epoch(cfg, epoch);
        opt.set_learning_rate(lr);
        let mut idx: Vec<usize> = (0..train_ds.n).collect();
        idx.shuffle(&mut rng);
        let mut acc = LossParts {
            total: 0.0,
            recon: 0.0,
            kl: 0.0,
            det: 0.0,
        };
        for chunk in idx.chunks(cfg.batch_size) {
            let (y, xbar, cond) = train_ds.select(chunk, model.device())?;
            let eps = normal_eps(
                &mut rng,
                chunk.len(),
                model.config.latent_dim,
                model.dtype(),
                model.device(),
            )?;
            let (loss, parts) =
                batch_loss(model, &y, &xbar, &cond, masks, &eps, cfg.det_weight)?;
            opt.backward_step(&loss)?;
            let w = chunk.len() as f64 / train_ds.n as f64;
            acc.total += parts.total * w;
            acc.recon += parts.recon * w;
            acc.kl += parts.kl * w;
            acc.det += parts.det * w;
        }
        let val = eval_dataset(model, val_ds, masks, cfg, cfg.batch_size)?;
        log.push_str(&format!(
            "{epoch},{lr},{},{},{},{},{},{},{},{}\n",
            acc.total, acc.recon, acc.kl, acc.det, val.total, val.recon, val.kl, val.det
        ));
        epochs.push(EpochStats {
            epoch,
            lr,
            train: acc,
            val,
        });

        if val.total < best_val {
            best_val = val.total;
            best_epoch = epoch;
            since_best = 0;
            let snapshot: Vec<Vec<f32>> = model
                .params
                .named_vars()
                .iter()
                .map(|(_, v)| {
                    v.as_tensor()
                        .to_dtype(DType::F32)?
                        .flatten_all()?
                        .to_vec1::<f32>()
                })
                .collect::<candle_core::Result<_>>()?;
            best_params = Some(snapshot);
        } else {
            since_best += 1;
        }
        if epoch >= cfg.early_stop_from && since_best >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    if let Some(snapshot) = best_params {
        for ((name, _), data) in model.params.named_vars().iter().zip(snapshot) {
            model.params.set(name, data)?;
        }
    }
    if let Some(path) = checkpoint_path {
        model.save(path)?;
    }
    if let Some(path) = log_path {
        std::fs::write(path, log)?;
    }
    Ok(TrainResult {
        epochs,
        best_epoch,
        best_val,
        stopped_early,
    })
}

/// Central-difference gradient check on `n_checks` parameters spread across
/// all tensors. Returns the worst relative error and the number of
/// parameters actually checked. Use an F64 model.
pub fn gradient_check(
    model: &CvaeModel,
    y: &Tensor,
    xbar: &Tensor,
    cond: &Tensor,
    masks: &[Tensor],
    eps: &Tensor,
    n_checks: usize,
    h: f64,
) -> Result<(f64, usize)> {
    let loss_fn = |m: &CvaeModel| -> Result<f64> {
        let (_, parts) = batch_loss(m, y, xbar, cond, masks, eps, 1.0)?;
        Ok(parts.total)
    };
    let (loss, _) = batch_loss(model, y, xbar, cond, masks, eps, 1.0)?;
    let grads = loss.backward()?;

    // spread picks over tensors: element k of every tensor, then k+1, ...
    let named = model.params.named_vars();
    let mut picks: Vec<(usize, usize)> = Vec::new();
    let mut offset = 0usize;
    'outer: loop {
        let mut advanced = false;
        for (vi, (_, var)) in named.iter().enumerate() {
            if offset < var.as_tensor().elem_count() {
                advanced = true;
                picks.push((vi, offset));
                if picks.len() >= n_checks {
                    break 'outer;
                }
            }
        }
        if !advanced {
            break;
        }
        offset += 1;
    }

    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (vi, k) in picks {
        let (name, var) = &named[vi];
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g
                .to_dtype(DType::F64)?
                .flatten_all()?
                .to_vec1::<f64>()?[k],
            None => 0.0,
        };
        let base: Vec<f64> = var
            .as_tensor()
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        let mut plus = base.clone();
        plus[k] += h;
        model.params.set_f64(name, plus)?;
        let lp = loss_fn(model)?;
        let mut minus = base.clone();
        minus[k] -= h;
        model.params.set_f64(name, minus)?;
        let lm = loss_fn(model)?;
        model.params.set_f64(name, base)?;
        let numeric = (lp - lm) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-8 {
            // both effectively zero: consistent, nothing to compare
            checked += 1;
            continue;
        }
        worst = worst.max((analytic - numeric).abs() / scale);
        checked += 1;
    }
    Ok((worst, checked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetConfig;
    use candle_core::Device;
    use rand::Rng;

    #[test]
    fn kl_zero_when_identical() {
        let g = LatentGaussian {
            mean: vec![0.3, -1.2, 4.0],
            log_var: vec![0.1, -0.5, 1.0],
        };
        assert!(kl_gaussian(&g, &g).abs() < 1e-12);
    }

    #[test]
    fn kl_scalar_hand_value() {
        // q = N(1, 1), p = N(0, 4):
        // 0.5*ln 4 + (1 + 1)/8 - 0.5 = ln 2 - 0.25
        let q = LatentGaussian {
            mean: vec![1.0],
            log_var: vec![0.0],
        };
        let p = LatentGaussian {
            mean: vec![0.0],
            log_var: vec![4.0f64.ln()],
        };
        let expect = 2.0f64.ln() - 0.25;
        assert!((kl_gaussian(&q, &p) - expect).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // KL(q||p) = E_q[log q(z) - log p(z)], estimated by sampling q
        let q = LatentGaussian {
            mean: vec![0.5, -0.3],
            log_var: vec![0.2, -0.4],
        };
        let p = LatentGaussian {
            mean: vec![0.0, 0.1],
            log_var: vec![0.0, 0.3],
        };
        let closed = kl_gaussian(&q, &p);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0f64, 1.0).unwrap();
        let n = 2_000_000usize;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut s = 0.0;
            for k in 0..2 {
                let std_q = (q.log_var[k] / 2.0).exp();
                let z = q.mean[k] + std_q * normal.sample(&mut rng);
                let lq = -0.5 * q.log_var[k] - (z - q.mean[k]).powi(2) / (2.0 * q.log_var[k].exp());
                let lp = -0.5 * p.log_var[k] - (z - p.mean[k]).powi(2) / (2.0 * p.log_var[k].exp());
                s += lq - lp;
            }
            acc += s;
        }
        let mc = acc / n as f64;
        assert!(
            (mc / closed - 1.0).abs() < 0.01,
            "closed {closed} vs MC {mc}"
        );
    }

    #[test]
    fn kl_tensor_matches_scalar() {
        let dev = Device::Cpu;
        let q = LatentGaussian {
            mean: vec![0.5, -0.3, 0.9],
            log_var: vec![0.2, -0.4, 0.0],
        };
        let p = LatentGaussian {
            mean: vec![0.0, 0.1, -0.2],
            log_var: vec![0.0, 0.3, 0.5],
        };
        let t = |v: &Vec<f64>| {
            Tensor::from_vec(v.iter().map(|x| *x as f32).collect::<Vec<f32>>(), (1, 3), &dev)
                .unwrap()
        };
        let kl = kl_gaussian_t(&t(&q.mean), &t(&q.log_var), &t(&p.mean), &t(&p.log_var))
            .unwrap()
            .to_vec1::<f32>()
            .unwrap()[0] as f64;
        assert!((kl - kl_gaussian(&q, &p)).abs() < 1e-5);
    }

    #[test]
    fn lr_schedule_decays_and_restarts() {
        let cfg = TrainConfig {
            lr: 1e-4,
            scheduler_period: 50,
            ..Default::default()
        };
        assert!((lr_at_epoch(&cfg, 0) - 1e-4).abs() < 1e-18);
        assert!((lr_at_epoch(&cfg, 25) - 0.5e-4).abs() < 1e-18);
        assert!((lr_at_epoch(&cfg, 49) - 1e-4 * 0.02).abs() < 1e-18);
        // restart
        assert!((lr_at_epoch(&cfg, 50) - 1e-4).abs() < 1e-18);
        assert!((lr_at_epoch(&cfg, 75) - 0.5e-4).abs() < 1e-18);
    }

    fn toy_batch(
        model: &CvaeModel,
        b: usize,
        seed: u64,
    ) -> (Tensor, Tensor, Tensor, Vec<Tensor>, Tensor) {
        let (h, w) = model.config.grid_shape;
        let dev = model.device().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mk = |rng: &mut ChaCha8Rng, c: usize| {
            let data: Vec<f32> = (0..b * c * h * w).map(|_| rng.gen::<f32>()).collect();
            Tensor::from_vec(data, (b, c, h, w), &dev)
                .unwrap()
                .to_dtype(model.dtype())
                .unwrap()
        };
        let y = mk(&mut rng, 1);
        let xbar = mk(&mut rng, 1);
        let cond = mk(&mut rng, 3);
        let mut valid = ndarray::Array2::from_elem((h, w), true);
        valid[[0, 0]] = false;
        valid[[h - 1, w - 1]] = false;
        let masks = model.mask_pyramid(&valid).unwrap();
        let normal = Normal::new(0.0f64, 1.0).unwrap();
        let eps: Vec<f32> = (0..b * model.config.latent_dim)
            .map(|_| normal.sample(&mut rng) as f32)
            .collect();
        let eps = Tensor::from_vec(eps, (b, model.config.latent_dim), &dev)
            .unwrap()
            .to_dtype(model.dtype())
            .unwrap();
        (y, xbar, cond, masks, eps)
    }

    #[test]
    fn loss_components_positive_and_finite() {
        let model = CvaeModel::new(NetConfig::toy((16, 16)), 1, DType::F32).unwrap();
        let (y, xbar, cond, masks, eps) = toy_batch(&model, 2, 3);
        let (_, parts) = batch_loss(&model, &y, &xbar, &cond, &masks, &eps, 1.0).unwrap();
        assert!(parts.recon > 0.0 && parts.recon.is_finite());
        assert!(parts.kl >= 0.0 && parts.kl.is_finite());
        assert!(parts.det > 0.0 && parts.det.is_finite());
        let expect = parts.recon + 0.1 * parts.kl + parts.det;
        assert!((parts.total - expect).abs() < 1e-5);
    }

    #[test]
    fn gradient_check_small_model() {
        // f64 model so central differences are trustworthy
        let model = CvaeModel::new(NetConfig::toy((16, 16)), 5, DType::F64).unwrap();
        let (y, xbar, cond, masks, eps) = toy_batch(&model, 1, 9);
        let (worst, checked) =
            gradient_check(&model, &y, &xbar, &cond, &masks, &eps, 60, 1e-4).unwrap();
        assert!(checked >= 50, "only {checked} parameters checked");
        assert!(worst < 1e-3, "worst relative gradient error {worst}");
    }

    #[test]
    fn short_training_reduces_loss() {
        let model = CvaeModel::new(NetConfig::toy((16, 16)), 2, DType::F32).unwrap();
        let (h, w) = (16, 16);
        let dev = model.device().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // small structured dataset: y = smoothed xbar plus constant offset
        let n = 8;
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        let mut cs = Vec::new();
        for _ in 0..n {
            let x: Vec<f32> = (0..h * w).map(|_| 0.3 + 0.4 * rng.gen::<f32>()).collect();
            let y: Vec<f32> = x.iter().map(|v| v + 0.1).collect();
            xs.push(Tensor::from_vec(x, (1, 1, h, w), &dev).unwrap());
            ys.push(Tensor::from_vec(y, (1, 1, h, w), &dev).unwrap());
            let c: Vec<f32> = std::iter::repeat(0.5f32).take(3 * h * w).collect();
            cs.push(Tensor::from_vec(c, (1, 3, h, w), &dev).unwrap());
        }
        let ds = Dataset {
            y: Tensor::cat(&ys, 0).unwrap(),
            xbar: Tensor::cat(&xs, 0).unwrap(),
            cond: Tensor::cat(&cs, 0).unwrap(),
            n,
        };
        let valid = ndarray::Array2::from_elem((h, w), true);
        let masks = model.mask_pyramid(&valid).unwrap();
        let cfg = TrainConfig {
            lr: 2e-3,
            batch_size: 4,
            max_epochs: 15,
            early_stop_from: 1000,
            seed: 1,
            ..Default::default()
        };
        let result = train(&model, &ds, &ds, &masks, &cfg, None, None).unwrap();
        let first = result.epochs.first().unwrap().val.total;
        let last = result.best_val;
        assert!(
            last < first,
            "validation loss did not improve: {first} -> {last}"
        );
        assert_eq!(result.epochs.len(), 15);
    }

    #[test]
    fn early_stopping_honours_patience() {
        // zero learning rate: no improvement after epoch 0, so training
        // stops exactly at early_stop_from once patience is exhausted
        let model = CvaeModel::new(NetConfig::toy((16, 16)), 4, DType::F32).unwrap();
        let (y, xbar, cond, _, _) = toy_batch(&model, 4, 20);
        let ds = Dataset {
            y,
            xbar,
            cond,
            n: 4,
        };
        let valid = ndarray::Array2::from_elem((16, 16), true);
        let masks = model.mask_pyramid(&valid).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            batch_size: 4,
            max_epochs: 40,
            early_stop_from: 6,
            patience: 3,
            seed: 2,
            ..Default::default()
        };
        let result = train(&model, &ds, &ds, &masks, &cfg, None, None).unwrap();
        assert!(result.stopped_early);
        assert_eq!(result.epochs.len(), 7);
        assert_eq!(result.best_epoch, 0);
    }
}
