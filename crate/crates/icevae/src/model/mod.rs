//! The conditional VAE: encoder, conditional prior, decoder with a
//! deterministic first-guess branch, and a shared output block, all built
//! from partial convolutions and ConvNeXt-style blocks on the folded grid.

pub mod blocks;
pub mod ops;

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{IceError, Result};
use crate::grid::FoldedField;
use blocks::{
    DecoderTrunk, Dense, EncoderTrunk, LatentHead, OutputBlock, ParamStore,
};
use ops::mask_tensor;

pub const N_POOL_STAGES: usize = 4;
const CHECKPOINT_MAGIC: &[u8; 8] = b"ICEVAECK";
const CHECKPOINT_VERSION: u32 = 1;

/// Network hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct NetConfig {
    pub latent_dim: usize,
    /// (stem, stage1..stage4, bottleneck) channel counts.
    pub stage_channels: [usize; 6],
    /// Constant decoder noise variance; with the dimensional normalization
    /// in the loss it reduces the reconstruction term to plain MSE.
    pub decoder_noise_var: f64,
    /// KL weight (beta).
    pub kl_weight: f64,
    /// Folded grid shape (H, W); both divisible by 2^4.
    pub grid_shape: (usize, usize),
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            latent_dim: 1000,
            stage_channels: [16, 32, 64, 128, 256, 256],
            decoder_noise_var: 1.0,
            kl_weight: 0.1,
            grid_shape: (64, 32),
        }
    }
}

impl NetConfig {
    /// Reduced configuration that trains in minutes on a desk-scale grid
    /// while preserving all shape logic.
    pub fn desk(grid_shape: (usize, usize)) -> Self {
        Self {
            latent_dim: 64,
            stage_channels: [8, 16, 24, 32, 48, 48],
            grid_shape,
            ..Default::default()
        }
    }

    /// Minimal configuration for gradient checks and shape tests.
    pub fn toy(grid_shape: (usize, usize)) -> Self {
        Self {
            latent_dim: 8,
            stage_channels: [4, 6, 6, 8, 8, 8],
            grid_shape,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1 << N_POOL_STAGES;
        if self.grid_shape.0 % div != 0 || self.grid_shape.1 % div != 0 {
            return Err(IceError::InvalidConfig(format!(
                "folded grid {}x{} must be divisible by {div}",
                self.grid_shape.0, self.grid_shape.1
            )));
        }
        if self.latent_dim == 0 {
            return Err(IceError::InvalidConfig("latent_dim must be >= 1".into()));
        }
        if self.stage_channels.iter().any(|c| *c == 0) {
            return Err(IceError::InvalidConfig("stage channels must be > 0".into()));
        }
        Ok(())
    }

    /// Bottleneck spatial shape after the pooling stages.
    pub fn bottleneck_shape(&self) -> (usize, usize) {
        (
            self.grid_shape.0 >> N_POOL_STAGES,
            self.grid_shape.1 >> N_POOL_STAGES,
        )
    }
}

/// The three constant conditioning planes: sin and cos of the target-month
/// phase, and the normalized lead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningFields {
    pub sin: f64,
    pub cos: f64,
    pub lead_frac: f64,
}

/// Conditioning values for init month `t` and 1-based lead `l`.
pub fn conditioning_channels(t: i32, l: usize) -> Result<ConditioningFields> {
    if !(1..=12).contains(&l) {
        return Err(IceError::LeadOutOfRange(l as u32));
    }
    let phase = 2.0 * std::f64::consts::PI * ((t + l as i32).rem_euclid(12) as f64) / 12.0;
    Ok(ConditioningFields {
        sin: phase.sin(),
        cos: phase.cos(),
        lead_frac: l as f64 / 12.0,
    })
}

impl ConditioningFields {
    /// Three constant planes as a (1, 3, H, W) tensor.
    pub fn planes(&self, shape: (usize, usize), dtype: DType, device: &Device) -> Result<Tensor> {
        let (h, w) = shape;
        let mut data = Vec::with_capacity(3 * h * w);
        for v in [self.sin as f32, self.cos as f32, self.lead_frac as f32] {
            data.extend(std::iter::repeat(v).take(h * w));
        }
        Ok(Tensor::from_vec(data, (1, 3, h, w), device)?.to_dtype(dtype)?)
    }
}

/// Diagonal-Gaussian parameters over the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn from_tensors(mean: &Tensor, log_var: &Tensor) -> Result<Self> {
        Ok(Self {
            mean: mean
                .flatten_all()?
                .to_dtype(DType::F64)?
                .to_vec1::<f64>()?,
            log_var: log_var
                .flatten_all()?
                .to_dtype(DType::F64)?
                .to_vec1::<f64>()?,
        })
    }
}

/// `z = mean + scale * exp(log_var / 2) * eps`.
pub fn reparameterize(g: &LatentGaussian, eps: &[f64], scale: f64) -> Vec<f64> {
    g.mean
        .iter()
        .zip(g.log_var.iter())
        .zip(eps.iter())
        .map(|((m, lv), e)| m + scale * (lv / 2.0).exp() * e)
        .collect()
}

/// Tensor-side reparameterization used during training.
pub fn reparameterize_t(mean: &Tensor, log_var: &Tensor, eps: &Tensor, scale: f64) -> Result<Tensor> {
    let std = ((log_var * 0.5)?.exp()? * scale)?;
    Ok((mean + (std * eps)?)?)
}

/// Zero-fill invalid cells of a folded field and lift to a (1, 1, H, W)
/// tensor; partial convolutions keep those zeros from contaminating valid
/// outputs.
pub fn folded_input_tensor(field: &FoldedField, dtype: DType, device: &Device) -> Result<Tensor> {
    let (h, w) = field.values.dim();
    let data: Vec<f32> = field
        .values
        .iter()
        .zip(field.valid_mask.iter())
        .map(|(v, ok)| if *ok && !v.is_nan() { *v } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(data, (1, 1, h, w), device)?.to_dtype(dtype)?)
}

/// The full model: encoder (phi), conditional prior (omega), decoder
/// (theta), deterministic branch, and the shared output block.
pub struct CvaeModel {
    pub config: NetConfig,
    pub params: ParamStore,
    encoder_trunk: EncoderTrunk,
    encoder_head: LatentHead,
    prior_trunk: EncoderTrunk,
    prior_head: LatentHead,
    det_trunk: EncoderTrunk,
    det_decoder: DecoderTrunk,
    decoder_dense: Dense,
    decoder_trunk: DecoderTrunk,
    output: OutputBlock,
}

impl CvaeModel {
    pub fn new(config: NetConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new(seed, dtype);
        let ch = &config.stage_channels;
        let (bh, bw) = config.bottleneck_shape();
        let spatial = bh * bw;
        let encoder_trunk = EncoderTrunk::new(&mut ps, "encoder", 5, ch)?;
        let encoder_head = LatentHead::new(&mut ps, "encoder.head", ch[5], spatial, config.latent_dim)?;
        let prior_trunk = EncoderTrunk::new(&mut ps, "prior", 5, ch)?;
        let prior_head = LatentHead::new(&mut ps, "prior.head", ch[5], spatial, config.latent_dim)?;
        let det_trunk = EncoderTrunk::new(&mut ps, "det", 4, ch)?;
        let det_decoder = DecoderTrunk::new(&mut ps, "det.decoder", ch)?;
        let decoder_dense = Dense::new(&mut ps, "decoder.dense", config.latent_dim, ch[5] * spatial)?;
        let decoder_trunk = DecoderTrunk::new(&mut ps, "decoder", ch)?;
        let output = OutputBlock::new(&mut ps, "output", ch[0])?;
        Ok(Self {
            config,
            params: ps,
            encoder_trunk,
            encoder_head,
            prior_trunk,
            prior_head,
            det_trunk,
            det_decoder,
            decoder_dense,
            decoder_trunk,
            output,
        })
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype
    }

    pub fn device(&self) -> &Device {
        &self.params.device
    }

    /// Validity-mask pyramid at resolutions 1 .. 1/16, from the folded
    /// ocean mask.
    pub fn mask_pyramid(&self, valid: &Array2<bool>) -> Result<Vec<Tensor>> {
        if valid.dim() != self.config.grid_shape {
            return Err(IceError::ShapeMismatch {
                expected: format!("{:?}", self.config.grid_shape),
                got: format!("{:?}", valid.dim()),
            });
        }
        let mut masks = vec![mask_tensor(valid, self.dtype(), self.device())?];
        for _ in 0..N_POOL_STAGES {
            let prev = masks.last().unwrap();
            let pooled = prev.max_pool2d(2)?;
            masks.push(pooled);
        }
        Ok(masks)
    }

    fn check_spatial(&self, x: &Tensor) -> Result<()> {
        let (_, _, h, w) = x.dims4()?;
        if (h, w) != self.config.grid_shape {
            return Err(IceError::ShapeMismatch {
                expected: format!("{:?}", self.config.grid_shape),
                got: format!("({h},{w})"),
            });
        }
        Ok(())
    }

    /// Encoder q(z | y, xbar): input channels (y, xbar, conditioning).
    pub fn encode(
        &self,
        y: &Tensor,
        xbar: &Tensor,
        cond: &Tensor,
        masks: &[Tensor],
    ) -> Result<(Tensor, Tensor)> {
        self.check_spatial(y)?;
        let b = y.dim(0)?;
        let cond = if cond.dim(0)? == b {
            cond.clone()
        } else {
            cond.expand((b, 3, self.config.grid_shape.0, self.config.grid_shape.1))?
        };
        let input = Tensor::cat(&[y, xbar, &cond], 1)?;
        let feat = self.encoder_trunk.forward(&input, masks)?;
        self.encoder_head.forward(&feat, &masks[N_POOL_STAGES])
    }

    /// Conditional prior p(z | xbar): input channels (ytilde, xbar, cond).
    pub fn prior(
        &self,
        ytilde: &Tensor,
        xbar: &Tensor,
        cond: &Tensor,
        masks: &[Tensor],
    ) -> Result<(Tensor, Tensor)> {
        self.check_spatial(ytilde)?;
        let b = ytilde.dim(0)?;
        let cond = if cond.dim(0)? == b {
            cond.clone()
        } else {
            cond.expand((b, 3, self.config.grid_shape.0, self.config.grid_shape.1))?
        };
        let input = Tensor::cat(&[ytilde, xbar, &cond], 1)?;
        let feat = self.prior_trunk.forward(&input, masks)?;
        self.prior_head.forward(&feat, &masks[N_POOL_STAGES])
    }

    /// Deterministic first guess: encoder and decoder trunks composed with
    /// the latent bottleneck removed. Returns the guess (through the shared
    /// output block) and the 16-channel features summed into the decoder.
    pub fn deterministic(
        &self,
        xbar: &Tensor,
        cond: &Tensor,
        masks: &[Tensor],
    ) -> Result<(Tensor, Tensor)> {
        self.check_spatial(xbar)?;
        let b = xbar.dim(0)?;
        let cond = if cond.dim(0)? == b {
            cond.clone()
        } else {
            cond.expand((b, 3, self.config.grid_shape.0, self.config.grid_shape.1))?
        };
        let input = Tensor::cat(&[xbar, &cond], 1)?;
        let feat = self.det_trunk.forward(&input, masks)?;
        let feats16 = self.det_decoder.forward(&feat, masks)?;
        let ytilde = self.output.forward(&feats16, &masks[0])?;
        Ok((ytilde, feats16))
    }

    /// Decode a latent sample into the mean of the decoder Gaussian,
    /// summing in the deterministic branch features before the shared
    /// output block.
    pub fn decode(&self, z: &Tensor, det_feats: &Tensor, masks: &[Tensor]) -> Result<Tensor> {
        let b = z.dim(0)?;
        if z.dim(1)? != self.config.latent_dim {
            return Err(IceError::ShapeMismatch {
                expected: format!("latent dim {}", self.config.latent_dim),
                got: format!("{}", z.dim(1)?),
            });
        }
        let (bh, bw) = self.config.bottleneck_shape();
        let c = self.config.stage_channels[5];
        let x = self.decoder_dense.forward(z)?;
        let x = x.reshape((b, c, bh, bw))?.broadcast_mul(&masks[N_POOL_STAGES])?;
        let feats = self.decoder_trunk.forward(&x, masks)?;
        let det = if det_feats.dim(0)? == b {
            det_feats.clone()
        } else {
            det_feats.expand(feats.shape())?
        };
        let summed = (feats + det)?;
        self.output.forward(&summed, &masks[0])
    }

    /// Write the checkpoint: JSON header (config, named tensor table,
    /// payload checksum) followed by the little-endian f32 parameter data.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload: Vec<u8> = Vec::new();
        let mut params = Vec::new();
        for (name, var) in self.params.named_vars() {
            let t = var.as_tensor().to_dtype(DType::F32)?;
            let shape = t.shape().dims().to_vec();
            let data = t.flatten_all()?.to_vec1::<f32>()?;
            for v in &data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            params.push(serde_json::json!({ "name": name, "shape": shape }));
        }
        let checksum = hex::encode(Sha256::digest(&payload));
        let header = serde_json::json!({
            "version": CHECKPOINT_VERSION,
            "config": self.config,
            "params": params,
            "checksum": checksum,
        });
        let header_bytes = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + header_bytes.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        out.extend_from_slice(&payload);
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 12 || &bytes[0..8] != CHECKPOINT_MAGIC {
            return Err(IceError::MalformedHeader("bad checkpoint magic".into()));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() < 12 + header_len {
            return Err(IceError::MalformedHeader(
                "checkpoint header exceeds file size".into(),
            ));
        }
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + header_len])
            .map_err(|e| IceError::MalformedHeader(e.to_string()))?;
        let version = header["version"].as_u64().unwrap_or(0) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(IceError::VersionMismatch {
                got: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let config: NetConfig = serde_json::from_value(header["config"].clone())?;
        let payload = &bytes[12 + header_len..];
        let checksum = hex::encode(Sha256::digest(payload));
        if Some(checksum.as_str()) != header["checksum"].as_str() {
            return Err(IceError::CheckpointMismatch(
                "payload checksum does not match header".into(),
            ));
        }
        let model = Self::new(config, 0, dtype)?;
        let mut offset = 0usize;
        let params = header["params"]
            .as_array()
            .ok_or_else(|| IceError::MalformedHeader("missing params table".into()))?;
        if params.len() != model.params.named_vars().len() {
            return Err(IceError::CheckpointMismatch(format!(
                "parameter count {} does not match model {}",
                params.len(),
                model.params.named_vars().len()
            )));
        }
        for entry in params {
            let name = entry["name"]
                .as_str()
                .ok_or_else(|| IceError::MalformedHeader("param without name".into()))?;
            let shape: Vec<usize> = serde_json::from_value(entry["shape"].clone())?;
            let n: usize = shape.iter().product();
            if payload.len() < offset + 4 * n {
                return Err(IceError::TruncatedPayload {
                    expected: offset + 4 * n,
                    got: payload.len(),
                });
            }
            let data: Vec<f32> = payload[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            model.params.set(name, data)?;
            offset += 4 * n;
        }
        Ok(model)
    }
}
