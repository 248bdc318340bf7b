//! Network building blocks: parameter store, partial-conv layers,
//! ConvNeXt-style blocks, and the encoder/decoder trunks.

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{IceError, Result};
use crate::model::ops::{
    bilinear_upsample2, channel_layer_norm, masked_max_pool2, partial_conv2d,
};

/// Owns every trainable parameter, keyed by a stable hierarchical name.
/// Initialization draws from a seeded generator in construction order, so
/// identical seeds give identical weights.
pub struct ParamStore {
    pub device: Device,
    pub dtype: DType,
    vars: Vec<(String, Var)>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            device: Device::Cpu,
            dtype,
            vars: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn register(&mut self, name: &str, t: Tensor) -> Result<Var> {
        let var = Var::from_tensor(&t)?;
        self.vars.push((name.to_string(), var.clone()));
        Ok(var)
    }

    /// He-style normal init with the given standard deviation.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).unwrap();
        let data: Vec<f32> = (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        self.register(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Var> {
        let t = Tensor::zeros(shape, self.dtype, &self.device)?;
        self.register(name, t)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<Var> {
        let t = Tensor::ones(shape, self.dtype, &self.device)?;
        self.register(name, t)
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn named_vars(&self) -> &[(String, Var)] {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn n_params(&self) -> usize {
        self.vars
            .iter()
            .map(|(_, v)| v.as_tensor().elem_count())
            .sum()
    }

    /// Overwrite a named parameter, keeping shape and dtype.
    pub fn set(&self, name: &str, data: Vec<f32>) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| IceError::CheckpointMismatch(format!("unknown parameter {name}")))?;
        let shape = var.as_tensor().shape().clone();
        if shape.elem_count() != data.len() {
            return Err(IceError::CheckpointMismatch(format!(
                "parameter {name}: expected {} values, got {}",
                shape.elem_count(),
                data.len()
            )));
        }
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        var.set(&t)?;
        Ok(())
    }

    /// Full-precision variant of [`ParamStore::set`] for gradient checks.
    pub fn set_f64(&self, name: &str, data: Vec<f64>) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| IceError::CheckpointMismatch(format!("unknown parameter {name}")))?;
        let shape = var.as_tensor().shape().clone();
        if shape.elem_count() != data.len() {
            return Err(IceError::CheckpointMismatch(format!(
                "parameter {name}: expected {} values, got {}",
                shape.elem_count(),
                data.len()
            )));
        }
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        var.set(&t)?;
        Ok(())
    }
}

/// Trainable partial convolution.
pub struct PartialConvLayer {
    pub weight: Var,
    pub bias: Var,
    padding: usize,
    groups: usize,
}

impl PartialConvLayer {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        groups: usize,
    ) -> Result<Self> {
        let fan_in = (in_c / groups) * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = ps.normal(&format!("{name}.weight"), &[out_c, in_c / groups, k, k], std)?;
        let bias = ps.zeros(&format!("{name}.bias"), &[out_c])?;
        Ok(Self {
            weight,
            bias,
            padding: k / 2,
            groups,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        partial_conv2d(
            x,
            mask,
            self.weight.as_tensor(),
            Some(self.bias.as_tensor()),
            self.padding,
            self.groups,
        )
    }
}

/// Channel-wise layer norm parameters.
pub struct ChannelNorm {
    pub gamma: Var,
    pub beta: Var,
}

impl ChannelNorm {
    pub fn new(ps: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.ones(&format!("{name}.gamma"), &[c])?,
            beta: ps.zeros(&format!("{name}.beta"), &[c])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        channel_layer_norm(x, self.gamma.as_tensor(), self.beta.as_tensor(), 1e-6)
    }
}

/// 1x1 convolution (plain; positions are pre-masked by the caller's mask
/// discipline, and a 1x1 window never mixes positions).
pub struct Pointwise {
    pub weight: Var,
    pub bias: Var,
}

impl Pointwise {
    pub fn new(ps: &mut ParamStore, name: &str, in_c: usize, out_c: usize) -> Result<Self> {
        let std = (2.0 / in_c as f64).sqrt();
        Ok(Self {
            weight: ps.normal(&format!("{name}.weight"), &[out_c, in_c, 1, 1], std)?,
            bias: ps.zeros(&format!("{name}.bias"), &[out_c])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out_c = self.bias.as_tensor().dim(0)?;
        let y = x.conv2d(self.weight.as_tensor(), 0, 1, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, out_c, 1, 1))?)?)
    }
}

/// Fully connected layer.
pub struct Dense {
    pub weight: Var,
    pub bias: Var,
}

impl Dense {
    pub fn new(ps: &mut ParamStore, name: &str, in_f: usize, out_f: usize) -> Result<Self> {
        let std = (1.0 / in_f as f64).sqrt();
        Ok(Self {
            weight: ps.normal(&format!("{name}.weight"), &[out_f, in_f], std)?,
            bias: ps.zeros(&format!("{name}.bias"), &[out_f])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?
            .broadcast_add(self.bias.as_tensor())?)
    }
}

/// ConvNeXt-style block with a depthwise 7x7 partial convolution:
/// depthwise conv -> channel LN -> pointwise x4 expansion -> GELU ->
/// pointwise projection -> residual add. The resolution's validity mask is
/// fixed; block outputs are re-masked to keep land cells at zero.
pub struct ConvNeXtBlock {
    dw: PartialConvLayer,
    norm: ChannelNorm,
    pw1: Pointwise,
    pw2: Pointwise,
}

impl ConvNeXtBlock {
    pub fn new(ps: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            dw: PartialConvLayer::new(ps, &format!("{name}.dw"), c, c, 7, c)?,
            norm: ChannelNorm::new(ps, &format!("{name}.norm"), c)?,
            pw1: Pointwise::new(ps, &format!("{name}.pw1"), c, 4 * c)?,
            pw2: Pointwise::new(ps, &format!("{name}.pw2"), 4 * c, c)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (h, _) = self.dw.forward(x, mask)?;
        let h = self.norm.forward(&h)?;
        let h = self.pw1.forward(&h)?;
        let h = h.gelu()?;
        let h = self.pw2.forward(&h)?;
        Ok((x + h)?.broadcast_mul(mask)?)
    }
}

/// Channel-change pointwise conv followed by two ConvNeXt blocks.
pub struct DoubleConvNeXt {
    change: Pointwise,
    b1: ConvNeXtBlock,
    b2: ConvNeXtBlock,
}

impl DoubleConvNeXt {
    pub fn new(ps: &mut ParamStore, name: &str, in_c: usize, out_c: usize) -> Result<Self> {
        Ok(Self {
            change: Pointwise::new(ps, &format!("{name}.change"), in_c, out_c)?,
            b1: ConvNeXtBlock::new(ps, &format!("{name}.b1"), out_c)?,
            b2: ConvNeXtBlock::new(ps, &format!("{name}.b2"), out_c)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let x = self.change.forward(x)?.broadcast_mul(mask)?;
        let x = self.b1.forward(&x, mask)?;
        self.b2.forward(&x, mask)
    }
}

/// Shared encoder shape: stem partial conv + LN, four pooled DoubleConvNeXt
/// stages, and a bottleneck DoubleConvNeXt at 1/16 resolution.
pub struct EncoderTrunk {
    stem: PartialConvLayer,
    stem_norm: ChannelNorm,
    stages: Vec<DoubleConvNeXt>,
    bottleneck: DoubleConvNeXt,
}

impl EncoderTrunk {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_c: usize,
        channels: &[usize; 6],
    ) -> Result<Self> {
        let stem = PartialConvLayer::new(ps, &format!("{name}.stem"), in_c, channels[0], 3, 1)?;
        let stem_norm = ChannelNorm::new(ps, &format!("{name}.stem_norm"), channels[0])?;
        let mut stages = Vec::new();
        for k in 0..4 {
            stages.push(DoubleConvNeXt::new(
                ps,
                &format!("{name}.stage{k}"),
                channels[k],
                channels[k + 1],
            )?);
        }
        let bottleneck =
            DoubleConvNeXt::new(ps, &format!("{name}.bottleneck"), channels[4], channels[5])?;
        Ok(Self {
            stem,
            stem_norm,
            stages,
            bottleneck,
        })
    }

    /// `masks[k]` is the validity mask at resolution 1/2^k.
    pub fn forward(&self, x: &Tensor, masks: &[Tensor]) -> Result<Tensor> {
        let (mut x, _) = self.stem.forward(x, &masks[0])?;
        x = self.stem_norm.forward(&x)?.broadcast_mul(&masks[0])?;
        for (k, stage) in self.stages.iter().enumerate() {
            x = stage.forward(&x, &masks[k])?;
            let (pooled, _) = masked_max_pool2(&x, &masks[k])?;
            x = pooled;
        }
        self.bottleneck.forward(&x, &masks[4])
    }
}

/// Final LN + dense head mapping bottleneck features to (mean, log_var).
pub struct LatentHead {
    norm: ChannelNorm,
    dense: Dense,
}

impl LatentHead {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        c: usize,
        spatial: usize,
        latent_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm: ChannelNorm::new(ps, &format!("{name}.norm"), c)?,
            dense: Dense::new(ps, &format!("{name}.dense"), c * spatial, 2 * latent_dim)?,
        })
    }

    pub fn forward(&self, feat: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let x = self.norm.forward(feat)?.broadcast_mul(mask)?;
        let b = x.dim(0)?;
        let flat = x.reshape((b, x.elem_count() / b))?;
        let out = self.dense.forward(&flat)?;
        let latent2 = out.dim(1)?;
        let mean = out.narrow(1, 0, latent2 / 2)?;
        let log_var = out.narrow(1, latent2 / 2, latent2 / 2)?;
        Ok((mean, log_var))
    }
}

/// Upsampling decoder trunk: four stages of bilinear x2, a 3x3 masked
/// smoothing conv, and a DoubleConvNeXt, ending at `channels[0]` channels
/// at full resolution.
pub struct DecoderTrunk {
    ups: Vec<(PartialConvLayer, DoubleConvNeXt)>,
}

impl DecoderTrunk {
    pub fn new(ps: &mut ParamStore, name: &str, channels: &[usize; 6]) -> Result<Self> {
        // incoming channels per stage: bottleneck, then each stage's output
        let in_c = [channels[5], channels[3], channels[2], channels[1]];
        let out_c = [channels[3], channels[2], channels[1], channels[0]];
        let mut ups = Vec::new();
        for k in 0..4 {
            let smooth =
                PartialConvLayer::new(ps, &format!("{name}.up{k}.smooth"), in_c[k], in_c[k], 3, 1)?;
            let block =
                DoubleConvNeXt::new(ps, &format!("{name}.up{k}.block"), in_c[k], out_c[k])?;
            ups.push((smooth, block));
        }
        Ok(Self { ups })
    }

    /// `masks` as in [`EncoderTrunk::forward`]; input is at 1/16 resolution.
    pub fn forward(&self, feat: &Tensor, masks: &[Tensor]) -> Result<Tensor> {
        let mut x = feat.clone();
        for (k, (smooth, block)) in self.ups.iter().enumerate() {
            let mask = &masks[3 - k];
            x = bilinear_upsample2(&x)?;
            let (s, _) = smooth.forward(&x, mask)?;
            x = block.forward(&s, mask)?;
        }
        Ok(x)
    }
}

/// Shared output block: channel LN, ReLU, 1x1 partial conv to one channel.
pub struct OutputBlock {
    norm: ChannelNorm,
    conv: PartialConvLayer,
}

impl OutputBlock {
    pub fn new(ps: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            norm: ChannelNorm::new(ps, &format!("{name}.norm"), c)?,
            conv: PartialConvLayer::new(ps, &format!("{name}.conv"), c, 1, 1, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let x = self.norm.forward(x)?;
        let x = x.relu()?;
        let (y, _) = self.conv.forward(&x, mask)?;
        Ok(y)
    }
}
