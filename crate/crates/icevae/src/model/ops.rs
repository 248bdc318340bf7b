//! Low-level differentiable ops the network is assembled from: partial
//! convolution with mask renormalization, channel-wise layer norm, masked
//! max pooling, and exact bilinear x2 upsampling built from shifts.

use candle_core::{DType, Tensor};

use crate::error::Result;

/// Partial convolution: convolve over valid cells only, rescaling each
/// output position by (window size / number of valid cells in its window).
/// Positions whose window contains no valid cell output zero and become
/// invalid in the returned mask.
///
/// `input` is (B, C, H, W); `mask` is (1 or B, 1, H, W) with 1.0 on valid
/// cells; `weight` is (O, C/groups, k, k). The mask is shared across
/// channels, so the renormalization counts spatial positions only.
pub fn partial_conv2d(
    input: &Tensor,
    mask: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    padding: usize,
    groups: usize,
) -> Result<(Tensor, Tensor)> {
    let (_, _, k, _) = weight.dims4()?;
    let masked = input.broadcast_mul(mask)?;
    let conv = masked.conv2d(weight, padding, 1, 1, groups)?;
    // number of valid cells per window
    let ones = Tensor::ones((1, 1, k, k), mask.dtype(), mask.device())?;
    let counts = mask.conv2d(&ones, padding, 1, 1, 1)?;
    let valid = counts
        .ge(0.5)?
        .to_dtype(mask.dtype())?;
    // avoid division by zero on fully-invalid windows; they are zeroed below
    let safe = (&counts + (1.0 - &valid)?)?;
    // true elementwise division (a scalar/tensor op would go through a
    // reciprocal and round differently from a plain `window / count`)
    let window = (k * k) as f64;
    let ratio = (&valid * window)?.div(&safe)?;
    let mut out = conv.broadcast_mul(&ratio)?;
    if let Some(b) = bias {
        let b = b.reshape((1, b.dim(0)?, 1, 1))?;
        out = out.broadcast_add(&b)?;
    }
    let out = out.broadcast_mul(&valid)?;
    Ok((out, valid))
}

/// Layer normalization over the channel axis at each spatial position,
/// the ConvNeXt convention. `x` is (B, C, H, W); `gamma`/`beta` are (C).
pub fn channel_layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let c = x.dim(1)?;
    let mean = x.mean_keepdim(1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(1)?;
    let denom = (var + eps)?.sqrt()?;
    let normed = centered.broadcast_div(&denom)?;
    let g = gamma.reshape((1, c, 1, 1))?;
    let b = beta.reshape((1, c, 1, 1))?;
    Ok(normed.broadcast_mul(&g)?.broadcast_add(&b)?)
}

/// 2x2 max over each window, built from reshape + max reductions. (The
/// built-in pooling op has no exact gradient, so it is avoided in the
/// training graph.)
fn max_pool2_exact(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let r = x.reshape((b, c, h / 2, 2, w / 2, 2))?;
    Ok(r.max(5)?.max(3)?)
}

/// 2x2 max pooling that ignores invalid cells: invalid positions are pushed
/// far negative before the max, and pooled positions with no valid cell in
/// their window are zeroed. Returns (pooled, pooled_mask).
pub fn masked_max_pool2(x: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
    let neg = ((mask - 1.0)? * 1e4)?;
    let filled = x.broadcast_mul(mask)?.broadcast_add(&neg)?;
    let pooled = max_pool2_exact(&filled)?;
    let pooled_mask = max_pool2_exact(mask)?;
    let pooled = pooled.broadcast_mul(&pooled_mask)?;
    Ok((pooled, pooled_mask))
}

/// Interleave `even` and `odd` along spatial dim `d` (2 or 3).
fn interleave(even: &Tensor, odd: &Tensor, d: usize) -> Result<Tensor> {
    let stacked = Tensor::stack(&[even, odd], d + 1)?;
    let dims = even.dims4()?;
    let out = match d {
        2 => stacked.reshape((dims.0, dims.1, 2 * dims.2, dims.3))?,
        3 => stacked.reshape((dims.0, dims.1, dims.2, 2 * dims.3))?,
        _ => unreachable!("spatial dims are 2 and 3"),
    };
    Ok(out)
}

/// Double one spatial dim with bilinear interpolation (align_corners=false):
/// out[2i] = 0.25 in[i-1] + 0.75 in[i], out[2i+1] = 0.75 in[i] + 0.25 in[i+1],
/// with edge clamping.
fn bilinear_double_dim(x: &Tensor, d: usize) -> Result<Tensor> {
    let n = x.dim(d)?;
    let prev = if n == 1 {
        x.clone()
    } else {
        Tensor::cat(&[&x.narrow(d, 0, 1)?, &x.narrow(d, 0, n - 1)?], d)?
    };
    let next = if n == 1 {
        x.clone()
    } else {
        Tensor::cat(&[&x.narrow(d, 1, n - 1)?, &x.narrow(d, n - 1, 1)?], d)?
    };
    let even = ((prev * 0.25)? + (x * 0.75)?)?;
    let odd = ((x * 0.75)? + (next * 0.25)?)?;
    interleave(&even, &odd, d)
}

/// Bilinear x2 upsampling of a (B, C, H, W) tensor to (B, C, 2H, 2W).
pub fn bilinear_upsample2(x: &Tensor) -> Result<Tensor> {
    let rows = bilinear_double_dim(x, 2)?;
    Ok(bilinear_double_dim(&rows, 3)?)
}

/// Nearest-neighbor x2 upsampling for masks.
pub fn mask_upsample2(mask: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = mask.dims4()?;
    Ok(mask.upsample_nearest2d(2 * h, 2 * w)?.reshape((b, c, 2 * h, 2 * w))?)
}

/// Build a tensor mask (1, 1, H, W) from a boolean validity array.
pub fn mask_tensor(
    valid: &ndarray::Array2<bool>,
    dtype: DType,
    device: &candle_core::Device,
) -> Result<Tensor> {
    let (h, w) = valid.dim();
    let data: Vec<f32> = valid.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::from_vec(data, (1, 1, h, w), device)?.to_dtype(dtype)?)
}
