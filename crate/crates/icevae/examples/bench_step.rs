//! Time one forward/backward training step at desk scale (throwaway benchmark).

use candle_core::{DType, Tensor};
use icevae::model::{CvaeModel, NetConfig};
use icevae::train::batch_loss;

fn main() -> anyhow::Result<()> {
    let (h, w) = (64, 32);
    let cfg = if std::env::args().nth(2).as_deref() == Some("toy") {
        NetConfig::toy((h, w))
    } else {
        NetConfig::desk((h, w))
    };
    let model = CvaeModel::new(cfg, 0, DType::F32)?;
    let dev = model.device().clone();
    let b: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(16);
    let y = Tensor::rand(0f32, 1f32, (b, 1, h, w), &dev)?;
    let xbar = Tensor::rand(0f32, 1f32, (b, 1, h, w), &dev)?;
    let cond = Tensor::rand(0f32, 1f32, (b, 3, h, w), &dev)?;
    let valid = ndarray::Array2::from_elem((h, w), true);
    let masks = model.mask_pyramid(&valid)?;
    let eps = Tensor::rand(0f32, 1f32, (b, model.config.latent_dim), &dev)?;

    for i in 0..3 {
        let t = std::time::Instant::now();
        let (loss, parts) = batch_loss(&model, &y, &xbar, &cond, &masks, &eps, 1.0)?;
        let fwd = t.elapsed().as_secs_f64();
        let _grads = loss.backward()?;
        println!(
            "step {i}: forward {fwd:.2}s, total {:.2}s, loss {:.4}",
            t.elapsed().as_secs_f64(),
            parts.total
        );
    }
    Ok(())
}
