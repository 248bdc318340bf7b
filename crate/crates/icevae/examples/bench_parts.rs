//! Time the model stages separately (throwaway benchmark).

use candle_core::{DType, Tensor};
use icevae::model::ops::partial_conv2d;
use icevae::model::{CvaeModel, NetConfig};

fn main() -> anyhow::Result<()> {
    let (h, w) = (64, 32);
    let model = CvaeModel::new(NetConfig::desk((h, w)), 0, DType::F32)?;
    let dev = model.device().clone();
    let b = 16;
    let y = Tensor::rand(0f32, 1f32, (b, 1, h, w), &dev)?;
    let xbar = Tensor::rand(0f32, 1f32, (b, 1, h, w), &dev)?;
    let cond = Tensor::rand(0f32, 1f32, (b, 3, h, w), &dev)?;
    let valid = ndarray::Array2::from_elem((h, w), true);
    let masks = model.mask_pyramid(&valid)?;
    let eps = Tensor::rand(0f32, 1f32, (b, model.config.latent_dim), &dev)?;

    let t = std::time::Instant::now();
    let (ytilde, feats) = model.deterministic(&xbar, &cond, &masks)?;
    println!("deterministic {:.2}s", t.elapsed().as_secs_f64());
    let t = std::time::Instant::now();
    let q = model.encode(&y, &xbar, &cond, &masks)?;
    println!("encode {:.2}s", t.elapsed().as_secs_f64());
    let t = std::time::Instant::now();
    let _p = model.prior(&ytilde, &xbar, &cond, &masks)?;
    println!("prior {:.2}s", t.elapsed().as_secs_f64());
    let t = std::time::Instant::now();
    let z = icevae::model::reparameterize_t(&q.0, &q.1, &eps, 1.0)?;
    let _out = model.decode(&z, &feats, &masks)?;
    println!("decode {:.2}s", t.elapsed().as_secs_f64());

    // raw conv costs
    for (c, hh, ww, k, g, label) in [
        (8usize, 64usize, 32usize, 7usize, 8usize, "dw7x7 c8 full"),
        (16, 32, 16, 7, 16, "dw7x7 c16 half"),
        (8, 64, 32, 1, 1, "pw1x1 c8->32 full"),
        (48, 4, 2, 7, 48, "dw7x7 c48 bottom"),
    ] {
        let x = Tensor::rand(0f32, 1f32, (b, c, hh, ww), &dev)?;
        let m = Tensor::ones((1, 1, hh, ww), DType::F32, &dev)?;
        let co = if k == 1 { 32 } else { c };
        let wgt = Tensor::rand(0f32, 1f32, (co, c / g, k, k), &dev)?;
        let t = std::time::Instant::now();
        let n = 10;
        for _ in 0..n {
            let _ = partial_conv2d(&x, &m, &wgt, None, k / 2, g)?;
        }
        println!("{label}: {:.1}ms/call", t.elapsed().as_secs_f64() * 1000.0 / n as f64);
    }
    Ok(())
}
