use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

/// Continuous time is multiplied by this before embedding.
pub const TIME_SCALE: f64 = 1000.0;

/// Sinusoidal embedding of `t`: interleaved pairs `(sin(τ ω_j), cos(τ ω_j))`
/// with `τ = 1000 t` and `ω_j = 10000^(−2j/dim)`.
pub fn time_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!("time embedding dim must be even, got {dim}")));
    }
    let tau = t * TIME_SCALE;
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim / 2 {
        let omega = 10000f64.powf(-2.0 * j as f64 / dim as f64);
        out.push((tau * omega).sin());
        out.push((tau * omega).cos());
    }
    Ok(out)
}

/// One embedding row per time in `ts`.
pub fn time_embeddings(ts: &[f64], dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        data.extend(time_embedding(t, dim)?);
    }
    Tensor::new(vec![ts.len(), dim], data)
}
