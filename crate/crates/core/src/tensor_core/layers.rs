use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
    Uniform,
    Zeros,
    Identity,
}

/// Fully connected layer `y = x W + b`, with `W` stored as `[in, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: String,
    pub bias: Option<String>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = |shape: &[usize]| -> Tensor {
            match init {
                Init::Uniform => {
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                    Tensor::new(shape.to_vec(), data).expect("generated length matches")
                }
                Init::Zeros => Tensor::zeros(shape),
                Init::Identity => {
                    assert_eq!(shape[0], shape[1], "identity init needs a square weight");
                    Tensor::identity(shape[0])
                }
            }
        };
        let weight = format!("{name}.weight");
        store.insert(weight.clone(), draw(&[in_dim, out_dim]));
        let bias = bias.then(|| {
            let b = format!("{name}.bias");
            let value = match init {
                Init::Uniform => draw(&[1, out_dim]),
                _ => Tensor::zeros(&[1, out_dim]),
            };
            store.insert(b.clone(), value);
            b
        });
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let w = tape.param(store, &self.weight)?;
        let y = x.matmul(w)?;
        match &self.bias {
            Some(b) => y.add_row(tape.param(store, b)?),
            None => Ok(y),
        }
    }
}
