//! Noise-prediction network ε_θ(x_t, t | c).
//!
//! The time embedding and the (optional) condition are projected to the
//! embedding width and added to x_t; the sum goes through a three-layer
//! perceptron with SiLU on the hidden layers. The last layer starts at zero.

use serde::{Deserialize, Serialize};

use super::embedding::time_embeddings;
use crate::error::{Error, Result};
use crate::tensor_core::layers::Init;
use crate::tensor_core::{Linear, ParamStore, RngStreams, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreNetConfig {
    pub k: usize,
    pub hidden: usize,
    pub time_dim: usize,
}

impl Default for ScoreNetConfig {
    fn default() -> Self {
        Self {
            k: 10,
            hidden: 128,
            time_dim: 64,
        }
    }
}

impl ScoreNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("score network widths must be positive".into()));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "time embedding dim must be even, got {}",
                self.time_dim
            )));
        }
        Ok(())
    }
}

/// Condition rows for a batch. `keep[i] == false` drops the condition of
/// row `i`, which is how unconditional training samples are produced.
#[derive(Clone, Copy, Debug)]
pub struct Condition<'a> {
    pub values: &'a Tensor,
    pub keep: Option<&'a [bool]>,
}

impl<'a> Condition<'a> {
    pub fn all(values: &'a Tensor) -> Self {
        Self { values, keep: None }
    }

    pub fn masked(values: &'a Tensor, keep: &'a [bool]) -> Self {
        Self {
            values,
            keep: Some(keep),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScoreNetwork {
    pub config: ScoreNetConfig,
    pub params: ParamStore,
    time_proj: Linear,
    cond_proj: Linear,
    layers: [Linear; 3],
}

impl ScoreNetwork {
    pub fn new(config: ScoreNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStreams::new(seed).stream("score-net-init");
        let mut params = ParamStore::new();
        let (k, h) = (config.k, config.hidden);
        let time_proj = Linear::new(&mut params, "time_proj", config.time_dim, k, true, Init::Uniform, &mut rng);
        let cond_proj = Linear::new(&mut params, "cond_proj", k, k, true, Init::Uniform, &mut rng);
        let layers = [
            Linear::new(&mut params, "mlp.0", k, h, true, Init::Uniform, &mut rng),
            Linear::new(&mut params, "mlp.1", h, h, true, Init::Uniform, &mut rng),
            Linear::new(&mut params, "mlp.2", h, k, true, Init::Zeros, &mut rng),
        ];
        Ok(Self {
            config,
            params,
            time_proj,
            cond_proj,
            layers,
        })
    }

    /// Rebuilds a network around loaded parameters, checking every shape.
    pub fn from_params(config: ScoreNetConfig, params: ParamStore) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        if params.len() != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "score network expects {} tensors, found {}",
                net.params.len(),
                params.len()
            )));
        }
        for (name, t) in net.params.iter() {
            let got = params
                .get(name)
                .map_err(|_| Error::Checkpoint(format!("missing tensor {name}")))?;
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        net.params = params;
        Ok(net)
    }

    /// Records ε_θ(x_t, t | c) on `tape` using parameters from `store`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x_t: Var<'t>,
        t: &[f64],
        cond: Option<Condition<'_>>,
    ) -> Result<Var<'t>> {
        let x_shape = x_t.value().shape().to_vec();
        if x_shape.len() != 2 || x_shape[1] != self.config.k || x_shape[0] != t.len() {
            return Err(Error::Shape {
                op: "score_net",
                left: x_shape,
                right: vec![t.len(), self.config.k],
            });
        }
        let temb = tape.constant(time_embeddings(t, self.config.time_dim)?);
        let mut h = x_t.add(self.time_proj.forward(tape, store, temb)?)?;
        if let Some(c) = cond {
            if c.values.shape() != x_shape.as_slice() {
                return Err(Error::Shape {
                    op: "score_net condition",
                    left: c.values.shape().to_vec(),
                    right: x_shape,
                });
            }
            let mut proj = self.cond_proj.forward(tape, store, tape.constant(c.values.clone()))?;
            if let Some(keep) = c.keep {
                if keep.len() != t.len() {
                    return Err(Error::Shape {
                        op: "score_net mask",
                        left: vec![keep.len()],
                        right: vec![t.len()],
                    });
                }
                let k = self.config.k;
                let mask: Vec<f64> = keep
                    .iter()
                    .flat_map(|&on| std::iter::repeat_n(if on { 1.0 } else { 0.0 }, k))
                    .collect();
                proj = proj.mul(tape.constant(Tensor::new(vec![keep.len(), k], mask)?))?;
            }
            h = h.add(proj)?;
        }
        let h = self.layers[0].forward(tape, store, h)?.silu()?;
        let h = self.layers[1].forward(tape, store, h)?.silu()?;
        self.layers[2].forward(tape, store, h)
    }

    /// Evaluates the network without recording gradients.
    pub fn predict(&self, x_t: &Tensor, t: &[f64], cond: Option<Condition<'_>>) -> Result<Tensor> {
        let x_shape = x_t.shape().to_vec();
        if x_shape.len() != 2 || x_shape[1] != self.config.k || x_shape[0] != t.len() {
            return Err(Error::Shape {
                op: "score_net",
                left: x_shape,
                right: vec![t.len(), self.config.k],
            });
        }
        let p = &self.params;
        let affine = |x: &Tensor, name: &str| -> Result<Tensor> {
            x.matmul(p.get(&format!("{name}.weight"))?)?
                .add_row(p.get(&format!("{name}.bias"))?)
        };
        // the solver evaluates whole batches at one time, so project once
        let tproj = if !t.is_empty() && t.iter().all(|&v| v.to_bits() == t[0].to_bits()) {
            let row = affine(&time_embeddings(&t[..1], self.config.time_dim)?, "time_proj")?;
            x_t.add_row(&row)?
        } else {
            x_t.add(&affine(&time_embeddings(t, self.config.time_dim)?, "time_proj")?)?
        };
        let mut h = tproj;
        if let Some(c) = cond {
            if c.values.shape() != x_shape.as_slice() {
                return Err(Error::Shape {
                    op: "score_net condition",
                    left: c.values.shape().to_vec(),
                    right: x_shape,
                });
            }
            let mut proj = affine(c.values, "cond_proj")?;
            if let Some(keep) = c.keep {
                if keep.len() != t.len() {
                    return Err(Error::Shape {
                        op: "score_net mask",
                        left: vec![keep.len()],
                        right: vec![t.len()],
                    });
                }
                let k = self.config.k;
                let mask: Vec<f64> = keep
                    .iter()
                    .flat_map(|&on| std::iter::repeat_n(if on { 1.0 } else { 0.0 }, k))
                    .collect();
                proj = proj.mul(&Tensor::new(vec![keep.len(), k], mask)?)?;
            }
            h = h.add(&proj)?;
        }
        let h = affine(&h, "mlp.0")?.map(silu);
        let h = affine(&h, "mlp.1")?.map(silu);
        affine(&h, "mlp.2")
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }
}

fn silu(x: f64) -> f64 {
    let sig = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    x * sig
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScoreNetConfig {
        ScoreNetConfig {
            k: 3,
            hidden: 8,
            time_dim: 4,
        }
    }

    #[test]
    fn fresh_network_predicts_zero() {
        let net = ScoreNetwork::new(ScoreNetConfig::default(), 1).unwrap();
        let x = Tensor::full(&[2, 10], 0.3);
        let out = net.predict(&x, &[0.1, 0.9], None).unwrap();
        assert_eq!(out.shape(), &[2, 10]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fully_masked_condition_equals_no_condition() {
        let mut net = ScoreNetwork::new(small(), 2).unwrap();
        // make the output depend on the input
        *net.params.get_mut("mlp.2.weight").unwrap() = Tensor::full(&[8, 3], 0.2);
        let x = Tensor::from_rows(&[[0.1, -0.4, 0.7], [1.0, 0.0, -1.0]]).unwrap();
        let c = Tensor::from_rows(&[[2.0, 1.0, 0.5], [-1.0, 3.0, 0.0]]).unwrap();
        let t = [0.2, 0.6];
        let none = net.predict(&x, &t, None).unwrap();
        let masked = net.predict(&x, &t, Some(Condition::masked(&c, &[false, false]))).unwrap();
        assert_eq!(none, masked);
        let with = net.predict(&x, &t, Some(Condition::all(&c))).unwrap();
        assert_ne!(none, with);
    }

    #[test]
    fn predict_matches_taped_forward() {
        let mut net = ScoreNetwork::new(small(), 4).unwrap();
        *net.params.get_mut("mlp.2.weight").unwrap() = Tensor::full(&[8, 3], -0.3);
        let x = Tensor::from_rows(&[[0.1, -0.4, 0.7], [1.0, 0.0, -1.0]]).unwrap();
        let c = Tensor::from_rows(&[[2.0, 1.0, 0.5], [-1.0, 3.0, 0.0]]).unwrap();
        for t in [[0.3, 0.3], [0.2, 0.8]] {
            for cond in [None, Some(Condition::all(&c)), Some(Condition::masked(&c, &[true, false]))] {
                let tape = Tape::new();
                let taped = net.forward(&tape, &net.params, tape.constant(x.clone()), &t, cond).unwrap();
                let fast = net.predict(&x, &t, cond).unwrap();
                for (a, b) in taped.value().data().iter().zip(fast.data()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let net = ScoreNetwork::new(small(), 0).unwrap();
        assert!(net.predict(&Tensor::zeros(&[2, 4]), &[0.1, 0.2], None).is_err());
        assert!(net.predict(&Tensor::zeros(&[2, 3]), &[0.1], None).is_err());
        let c = Tensor::zeros(&[1, 3]);
        assert!(net
            .predict(&Tensor::zeros(&[2, 3]), &[0.1, 0.2], Some(Condition::all(&c)))
            .is_err());
    }

    #[test]
    fn round_trips_through_params() {
        let net = ScoreNetwork::new(small(), 3).unwrap();
        let back = ScoreNetwork::from_params(small(), net.params.clone()).unwrap();
        assert_eq!(back.checksum(), net.checksum());
        let mut bad = net.params.clone();
        bad.insert("mlp.0.weight", Tensor::zeros(&[2, 2]));
        assert!(ScoreNetwork::from_params(small(), bad).is_err());
    }
}
