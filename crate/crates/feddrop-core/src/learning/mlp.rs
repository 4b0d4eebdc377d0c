//! Dense feedforward classifier with tanh hidden layers and softmax
//! cross-entropy, small enough that Hessian-based checks stay cheap.
//!
//! The per-sample forward and backward passes are generic over [`Real`], so
//! the same backprop code yields `f64` gradients and, run over dual numbers,
//! exact Hessian-vector products.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::autodiff::{Dual, Real};
use crate::dropout::{Layout, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

/// Layer dimensions and activation of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Layer widths, input first: `[in, hidden.., classes]`.
    pub dims: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("bad mlp dims {dims:?}")));
        }
        Ok(MlpSpec {
            dims,
            activation: Activation::Tanh,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn n_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers())
            .map(|l| self.dims[l] * self.dims[l + 1] + self.dims[l + 1])
            .sum()
    }

    /// One span per weight matrix and bias vector, in forward order.
    pub fn layout(&self) -> Layout {
        let mut layers = Vec::new();
        for l in 0..self.n_layers() {
            layers.push((format!("layer{l}.weight"), self.dims[l] * self.dims[l + 1]));
            layers.push((format!("layer{l}.bias"), self.dims[l + 1]));
        }
        Layout::new(layers).expect("mlp layout is nonempty by construction")
    }

    /// Multiply-add count of one forward pass on one sample.
    pub fn forward_flops(&self) -> f64 {
        (0..self.n_layers())
            .map(|l| (2 * self.dims[l] * self.dims[l + 1] + self.dims[l + 1]) as f64)
            .sum()
    }

    /// Weights `N(0, 1/fan_in)`, biases zero.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_count());
        for l in 0..self.n_layers() {
            let std = 1.0 / (self.dims[l] as f64).sqrt();
            for _ in 0..self.dims[l] * self.dims[l + 1] {
                let z: f64 = StandardNormal.sample(rng);
                values.push(z * std);
            }
            values.extend(std::iter::repeat_n(0.0, self.dims[l + 1]));
        }
        ParamVector::new(values, self.layout()).expect("layout matches by construction")
    }

    /// Per-sample loss and (optionally) its gradient with respect to the
    /// parameters, generic over the scalar type.
    fn per_sample<S: Real>(
        &self,
        params: &[S],
        features: &[f64],
        label: usize,
        want_grad: bool,
    ) -> (S, Option<Vec<S>>) {
        let n_layers = self.n_layers();
        // Forward, keeping each layer's input activation for the backward pass.
        let mut activations: Vec<Vec<S>> = Vec::with_capacity(n_layers);
        let mut a: Vec<S> = features.iter().map(|&v| S::from_f64(v)).collect();
        let mut offset = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &params[offset..offset + n_in * n_out];
            let b = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut z = Vec::with_capacity(n_out);
            for j in 0..n_out {
                let mut acc = b[j];
                let row = &w[j * n_in..(j + 1) * n_in];
                for i in 0..n_in {
                    acc = acc + row[i] * a[i];
                }
                z.push(acc);
            }
            activations.push(a);
            a = if l + 1 < n_layers {
                z.iter().map(|&v| v.tanh()).collect()
            } else {
                z
            };
        }
        let logits = a;

        // Stable log-sum-exp via the primal max.
        let max = logits
            .iter()
            .map(|v| v.value())
            .fold(f64::NEG_INFINITY, f64::max);
        let max = S::from_f64(max);
        let mut sum = S::from_f64(0.0);
        let shifted: Vec<S> = logits.iter().map(|&v| v - max).collect();
        for &s in &shifted {
            sum = sum + s.exp();
        }
        let lse = max + sum.ln();
        let loss = lse - logits[label];

        if !want_grad {
            return (loss, None);
        }

        // Backward. delta starts as softmax - onehot(label).
        let mut grad = vec![S::from_f64(0.0); params.len()];
        let mut delta: Vec<S> = shifted.iter().map(|&s| s.exp() / sum).collect();
        delta[label] = delta[label] - S::from_f64(1.0);

        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.dims[l] * self.dims[l + 1] + self.dims[l + 1];
        }

        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w_off = offsets[l];
            let input = &activations[l];
            for j in 0..n_out {
                let d = delta[j];
                let row = &mut grad[w_off + j * n_in..w_off + (j + 1) * n_in];
                for i in 0..n_in {
                    row[i] = row[i] + d * input[i];
                }
                grad[w_off + n_in * n_out + j] = grad[w_off + n_in * n_out + j] + d;
            }
            if l > 0 {
                let w = &params[w_off..w_off + n_in * n_out];
                let mut prev = Vec::with_capacity(n_in);
                for i in 0..n_in {
                    let mut acc = S::from_f64(0.0);
                    for j in 0..n_out {
                        acc = acc + w[j * n_in + i] * delta[j];
                    }
                    // input[i] is tanh(z), so tanh'(z) = 1 - input[i]^2
                    prev.push(acc * (S::from_f64(1.0) - input[i] * input[i]));
                }
                delta = prev;
            }
        }
        (loss, Some(grad))
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, params: &[f64], batch: &[(&[f64], usize)]) -> f64 {
        let mut acc = 0.0;
        for &(x, y) in batch {
            acc += self.per_sample::<f64>(params, x, y, false).0;
        }
        acc / batch.len() as f64
    }

    /// Mean loss and its exact gradient over the batch.
    pub fn loss_and_gradient(&self, params: &[f64], batch: &[(&[f64], usize)]) -> (f64, Vec<f64>) {
        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        for &(x, y) in batch {
            let (l, g) = self.per_sample::<f64>(params, x, y, true);
            loss += l;
            for (acc, gi) in grad.iter_mut().zip(g.unwrap()) {
                *acc += gi;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for g in grad.iter_mut() {
            *g *= inv;
        }
        (loss * inv, grad)
    }

    /// Exact Hessian-vector product of the batch loss, via forward-over-reverse.
    pub fn hvp(&self, params: &[f64], batch: &[(&[f64], usize)], v: &[f64]) -> Vec<f64> {
        let dual_params: Vec<Dual> = params
            .iter()
            .zip(v)
            .map(|(&p, &d)| Dual::seeded(p, d))
            .collect();
        let mut out = vec![0.0; params.len()];
        for &(x, y) in batch {
            let (_, g) = self.per_sample::<Dual>(&dual_params, x, y, true);
            for (acc, gi) in out.iter_mut().zip(g.unwrap()) {
                *acc += gi.dot;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
        out
    }

    /// Predicted class: argmax of the logits.
    pub fn predict(&self, params: &[f64], features: &[f64]) -> usize {
        let n_layers = self.n_layers();
        let mut a: Vec<f64> = features.to_vec();
        let mut offset = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &params[offset..offset + n_in * n_out];
            let b = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut z = vec![0.0; n_out];
            for j in 0..n_out {
                z[j] = b[j]
                    + w[j * n_in..(j + 1) * n_in]
                        .iter()
                        .zip(&a)
                        .map(|(wi, ai)| wi * ai)
                        .sum::<f64>();
            }
            a = if l + 1 < n_layers {
                z.iter().map(|v| v.tanh()).collect()
            } else {
                z
            };
        }
        a.iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }
}
