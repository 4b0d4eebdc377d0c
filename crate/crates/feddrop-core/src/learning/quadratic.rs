//! Exact quadratic model `loss(w) = w' H w / 2 + b' w`.
//!
//! Its gradient `H w + b` and Hessian `H` are closed-form, which makes it the
//! reference case for every Taylor-expansion and variance check: the
//! second-order expansion of the loss is exact, so Monte Carlo estimates can
//! be compared against closed forms with no approximation gap.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dropout::{Layout, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    /// Symmetric matrix, row-major `dim x dim`.
    h: Vec<f64>,
    b: Vec<f64>,
    dim: usize,
}

impl QuadraticModel {
    pub fn new(h: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let dim = b.len();
        if h.len() != dim * dim {
            return Err(Error::Shape(format!(
                "H has {} entries, expected {}",
                h.len(),
                dim * dim
            )));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (h[i * dim + j] - h[j * dim + i]).abs() > 1e-12 {
                    return Err(Error::Contract(format!(
                        "H not symmetric at ({i},{j}): {} vs {}",
                        h[i * dim + j],
                        h[j * dim + i]
                    )));
                }
            }
        }
        Ok(QuadraticModel { h, b, dim })
    }

    pub fn diagonal(diag: Vec<f64>) -> Self {
        let dim = diag.len();
        let mut h = vec![0.0; dim * dim];
        for (i, d) in diag.iter().enumerate() {
            h[i * dim + i] = *d;
        }
        QuadraticModel {
            h,
            b: vec![0.0; dim],
            dim,
        }
    }

    /// Random symmetric H = (A + A') / 2 with standard normal entries.
    pub fn random_symmetric(dim: usize, rng: &mut impl Rng) -> Self {
        let mut h = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let z: f64 = StandardNormal.sample(rng);
                h[i * dim + j] = z;
                h[j * dim + i] = z;
            }
        }
        QuadraticModel {
            h,
            b: vec![0.0; dim],
            dim,
        }
    }

    pub fn with_linear(mut self, b: Vec<f64>) -> Result<Self> {
        if b.len() != self.dim {
            return Err(Error::Shape("b length mismatch".into()));
        }
        self.b = b;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hessian(&self) -> &[f64] {
        &self.h
    }

    pub fn linear(&self) -> &[f64] {
        &self.b
    }

    pub fn layout(&self) -> Layout {
        Layout::new([("w".to_string(), self.dim)]).expect("nonempty")
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParamVector {
        let values = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
        ParamVector::new(values, self.layout()).expect("layout matches")
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        let hw = self.mat_vec(w);
        0.5 * dot(w, &hw) + dot(&self.b, w)
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = self.mat_vec(w);
        for (gi, bi) in g.iter_mut().zip(&self.b) {
            *gi += bi;
        }
        g
    }

    pub fn hvp(&self, v: &[f64]) -> Vec<f64> {
        self.mat_vec(v)
    }

    /// Squared Frobenius norm of H.
    pub fn fnorm2(&self) -> f64 {
        self.h.iter().map(|x| x * x).sum()
    }

    /// Squared norms of the columns of H.
    pub fn column_norms2(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| {
                (0..self.dim)
                    .map(|i| self.h[i * self.dim + j].powi(2))
                    .sum()
            })
            .collect()
    }

    fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim, "vector length mismatch");
        (0..self.dim)
            .map(|i| dot(&self.h[i * self.dim..(i + 1) * self.dim], v))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_quadratic_loss() {
        let m = QuadraticModel::diagonal(vec![1.0, 1.0]);
        assert_eq!(m.loss(&[1.0, 1.0]), 1.0);
        assert_eq!(m.loss(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn gradient_is_hw_plus_b() {
        let m = QuadraticModel::diagonal(vec![2.0, 4.0]);
        assert_eq!(m.gradient(&[1.0, 1.0]), vec![2.0, 4.0]);
    }

    #[test]
    fn gradient_vanishes_at_minimum() {
        // w* = -H^{-1} b for diagonal H
        let m = QuadraticModel::diagonal(vec![2.0, 4.0])
            .with_linear(vec![1.0, -2.0])
            .unwrap();
        let w_star = [-0.5, 0.5];
        let g = m.gradient(&w_star);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn hvp_selects_columns() {
        let m = QuadraticModel::diagonal(vec![2.0, 4.0]);
        assert_eq!(m.hvp(&[1.0, 0.0]), vec![2.0, 0.0]);
    }

    #[test]
    fn asymmetric_h_rejected() {
        let h = vec![1.0, 2.0, 3.0, 4.0];
        assert!(QuadraticModel::new(h, vec![0.0, 0.0]).is_err());
    }
}
