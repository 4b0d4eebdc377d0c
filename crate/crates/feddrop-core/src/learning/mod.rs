//! Differentiable models, datasets, and theory-constant estimation.

pub mod autodiff;
pub mod constants;
pub mod data;
pub mod mlp;
pub mod quadratic;

pub use constants::{estimate_constants, AnalysisConstants, ConstantsOptions};
pub use data::{
    load_checkpoint, make_synthetic_dataset, read_dataset_csv, save_checkpoint, write_dataset_csv,
    Dataset, Sample,
};
pub use mlp::{Activation, MlpSpec};
pub use quadratic::QuadraticModel;

use rand::Rng;

use crate::dropout::{Layout, ParamVector};
use crate::error::{Error, Result};

/// A model the training loop and the analysis can differentiate exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mlp(MlpSpec),
    Quadratic(QuadraticModel),
}

impl Model {
    pub fn param_count(&self) -> usize {
        match self {
            Model::Mlp(m) => m.param_count(),
            Model::Quadratic(q) => q.dim(),
        }
    }

    pub fn layout(&self) -> Layout {
        match self {
            Model::Mlp(m) => m.layout(),
            Model::Quadratic(q) => q.layout(),
        }
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParamVector {
        match self {
            Model::Mlp(m) => m.init_params(rng),
            Model::Quadratic(q) => q.init_params(rng),
        }
    }

    /// Multiply-add count of one forward pass on one sample; zero-cost for
    /// the quadratic stand-in.
    pub fn forward_flops(&self) -> f64 {
        match self {
            Model::Mlp(m) => m.forward_flops(),
            Model::Quadratic(q) => (2 * q.dim() * q.dim()) as f64,
        }
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "params has {} values, model expects {}",
                params.len(),
                self.param_count()
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &[(&[f64], usize)]) -> Result<()> {
        if let Model::Mlp(m) = self {
            if batch.is_empty() {
                return Err(Error::Contract("empty batch".into()));
            }
            for (x, y) in batch {
                if x.len() != m.input_dim() {
                    return Err(Error::Shape(format!(
                        "sample has {} features, model expects {}",
                        x.len(),
                        m.input_dim()
                    )));
                }
                if *y >= m.n_classes() {
                    return Err(Error::Shape(format!(
                        "label {y} out of range for {} classes",
                        m.n_classes()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Mean per-sample loss over the batch. The quadratic model ignores the
    /// batch entirely.
    pub fn forward_loss(&self, params: &ParamVector, batch: &[(&[f64], usize)]) -> Result<f64> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        Ok(match self {
            Model::Mlp(m) => m.loss(&params.values, batch),
            Model::Quadratic(q) => q.loss(&params.values),
        })
    }

    /// Exact analytic gradient of [`Model::forward_loss`].
    pub fn gradient(&self, params: &ParamVector, batch: &[(&[f64], usize)]) -> Result<ParamVector> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let values = match self {
            Model::Mlp(m) => m.loss_and_gradient(&params.values, batch).1,
            Model::Quadratic(q) => q.gradient(&params.values),
        };
        ParamVector::new(values, params.layout.clone())
    }

    /// Exact Hessian-vector product of the batch loss.
    pub fn hessian_vector_product(
        &self,
        params: &ParamVector,
        batch: &[(&[f64], usize)],
        v: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        if v.len() != params.len() {
            return Err(Error::Shape(format!(
                "direction has {} values, params {}",
                v.len(),
                params.len()
            )));
        }
        Ok(match self {
            Model::Mlp(m) => m.hvp(&params.values, batch, v),
            Model::Quadratic(q) => q.hvp(v),
        })
    }
}
