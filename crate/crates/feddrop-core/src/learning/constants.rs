//! Empirical estimation of the constants entering the convergence bounds:
//! smoothness L, Hessian Frobenius bound A, weight-norm bound G, and the
//! per-sample gradient variance sigma^2.
//!
//! These are probe-based estimates, not proofs; every report that evaluates a
//! bound carries the constants it used so the result is self-describing. The
//! raw probe maxima underestimate the true suprema, so the returned values
//! are inflated by a safety factor (default 1.5).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Model};
use crate::error::{Error, Result};

/// Constants used by the variance and convergence bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConstants {
    /// Smoothness bound L.
    pub l_smooth: f64,
    /// Bound A on the Hessian Frobenius norm.
    pub hessian_fnorm: f64,
    /// Bound G on the weight norm.
    pub weight_norm: f64,
    /// Per-sample gradient variance sigma^2.
    pub sigma2: f64,
    /// Maximum admissible dropout rate.
    pub theta: f64,
    /// Learning rate; `1 / (3 sqrt(T) L)` when auto-derived.
    pub eta: f64,
    /// Planned round count T.
    pub rounds: usize,
    /// Loss lower bound; 0 for nonnegative losses.
    pub f_star: f64,
}

impl AnalysisConstants {
    /// Learning rate consistent with the per-round bound: `1/(3 sqrt(T) L)`.
    pub fn auto_eta(l_smooth: f64, rounds: usize) -> f64 {
        1.0 / (3.0 * (rounds as f64).sqrt() * l_smooth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsOptions {
    /// Random probes per sampled parameter point (at least 16).
    pub probes: usize,
    /// Multiplier applied to every estimate before reporting.
    pub safety: f64,
    /// Maximum dropout rate to record in the constants.
    pub theta: f64,
    /// Planned round count, used for the auto learning rate.
    pub rounds: usize,
    /// Number of sampled parameter points.
    pub weight_samples: usize,
}

impl Default for ConstantsOptions {
    fn default() -> Self {
        ConstantsOptions {
            probes: 64,
            safety: 1.5,
            theta: 0.5,
            rounds: 100,
            weight_samples: 8,
        }
    }
}

/// Probe the model around sampled parameter points and report inflated
/// estimates of (L, A, G, sigma^2).
///
/// - `A^2`: max over sampled points of the Rademacher estimate of
///   `||H||_F^2` (`E_z ||H z||^2` with z having independent +/-1 entries).
/// - `G`: largest sampled `||w||`.
/// - `L`: largest observed Rayleigh quotient `||H v|| / ||v||` over Gaussian
///   probes.
/// - `sigma^2`: largest `|D_k| * ||g_k - g||^2` over devices and sampled
///   points, where `g_k` is the shard gradient and `g` the full gradient.
pub fn estimate_constants(
    model: &Model,
    dataset: &Dataset,
    opts: &ConstantsOptions,
    rng: &mut impl Rng,
) -> Result<AnalysisConstants> {
    if opts.probes < 16 {
        return Err(Error::domain("probes", "need at least 16 probes"));
    }
    if dataset.n_samples() == 0 {
        return Err(Error::domain("dataset", "empty dataset"));
    }
    if opts.weight_samples == 0 {
        return Err(Error::domain("weight_samples", "need at least one point"));
    }

    let full = dataset.full_batch();
    let n = model.param_count();
    let mut max_fnorm2: f64 = 0.0;
    let mut max_rayleigh: f64 = 0.0;
    let mut max_wnorm: f64 = 0.0;
    let mut max_sigma2: f64 = 0.0;

    for _ in 0..opts.weight_samples {
        let mut w = model.init_params(rng);
        let radius: f64 = 0.5 + 1.5 * rng.random::<f64>();
        for v in w.values.iter_mut() {
            *v *= radius;
        }
        max_wnorm = max_wnorm.max(w.norm2().sqrt());

        // Rademacher probes: E||H z||^2 is unbiased for ||H||_F^2.
        let mut fnorm2_acc = 0.0;
        for _ in 0..opts.probes {
            let z: Vec<f64> = (0..n)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let hz = model.hessian_vector_product(&w, &full, &z)?;
            fnorm2_acc += hz.iter().map(|x| x * x).sum::<f64>();
        }
        max_fnorm2 = max_fnorm2.max(fnorm2_acc / opts.probes as f64);

        // Gaussian probes for the spectral norm.
        for _ in 0..opts.probes {
            let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if vnorm == 0.0 {
                continue;
            }
            let hv = model.hessian_vector_product(&w, &full, &v)?;
            let hvnorm = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
            max_rayleigh = max_rayleigh.max(hvnorm / vnorm);
        }

        // Shard-vs-global gradient spread.
        let g = model.gradient(&w, &full)?;
        for device in 0..dataset.n_devices() {
            if dataset.shard_size(device) == 0 {
                continue;
            }
            let shard = dataset.shard_batch(device);
            let gk = model.gradient(&w, &shard)?;
            let spread: f64 = gk
                .values
                .iter()
                .zip(&g.values)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            max_sigma2 = max_sigma2.max(dataset.shard_size(device) as f64 * spread);
        }
    }

    let l_smooth = opts.safety * max_rayleigh;
    Ok(AnalysisConstants {
        l_smooth,
        hessian_fnorm: opts.safety * max_fnorm2.sqrt(),
        weight_norm: opts.safety * max_wnorm,
        sigma2: opts.safety * max_sigma2,
        theta: opts.theta,
        eta: AnalysisConstants::auto_eta(l_smooth, opts.rounds),
        rounds: opts.rounds,
        f_star: 0.0,
    })
}
