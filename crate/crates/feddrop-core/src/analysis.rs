//! Numerical verification of the variance and convergence theory.
//!
//! The chain being checked: a subnet's gradient, expanded to second order
//! around the full model, is an unbiased estimate of the shard gradient with
//! variance bounded by `||H||_F^2 ||w||^2 * rate/(1-rate)`; plugging that
//! into the smoothness descent inequality bounds the per-round loss change;
//! averaging over rounds bounds the running mean of the squared gradient
//! norm. Everything here is Monte Carlo or closed-form evaluation against
//! those statements. The quadratic model makes the expansion exact, so its
//! checks carry no approximation slack.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dropout::{apply_mask, make_mask, MaskMode, ParamVector};
use crate::error::{Error, Result};
use crate::learning::{AnalysisConstants, Model};
use crate::protocol::TrainingHistory;

/// Second-order estimate of the subnet gradient at the masked point:
/// `grad(w) + H(w) (masked_w - w)`.
pub fn taylor_gradient(
    model: &Model,
    params: &ParamVector,
    subnet_params: &ParamVector,
    shard: &[(&[f64], usize)],
) -> Result<Vec<f64>> {
    if params.len() != subnet_params.len() {
        return Err(Error::Shape(format!(
            "params {} vs subnet {}",
            params.len(),
            subnet_params.len()
        )));
    }
    let grad = model.gradient(params, shard)?;
    let offset: Vec<f64> = subnet_params
        .values
        .iter()
        .zip(&params.values)
        .map(|(a, b)| a - b)
        .collect();
    let correction = model.hessian_vector_product(params, shard, &offset)?;
    Ok(grad
        .values
        .iter()
        .zip(&correction)
        .map(|(g, c)| g + c)
        .collect())
}

/// Monte Carlo check of the gradient-estimate mean and variance against the
/// two bound tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub rate: f64,
    pub n_masks: usize,
    /// `|| mean_estimate - shard_gradient ||`.
    pub mean_gap: f64,
    /// Monte Carlo mean of `|| estimate - shard_gradient ||^2`.
    pub empirical_variance: f64,
    /// Standard error of the empirical variance.
    pub std_err: f64,
    /// `||H||_F^2 ||w||^2 rate/(1-rate)` at the probed point.
    pub bound_fnorm: f64,
    /// `(A G)^2 rate/(1-rate)` from the supplied constants.
    pub bound_constants: f64,
    pub within_fnorm_bound: bool,
    pub within_constants_bound: bool,
}

/// Estimate the gradient variance induced by Bernoulli masks at `rate`,
/// using the second-order gradient estimate, and compare against the bounds.
///
/// The Frobenius tier is computed exactly at the probed point via one
/// Hessian-vector product per coordinate. A zero rate is degenerate: the
/// estimate equals the shard gradient and every bound is zero.
pub fn mask_variance_check(
    model: &Model,
    params: &ParamVector,
    shard: &[(&[f64], usize)],
    rate: f64,
    n_masks: usize,
    constants: &AnalysisConstants,
    rng: &mut impl Rng,
) -> Result<VarianceCheck> {
    if n_masks < 1000 {
        return Err(Error::domain("n_masks", "need at least 1000 mask draws"));
    }
    let n = params.len();
    let shard_grad = model.gradient(params, shard)?;

    let mut mean = vec![0.0; n];
    let mut sq_sum = 0.0;
    let mut sq_sq_sum = 0.0;
    for _ in 0..n_masks {
        let mask = make_mask(rate, &params.layout, MaskMode::Bernoulli, rng)?;
        let subnet = apply_mask(params, &mask)?;
        let est = taylor_gradient(model, params, &subnet, shard)?;
        let mut dist2 = 0.0;
        for ((m, e), g) in mean.iter_mut().zip(&est).zip(&shard_grad.values) {
            *m += e;
            dist2 += (e - g) * (e - g);
        }
        sq_sum += dist2;
        sq_sq_sum += dist2 * dist2;
    }
    let inv = 1.0 / n_masks as f64;
    let empirical_variance = sq_sum * inv;
    let var_of_dist2 = (sq_sq_sum * inv - empirical_variance * empirical_variance).max(0.0);
    let std_err = (var_of_dist2 * inv).sqrt();
    let mean_gap = mean
        .iter()
        .zip(&shard_grad.values)
        .map(|(m, g)| (m * inv - g).powi(2))
        .sum::<f64>()
        .sqrt();

    // Exact ||H||_F^2 at the probed point, one HVP per basis vector.
    let mut fnorm2 = 0.0;
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = model.hessian_vector_product(params, shard, &e)?;
        fnorm2 += col.iter().map(|x| x * x).sum::<f64>();
    }
    let scaling = rate / (1.0 - rate);
    let bound_fnorm = fnorm2 * params.norm2() * scaling;
    let bound_constants = (constants.hessian_fnorm * constants.weight_norm).powi(2) * scaling;
    Ok(VarianceCheck {
        rate,
        n_masks,
        mean_gap,
        empirical_variance,
        std_err,
        bound_fnorm,
        bound_constants,
        within_fnorm_bound: empirical_variance <= bound_fnorm + 3.0 * std_err,
        within_constants_bound: empirical_variance <= bound_constants + 3.0 * std_err,
    })
}

/// Closed-form mask-induced variance of the second-order estimate:
/// `sum_j w_j^2 ||H_{:,j}||^2 * rate/(1-rate)`. Exact for any model whose
/// Hessian is constant over the mask perturbations (the quadratic), because
/// mask coordinates are independent with variance `rate/(1-rate)`.
pub fn mask_variance_closed_form(
    model: &Model,
    params: &ParamVector,
    shard: &[(&[f64], usize)],
    rate: f64,
) -> Result<f64> {
    let n = params.len();
    let mut acc = 0.0;
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = model.hessian_vector_product(params, shard, &e)?;
        let col_norm2: f64 = col.iter().map(|x| x * x).sum();
        acc += params.values[j] * params.values[j] * col_norm2;
    }
    Ok(acc * rate / (1.0 - rate))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Least-squares slope of variance against `rate/(1-rate)`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

/// Fit the empirical variance against the predicted scaling factor
/// `rate/(1-rate)` over several rates. On the quadratic model the relation
/// is exactly linear through the origin, so the fit quality is the check.
pub fn variance_scaling_fit(
    model: &Model,
    params: &ParamVector,
    shard: &[(&[f64], usize)],
    rates: &[f64],
    n_masks: usize,
    constants: &AnalysisConstants,
    rng: &mut impl Rng,
) -> Result<ScalingFit> {
    let distinct: std::collections::BTreeSet<u64> = rates.iter().map(|r| r.to_bits()).collect();
    if distinct.len() < 3 {
        return Err(Error::domain("rates", "need at least 3 distinct rates"));
    }
    if rates.iter().all(|&r| r == 0.0) {
        return Err(Error::domain("rates", "all-zero rates are degenerate"));
    }
    let mut points = Vec::with_capacity(rates.len());
    for &rate in rates {
        let check = mask_variance_check(model, params, shard, rate, n_masks, constants, rng)?;
        points.push((rate / (1.0 - rate), check.empirical_variance));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = points.iter().map(|(_, y)| (y - mean_y).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(ScalingFit {
        slope,
        intercept,
        r_squared,
        points,
    })
}

/// Upper bound on the expected one-round loss change at learning rate
/// `1/(3 sqrt(T) L)`:
///
/// `(-1/(3 sqrt(T) L) + 2/(9 T L)) ||g||^2 + (2K/(9 T L)) sigma^2/|D|
///  + (A^2 G^2 / (9 T L)) sum_k (|D_k|/|D|) rate_k/(1-rate_k)`.
pub fn per_round_bound(
    constants: &AnalysisConstants,
    grad_norm2: f64,
    rates: &[f64],
    shard_sizes: &[usize],
) -> Result<f64> {
    if rates.len() != shard_sizes.len() {
        return Err(Error::Shape(format!(
            "{} rates vs {} shards",
            rates.len(),
            shard_sizes.len()
        )));
    }
    if constants.rounds == 0 {
        return Err(Error::domain("rounds", "need T >= 1"));
    }
    let t = constants.rounds as f64;
    let l = constants.l_smooth;
    let k = rates.len() as f64;
    let data_total: f64 = shard_sizes.iter().map(|&s| s as f64).sum();
    let descent = (-1.0 / (3.0 * t.sqrt() * l) + 2.0 / (9.0 * t * l)) * grad_norm2;
    let sampling = 2.0 * k / (9.0 * t * l) * constants.sigma2 / data_total;
    let ag2 = (constants.hessian_fnorm * constants.weight_norm).powi(2);
    let dropout: f64 = rates
        .iter()
        .zip(shard_sizes)
        .map(|(&r, &s)| s as f64 / data_total * r / (1.0 - r))
        .sum::<f64>()
        * ag2
        / (9.0 * t * l);
    Ok(descent + sampling + dropout)
}

/// Running average of the squared gradient norm against its finite-horizon
/// bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rounds: usize,
    /// `(1/T) sum_t ||g(w_t)||^2` over the recorded rounds.
    pub avg_grad_norm2: f64,
    /// `(1/sqrt(T)) { 9L [F(w0) - F*] + 2K sigma^2/|D|
    ///   + (A^2 G^2 / T) sum_t sum_k (|D_k|/|D|) rate/(1-rate) }`.
    pub bound: f64,
    pub ratio: f64,
}

/// Evaluate the finite-horizon convergence bound over a training history.
pub fn convergence_report(
    history: &TrainingHistory,
    constants: &AnalysisConstants,
    shard_sizes: &[usize],
) -> Result<ConvergenceReport> {
    if history.rounds.is_empty() {
        return Err(Error::Contract("history has no rounds".into()));
    }
    let t = history.rounds.len() as f64;
    let data_total: f64 = shard_sizes.iter().map(|&s| s as f64).sum();
    let k = shard_sizes.len() as f64;
    let avg_grad_norm2 = history.rounds.iter().map(|r| r.grad_norm2).sum::<f64>() / t;

    let mut dropout_sum = 0.0;
    for round in &history.rounds {
        if round.devices.len() != shard_sizes.len() {
            return Err(Error::Contract(
                "history round does not cover every device".into(),
            ));
        }
        for d in &round.devices {
            if d.participated {
                dropout_sum +=
                    shard_sizes[d.device] as f64 / data_total * d.gamma / (1.0 - d.gamma);
            }
        }
    }
    let ag2 = (constants.hessian_fnorm * constants.weight_norm).powi(2);
    let bound = (9.0 * constants.l_smooth * (history.initial_loss - constants.f_star)
        + 2.0 * k * constants.sigma2 / data_total
        + ag2 * dropout_sum / t)
        / t.sqrt();
    Ok(ConvergenceReport {
        rounds: history.rounds.len(),
        avg_grad_norm2,
        bound,
        ratio: avg_grad_norm2 / bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::{make_synthetic_dataset, MlpSpec, QuadraticModel};
    use crate::rng::{stream_rng, Stream};

    fn constants() -> AnalysisConstants {
        AnalysisConstants {
            l_smooth: 5.0,
            hessian_fnorm: 6.0,
            weight_norm: 4.0,
            sigma2: 0.0,
            theta: 0.5,
            eta: AnalysisConstants::auto_eta(5.0, 100),
            rounds: 100,
            f_star: 0.0,
        }
    }

    #[test]
    fn taylor_gradient_exact_on_quadratic() {
        let mut rng = stream_rng(41, Stream::Init);
        let q = QuadraticModel::random_symmetric(6, &mut rng)
            .with_linear(vec![0.3, -0.2, 0.5, 0.0, 1.0, -0.7])
            .unwrap();
        let model = Model::Quadratic(q);
        let w = model.init_params(&mut rng);
        let mask_rng = &mut stream_rng(
            42,
            Stream::Mask {
                device: 0,
                round: 0,
            },
        );
        let mask = make_mask(0.4, &w.layout, MaskMode::Bernoulli, mask_rng).unwrap();
        let subnet = apply_mask(&w, &mask).unwrap();

        let est = taylor_gradient(&model, &w, &subnet, &[]).unwrap();
        let exact = model.gradient(&subnet, &[]).unwrap();
        for (a, b) in est.iter().zip(&exact.values) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn taylor_gradient_identity_at_zero_offset() {
        let spec = MlpSpec::new(vec![3, 4, 2]).unwrap();
        let model = Model::Mlp(spec);
        let mut rng = stream_rng(43, Stream::Init);
        let w = model.init_params(&mut rng);
        let ds = make_synthetic_dataset(2, 10, 3, &mut stream_rng(44, Stream::Dataset)).unwrap();
        let batch = ds.full_batch();
        let est = taylor_gradient(&model, &w, &w, &batch).unwrap();
        let g = model.gradient(&w, &batch).unwrap();
        for (a, b) in est.iter().zip(&g.values) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn taylor_error_grows_with_rate_on_mlp() {
        // Small rates keep the masked point close to w, so the second-order
        // estimate should track the true subnet gradient better at 0.05
        // than at 0.3. Averaged over masks to damp draw luck.
        let spec = MlpSpec::new(vec![4, 8, 3]).unwrap();
        let model = Model::Mlp(spec);
        let mut rng = stream_rng(45, Stream::Init);
        let w = model.init_params(&mut rng);
        let ds = make_synthetic_dataset(3, 30, 4, &mut stream_rng(46, Stream::Dataset)).unwrap();
        let batch = ds.full_batch();
        let err_at = |rate: f64| -> f64 {
            let mut total = 0.0;
            let trials = 40;
            for i in 0..trials {
                let mask_rng = &mut stream_rng(47, Stream::Trial { index: i });
                let mask = make_mask(rate, &w.layout, MaskMode::Bernoulli, mask_rng).unwrap();
                let subnet = apply_mask(&w, &mask).unwrap();
                let est = taylor_gradient(&model, &w, &subnet, &batch).unwrap();
                let exact = model.gradient(&subnet, &batch).unwrap();
                let err: f64 = est
                    .iter()
                    .zip(&exact.values)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let scale: f64 = exact.values.iter().map(|x| x * x).sum::<f64>().sqrt();
                total += err / scale;
            }
            total / trials as f64
        };
        let low = err_at(0.05);
        let high = err_at(0.3);
        assert!(low <= high, "relative error {low} at 0.05 vs {high} at 0.3");
    }

    #[test]
    fn variance_check_zero_rate_is_degenerate() {
        let model = Model::Quadratic(QuadraticModel::diagonal(vec![1.0, 2.0]));
        let w = ParamVector::new(vec![1.0, 1.0], model.layout()).unwrap();
        let mut rng = stream_rng(48, Stream::Trial { index: 0 });
        let check =
            mask_variance_check(&model, &w, &[], 0.0, 1000, &constants(), &mut rng).unwrap();
        assert_eq!(check.empirical_variance, 0.0);
        assert_eq!(check.bound_fnorm, 0.0);
        assert_eq!(check.mean_gap, 0.0);
    }

    #[test]
    fn variance_check_matches_closed_form_within_three_se() {
        let mut rng = stream_rng(49, Stream::Init);
        let q = QuadraticModel::random_symmetric(6, &mut rng);
        let model = Model::Quadratic(q);
        let w = model.init_params(&mut rng);
        for &rate in &[0.1, 0.3, 0.5] {
            let exact = mask_variance_closed_form(&model, &w, &[], rate).unwrap();
            let mut mc_rng = stream_rng(
                50,
                Stream::Trial {
                    index: (rate * 10.0) as u64,
                },
            );
            let check =
                mask_variance_check(&model, &w, &[], rate, 20_000, &constants(), &mut mc_rng)
                    .unwrap();
            assert!(
                (check.empirical_variance - exact).abs() <= 3.0 * check.std_err,
                "rate {rate}: {} vs {exact} (3 SE = {})",
                check.empirical_variance,
                3.0 * check.std_err
            );
            assert!(check.within_fnorm_bound, "rate {rate}");
            // Unbiasedness: the mean gap shrinks as 1/sqrt(n).
            assert!(check.mean_gap < 10.0 * (exact / 20_000.0).sqrt().max(1e-9));
        }
    }

    #[test]
    fn monte_carlo_converges_at_root_n_rate() {
        let mut rng = stream_rng(51, Stream::Init);
        let q = QuadraticModel::random_symmetric(5, &mut rng);
        let model = Model::Quadratic(q);
        let w = model.init_params(&mut rng);
        let exact = mask_variance_closed_form(&model, &w, &[], 0.3).unwrap();
        let err_at = |n: usize, tag: u64| -> f64 {
            // Average absolute error over a few repetitions.
            let mut total = 0.0;
            for rep in 0..8 {
                let mut r = stream_rng(
                    52,
                    Stream::Trial {
                        index: tag * 100 + rep,
                    },
                );
                let c = mask_variance_check(&model, &w, &[], 0.3, n, &constants(), &mut r).unwrap();
                total += (c.empirical_variance - exact).abs();
            }
            total / 8.0
        };
        let coarse = err_at(1000, 1);
        let fine = err_at(16_000, 2);
        // 16x the samples should shrink the error by about 4; accept 2 to
        // leave Monte Carlo noise some room.
        assert!(
            fine < coarse / 2.0,
            "error {coarse} at 1k vs {fine} at 16k draws"
        );
    }

    #[test]
    fn scaling_fit_is_linear_on_quadratic() {
        let mut rng = stream_rng(53, Stream::Init);
        let q = QuadraticModel::random_symmetric(6, &mut rng);
        let model = Model::Quadratic(q);
        let w = model.init_params(&mut rng);
        let rates: Vec<f64> = (1..=10).map(|i| 0.05 * i as f64).collect();
        let mut mc_rng = stream_rng(54, Stream::Trial { index: 0 });
        let fit =
            variance_scaling_fit(&model, &w, &[], &rates, 4000, &constants(), &mut mc_rng).unwrap();
        assert!(fit.r_squared >= 0.99, "R^2 = {}", fit.r_squared);
        // The slope cannot exceed the Frobenius-tier coefficient.
        let fnorm2 = match &model {
            Model::Quadratic(q) => q.fnorm2(),
            _ => unreachable!(),
        };
        assert!(
            fit.slope <= fnorm2 * w.norm2() * 1.02,
            "slope {}",
            fit.slope
        );
    }

    #[test]
    fn scaling_fit_rejects_degenerate_input() {
        let model = Model::Quadratic(QuadraticModel::diagonal(vec![1.0]));
        let w = ParamVector::new(vec![1.0], model.layout()).unwrap();
        let mut rng = stream_rng(55, Stream::Trial { index: 0 });
        assert!(variance_scaling_fit(
            &model,
            &w,
            &[],
            &[0.0, 0.0, 0.0],
            1000,
            &constants(),
            &mut rng
        )
        .is_err());
        assert!(
            variance_scaling_fit(&model, &w, &[], &[0.1, 0.2], 1000, &constants(), &mut rng)
                .is_err()
        );
    }

    #[test]
    fn per_round_bound_zero_rates_is_pure_descent() {
        let c = constants();
        let t = c.rounds as f64;
        let l = c.l_smooth;
        let grad_norm2 = 2.5;
        let b = per_round_bound(&c, grad_norm2, &[0.0, 0.0], &[10, 10]).unwrap();
        let expected = (-1.0 / (3.0 * t.sqrt() * l) + 2.0 / (9.0 * t * l)) * grad_norm2;
        assert!((b - expected).abs() < 1e-15);
        // Guaranteed descent: 1/(3 sqrt(T)) > 2/(9 T) for every T >= 1.
        assert!(b < 0.0);
    }

    #[test]
    fn per_round_bound_blows_up_near_full_dropout() {
        let c = constants();
        let moderate = per_round_bound(&c, 1.0, &[0.5], &[10]).unwrap();
        let extreme = per_round_bound(&c, 1.0, &[1.0 - 1e-9], &[10]).unwrap();
        assert!(extreme > 1e6 * moderate.abs());
    }

    #[test]
    fn per_round_bound_monotone_in_each_rate() {
        let c = constants();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..20 {
            let rate = i as f64 * 0.04;
            let b = per_round_bound(&c, 1.0, &[rate, 0.2], &[10, 30]).unwrap();
            assert!(b > prev);
            prev = b;
        }
    }

    #[test]
    fn convergence_bound_closed_form_and_scaling() {
        // With zero rates and zero sampling variance the bound reduces to
        // 9 L [F(w0) - F*] / sqrt(T), which halves when T quadruples.
        let c = constants();
        let make_history = |t: usize| TrainingHistory {
            initial_loss: 2.0,
            rounds: (0..t)
                .map(|round| crate::protocol::RoundRecord {
                    round,
                    devices: vec![crate::protocol::DeviceRoundRecord {
                        device: 0,
                        participated: true,
                        gamma: 0.0,
                        rho: 1.0,
                        costs: crate::wireless::CostBreakdown {
                            t_dl: 0.0,
                            t_cmp: 0.0,
                            t_ul: 0.0,
                            t_total: 0.0,
                            e_ul: 0.0,
                            e_cmp: 0.0,
                            e_total: 0.0,
                        },
                        local_loss: Some(1.0),
                    }],
                    global_loss: 1.0,
                    grad_norm2: 0.5,
                    bottleneck_latency: 0.0,
                    over_deadline: false,
                    allocation_converged: true,
                })
                .collect(),
            halted: None,
        };
        let mut values = Vec::new();
        for &t in &[4usize, 16, 64] {
            let rep = convergence_report(&make_history(t), &c, &[10]).unwrap();
            let expected = 9.0 * c.l_smooth * 2.0 / (t as f64).sqrt();
            assert!(
                (rep.bound - expected).abs() / expected < 1e-12,
                "T={t}: {} vs {expected}",
                rep.bound
            );
            values.push(rep.bound);
        }
        assert!((values[0] / values[1] - 2.0).abs() < 1e-9);
        assert!((values[1] / values[2] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn convergence_report_single_round() {
        let c = constants();
        let history = TrainingHistory {
            initial_loss: 1.5,
            rounds: vec![crate::protocol::RoundRecord {
                round: 0,
                devices: vec![crate::protocol::DeviceRoundRecord {
                    device: 0,
                    participated: true,
                    gamma: 0.25,
                    rho: 1.0,
                    costs: crate::wireless::CostBreakdown {
                        t_dl: 0.0,
                        t_cmp: 0.0,
                        t_ul: 0.0,
                        t_total: 0.0,
                        e_ul: 0.0,
                        e_cmp: 0.0,
                        e_total: 0.0,
                    },
                    local_loss: Some(1.0),
                }],
                global_loss: 1.2,
                grad_norm2: 0.8,
                bottleneck_latency: 0.0,
                over_deadline: false,
                allocation_converged: true,
            }],
            halted: None,
        };
        let rep = convergence_report(&history, &c, &[10]).unwrap();
        assert_eq!(rep.rounds, 1);
        assert_eq!(rep.avg_grad_norm2, 0.8);
        let ag2 = (c.hessian_fnorm * c.weight_norm).powi(2);
        let expected = 9.0 * c.l_smooth * 1.5 + ag2 * (0.25 / 0.75);
        assert!((rep.bound - expected).abs() / expected < 1e-12);
    }
}
