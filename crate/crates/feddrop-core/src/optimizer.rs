//! Joint per-round selection of dropout rates and bandwidth shares.
//!
//! For one round with known channels, the allocator minimizes the
//! data-weighted variance load `sum_k (|D_k|/|D|) / (1 - rate_k)`, the term
//! that slows convergence, subject to:
//!
//! - C1: per-device round latency at most `t_max`,
//! - C2: per-device round energy at most the device budget,
//! - C3: bandwidth shares nonnegative, summing to at most 1,
//! - C4: dropout rates in `[0, theta)`.
//!
//! Substituting `x = sqrt(1 - rate)` makes the problem convex (the coupled
//! terms are all of the form `x^2 / share`, whose 2x2 Hessian is singular
//! positive semidefinite). A primal-dual loop then alternates closed-form
//! primal updates with projected subgradient ascent on the prices, followed
//! by an active-set Newton polish on the dual residuals to push the KKT
//! residuals to tolerance.
//!
//! Internally the latency/energy constraints are normalized by their budgets
//! (`latency/t_max - 1 <= 0`), so every residual is dimensionless and the
//! dual step sizes are scale-free. Prices convert back to the plain
//! Lagrangian scale on output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wireless::{ChannelState, DeviceProfile, NetworkConfig};

/// Lower clamp for bandwidth shares.
pub const EPS_SHARE: f64 = 1e-6;
/// Offset above `sqrt(1 - theta)` that keeps rates strictly below theta.
pub const EPS_KEEP: f64 = 1e-9;
/// Below this the bandwidth price is treated as inactive.
pub const EPS_PRICE: f64 = 1e-12;

/// One device's resource coefficients for the current round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceLink {
    pub profile: DeviceProfile,
    /// Downlink spectral efficiency log2(1 + SNR), bits/s/Hz.
    pub spec_eff_dl: f64,
    /// Uplink spectral efficiency log2(1 + SNR), bits/s/Hz.
    pub spec_eff_ul: f64,
}

/// Snapshot of one round's allocation problem: per-device spectral
/// efficiencies (computed once from the channel draws), profiles, and the
/// network configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationInstance {
    pub network: NetworkConfig,
    pub devices: Vec<DeviceLink>,
    /// Maximum admissible dropout rate (exclusive).
    pub theta: f64,
    /// Total samples across devices.
    data_total: f64,
}

impl AllocationInstance {
    pub fn new(network: NetworkConfig, devices: Vec<DeviceLink>, theta: f64) -> Result<Self> {
        network.validate()?;
        if devices.is_empty() {
            return Err(Error::domain("instance", "needs at least one device"));
        }
        if theta.is_nan() || theta <= 0.0 || theta >= 1.0 {
            return Err(Error::domain("theta", format!("{theta} not in (0, 1)")));
        }
        for d in &devices {
            d.profile.validate()?;
            if d.spec_eff_dl < 0.0 || d.spec_eff_ul < 0.0 {
                return Err(Error::domain("spectral efficiency", "must be nonnegative"));
            }
        }
        let data_total = devices.iter().map(|d| d.profile.data_size as f64).sum();
        Ok(AllocationInstance {
            network,
            devices,
            theta,
            data_total,
        })
    }

    /// Build the snapshot from raw channel draws.
    pub fn from_channels(
        network: NetworkConfig,
        profiles: &[DeviceProfile],
        channels: &[ChannelState],
        theta: f64,
    ) -> Result<Self> {
        if profiles.len() != channels.len() {
            return Err(Error::Shape(format!(
                "{} profiles vs {} channels",
                profiles.len(),
                channels.len()
            )));
        }
        let devices = profiles
            .iter()
            .zip(channels)
            .map(|(p, ch)| DeviceLink {
                profile: *p,
                spec_eff_dl: (1.0 + ch.h2_dl * p.p_dl / network.noise_n0).log2(),
                spec_eff_ul: (1.0 + ch.h2_ul * p.p_ul / network.noise_n0).log2(),
            })
            .collect();
        AllocationInstance::new(network, devices, theta)
    }

    pub fn n_devices(&self) -> usize {
        self.devices.len()
    }

    /// Data weight `|D_k| / |D|` of device k.
    pub fn data_weight(&self, k: usize) -> f64 {
        self.devices[k].profile.data_size as f64 / self.data_total
    }

    /// Smallest admissible `x = sqrt(1 - rate)`.
    pub fn keep_sqrt_floor(&self) -> f64 {
        (1.0 - self.theta).sqrt() + EPS_KEEP
    }

    /// Largest share one device may take while every other device keeps its
    /// floor share, so a full single-device grant cannot oversubscribe.
    pub fn share_cap(&self) -> f64 {
        1.0 - (self.n_devices() - 1) as f64 * EPS_SHARE
    }

    /// Communication seconds per unit `keep^2 / share`:
    /// `m_ori q (1/R_dl + 1/R_ul) / B`. Infinite on a dead link.
    pub fn comm_latency_coeff(&self, k: usize) -> f64 {
        let d = &self.devices[k];
        let per_hz = self.network.m_ori * self.network.bits_per_param_q / self.network.bandwidth_b;
        per_hz * (1.0 / d.spec_eff_dl + 1.0 / d.spec_eff_ul)
    }

    /// Compute seconds per unit `keep^2`: `c_ori |D_k| / f_k`.
    pub fn cmp_latency_coeff(&self, k: usize) -> f64 {
        let d = &self.devices[k];
        self.network.c_ori * d.profile.data_size as f64 / d.profile.cpu_freq_f
    }

    /// Upload joules per unit `keep^2 / share`: `p_ul m_ori q / (B R_ul)`.
    pub fn comm_energy_coeff(&self, k: usize) -> f64 {
        let d = &self.devices[k];
        d.profile.p_ul * self.network.m_ori * self.network.bits_per_param_q
            / (self.network.bandwidth_b * d.spec_eff_ul)
    }

    /// Compute joules per unit `keep^2`: `omega c_ori |D_k| f^2`.
    pub fn cmp_energy_coeff(&self, k: usize) -> f64 {
        let d = &self.devices[k];
        d.profile.cpu_const_omega
            * self.network.c_ori
            * d.profile.data_size as f64
            * d.profile.cpu_freq_f.powi(2)
    }

    /// Round latency of device k at `keep2 = 1 - rate` and bandwidth share.
    pub fn latency(&self, k: usize, keep2: f64, share: f64) -> f64 {
        keep2 * (self.comm_latency_coeff(k) / share + self.cmp_latency_coeff(k))
    }

    /// Round energy of device k, including circuit energy.
    pub fn energy(&self, k: usize, keep2: f64, share: f64) -> f64 {
        keep2 * (self.comm_energy_coeff(k) / share + self.cmp_energy_coeff(k))
            + self.devices[k].profile.circuit_energy_xi
    }

    /// Smallest share for which device k meets the latency cap at `keep2`,
    /// or infinity when compute alone exceeds the cap.
    pub fn min_share_for_latency(&self, k: usize, keep2: f64) -> f64 {
        let headroom = self.network.t_max_t0 - keep2 * self.cmp_latency_coeff(k);
        if headroom <= 0.0 {
            return f64::INFINITY;
        }
        keep2 * self.comm_latency_coeff(k) / headroom
    }

    /// Smallest share for which device k meets its energy budget at `keep2`
    /// (upload time shrinks with bandwidth, so energy improves with share),
    /// or infinity when compute energy alone exceeds the budget.
    pub fn min_share_for_energy(&self, k: usize, keep2: f64) -> f64 {
        let p = &self.devices[k].profile;
        let headroom = p.energy_budget_e0 - p.circuit_energy_xi - keep2 * self.cmp_energy_coeff(k);
        if headroom <= 0.0 {
            return f64::INFINITY;
        }
        keep2 * self.comm_energy_coeff(k) / headroom
    }

    /// Variance-load objective `sum_k d_k / keep2_k`.
    pub fn objective(&self, keep2: &[f64]) -> f64 {
        keep2
            .iter()
            .enumerate()
            .map(|(k, &v)| self.data_weight(k) / v)
            .sum()
    }
}

/// Normalized dual prices: the latency/energy prices multiply the
/// dimensionless constraints `latency/t_max - 1` and `energy/budget - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPrices {
    pub bandwidth: f64,
    pub latency: Vec<f64>,
    pub energy: Vec<f64>,
}

impl DualPrices {
    pub fn zero(n: usize) -> Self {
        DualPrices {
            bandwidth: 0.0,
            latency: vec![0.0; n],
            energy: vec![0.0; n],
        }
    }
}

/// Primal iterate of the fixed-point sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalPoint {
    /// `x_k = sqrt(1 - rate_k)`, in `[keep_sqrt_floor, 1]`.
    pub keep_sqrt: Vec<f64>,
    pub share: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

impl PrimalPoint {
    pub fn cold(instance: &AllocationInstance) -> Self {
        let n = instance.n_devices();
        PrimalPoint {
            keep_sqrt: vec![1.0; n],
            share: vec![1.0 / n as f64; n],
            sweeps: 0,
            converged: false,
        }
    }

    pub fn drop_rates(&self) -> Vec<f64> {
        self.keep_sqrt.iter().map(|x| 1.0 - x * x).collect()
    }
}

/// Closed-form stationarity solution for `x_k` at fixed share and prices:
/// the fourth root of `d_k` over the price-weighted unit costs, clamped to
/// the admissible interval. With no price pressure the objective alone wins
/// and `x = 1` (no dropout).
pub fn closed_form_keep_sqrt(
    instance: &AllocationInstance,
    k: usize,
    share: f64,
    duals: &DualPrices,
) -> f64 {
    let lat_unit = instance.comm_latency_coeff(k) / share + instance.cmp_latency_coeff(k);
    let en_unit = instance.comm_energy_coeff(k) / share + instance.cmp_energy_coeff(k);
    let budget = instance.devices[k].profile.energy_budget_e0;
    let pressure = duals.latency[k] * lat_unit / instance.network.t_max_t0
        + duals.energy[k] * en_unit / budget;
    let floor = instance.keep_sqrt_floor();
    if pressure <= 0.0 {
        return 1.0;
    }
    let x = (instance.data_weight(k) / pressure).powf(0.25);
    x.clamp(floor, 1.0)
}

/// Closed-form stationarity solution for the bandwidth share of device k at
/// fixed `keep2` and prices.
///
/// With no communication pressure the share drops to the floor. When the
/// bandwidth price is effectively zero while pressure exists, the share
/// falls back to the smallest value meeting the latency cap with equality
/// at the current rate (any larger share is feasible but the objective does
/// not reward it).
pub fn closed_form_share(
    instance: &AllocationInstance,
    k: usize,
    keep2: f64,
    duals: &DualPrices,
) -> f64 {
    let budget = instance.devices[k].profile.energy_budget_e0;
    let pressure = keep2
        * (duals.latency[k] * instance.comm_latency_coeff(k) / instance.network.t_max_t0
            + duals.energy[k] * instance.comm_energy_coeff(k) / budget);
    if pressure <= 0.0 {
        return EPS_SHARE;
    }
    let cap = instance.share_cap();
    if duals.bandwidth > EPS_PRICE {
        (pressure / duals.bandwidth).sqrt().clamp(EPS_SHARE, cap)
    } else {
        instance
            .min_share_for_latency(k, keep2)
            .clamp(EPS_SHARE, cap)
    }
}

/// Which variable family a sweep updates first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    #[default]
    KeepFirst,
    ShareFirst,
}

/// Alternate the two closed forms until the iterate settles (max relative
/// change below 1e-8) or 50 sweeps pass; the flag records which.
pub fn inner_fixed_point(
    instance: &AllocationInstance,
    duals: &DualPrices,
    start: &PrimalPoint,
    order: SweepOrder,
    max_sweeps: usize,
) -> PrimalPoint {
    let n = instance.n_devices();
    let mut point = start.clone();
    let tol = 1e-8;
    for sweep in 0..max_sweeps {
        let mut change: f64 = 0.0;
        let update_keep = |point: &mut PrimalPoint, change: &mut f64| {
            for k in 0..n {
                let x = closed_form_keep_sqrt(instance, k, point.share[k], duals);
                *change = (*change).max((x - point.keep_sqrt[k]).abs() / point.keep_sqrt[k].abs());
                point.keep_sqrt[k] = x;
            }
        };
        let update_share = |point: &mut PrimalPoint, change: &mut f64| {
            for k in 0..n {
                let keep2 = point.keep_sqrt[k] * point.keep_sqrt[k];
                let s = closed_form_share(instance, k, keep2, duals);
                *change = (*change).max((s - point.share[k]).abs() / point.share[k].abs());
                point.share[k] = s;
            }
        };
        match order {
            SweepOrder::KeepFirst => {
                update_keep(&mut point, &mut change);
                update_share(&mut point, &mut change);
            }
            SweepOrder::ShareFirst => {
                update_share(&mut point, &mut change);
                update_keep(&mut point, &mut change);
            }
        }
        point.sweeps = sweep + 1;
        if change < tol {
            point.converged = true;
            return point;
        }
    }
    point.converged = false;
    point
}

/// Dimensionless constraint residuals at a primal point. Positive means
/// violated; a price ascends on its own residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    /// `sum(share) - 1`.
    pub bandwidth: f64,
    /// `latency/t_max - 1` per device.
    pub latency: Vec<f64>,
    /// `energy/budget - 1` per device.
    pub energy: Vec<f64>,
}

impl Residuals {
    /// Copy with every component capped above. Early iterates sit at the
    /// share floor where normalized violations reach `1/EPS_SHARE`; feeding
    /// those raw into the ascent would catapult the prices.
    pub fn capped(&self, cap: f64) -> Residuals {
        Residuals {
            bandwidth: self.bandwidth.min(cap),
            latency: self.latency.iter().map(|r| r.min(cap)).collect(),
            energy: self.energy.iter().map(|r| r.min(cap)).collect(),
        }
    }
}

pub fn residuals(instance: &AllocationInstance, point: &PrimalPoint) -> Residuals {
    let n = instance.n_devices();
    let mut latency = Vec::with_capacity(n);
    let mut energy = Vec::with_capacity(n);
    for k in 0..n {
        let keep2 = point.keep_sqrt[k] * point.keep_sqrt[k];
        latency.push(instance.latency(k, keep2, point.share[k]) / instance.network.t_max_t0 - 1.0);
        energy.push(
            instance.energy(k, keep2, point.share[k])
                / instance.devices[k].profile.energy_budget_e0
                - 1.0,
        );
    }
    Residuals {
        bandwidth: point.share.iter().sum::<f64>() - 1.0,
        latency,
        energy,
    }
}

/// One projected subgradient ascent step on all prices.
pub fn dual_step(duals: &mut DualPrices, res: &Residuals, step: f64) {
    duals.bandwidth = (duals.bandwidth + step * res.bandwidth).max(0.0);
    for (l, r) in duals.latency.iter_mut().zip(&res.latency) {
        *l = (*l + step * r).max(0.0);
    }
    for (e, r) in duals.energy.iter_mut().zip(&res.energy) {
        *e = (*e + step * r).max(0.0);
    }
}

/// Worst-case KKT residuals of a candidate solution, all dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// Largest positive constraint violation (latency, energy, bandwidth).
    pub primal: f64,
    /// Largest `price * |residual|` product.
    pub comp_slackness: f64,
    /// Largest projected stationarity defect over both variable families.
    pub stationarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.comp_slackness).max(self.stationarity)
    }
}

fn kkt_residuals(
    instance: &AllocationInstance,
    point: &PrimalPoint,
    duals: &DualPrices,
) -> KktResiduals {
    let res = residuals(instance, point);
    let mut primal = res.bandwidth.max(0.0);
    let mut comp: f64 = duals.bandwidth * res.bandwidth.abs();
    for k in 0..instance.n_devices() {
        primal = primal
            .max(res.latency[k].max(0.0))
            .max(res.energy[k].max(0.0));
        comp = comp
            .max(duals.latency[k] * res.latency[k].abs())
            .max(duals.energy[k] * res.energy[k].abs());
    }

    let mut stat: f64 = 0.0;
    let floor = instance.keep_sqrt_floor();
    for k in 0..instance.n_devices() {
        let x = point.keep_sqrt[k];
        let share = point.share[k];
        let budget = instance.devices[k].profile.energy_budget_e0;
        let lat_unit = instance.comm_latency_coeff(k) / share + instance.cmp_latency_coeff(k);
        let en_unit = instance.comm_energy_coeff(k) / share + instance.cmp_energy_coeff(k);
        let pull = 2.0 * instance.data_weight(k) / x.powi(3);
        let push = 2.0
            * x
            * (duals.latency[k] * lat_unit / instance.network.t_max_t0
                + duals.energy[k] * en_unit / budget);
        let grad = push - pull;
        let at_top = x >= 1.0 - 1e-12 && grad < 0.0; // rate floor 0 active
        let at_floor = x <= floor + 1e-12 && grad > 0.0; // rate ceiling active
        if !(at_top || at_floor) {
            stat = stat.max(grad.abs() / pull.max(1e-300));
        }

        let keep2 = x * x;
        let band_pull = keep2
            * (duals.latency[k] * instance.comm_latency_coeff(k) / instance.network.t_max_t0
                + duals.energy[k] * instance.comm_energy_coeff(k) / budget)
            / (share * share);
        let grad_share = duals.bandwidth - band_pull;
        let share_floor = share <= EPS_SHARE + 1e-15 && grad_share > 0.0;
        let share_top = share >= instance.share_cap() - 1e-12 && grad_share < 0.0;
        if !(share_floor || share_top) {
            // Below this scale the prices exert no material force on the
            // share (the objective itself never does), so the defect is
            // vacuous.
            let scale = duals.bandwidth.max(band_pull);
            if scale > 1e-10 {
                stat = stat.max(grad_share.abs() / scale);
            }
        }
    }
    KktResiduals {
        primal,
        comp_slackness: comp,
        stationarity: stat,
    }
}

/// Outcome of [`solve`]: rates, shares, prices (plain Lagrangian scale),
/// convergence diagnostics, and the objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
    pub mu: f64,
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub residuals: KktResiduals,
}

/// How often the primal closed forms are iterated per dual step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimalUpdateMode {
    /// Sweep the two closed forms to a joint fixed point each dual step.
    #[default]
    FixedPoint,
    /// Evaluate each closed form once per dual step.
    SingleEvaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Base subgradient step; decays as `base/sqrt(i)`.
    pub base_step: f64,
    /// Target for the worst KKT residual.
    pub tol: f64,
    pub primal_mode: PrimalUpdateMode,
    pub sweep_order: SweepOrder,
    /// Run the active-set Newton polish once the subgradient phase is close.
    pub refine: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 100_000,
            base_step: 0.5,
            tol: 1e-8,
            primal_mode: PrimalUpdateMode::FixedPoint,
            sweep_order: SweepOrder::KeepFirst,
            refine: true,
        }
    }
}

/// Feasibility probe: can the instance be satisfied at the maximum dropout
/// rate? Computes each device's minimal latency-feasible share at the rate
/// ceiling, then checks the bandwidth total and the energy budget at that
/// point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Minimal latency-feasible share per device at the rate ceiling.
    pub min_share: Vec<f64>,
    /// `1 - sum(min_share)`.
    pub bandwidth_slack: f64,
    /// Latency slack per device at its minimal share (t_max - latency).
    pub latency_slack: Vec<f64>,
    /// Energy slack per device at its minimal share (budget - energy).
    pub energy_slack: Vec<f64>,
    pub violators: Vec<usize>,
}

impl std::fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.feasible {
            write!(f, "feasible (bandwidth slack {:.3e})", self.bandwidth_slack)
        } else {
            write!(f, "infeasible; violating devices: {:?}", self.violators)
        }
    }
}

pub fn check_feasibility(instance: &AllocationInstance) -> FeasibilityReport {
    let n = instance.n_devices();
    let floor = instance.keep_sqrt_floor();
    let keep2 = floor * floor;
    let mut min_share = Vec::with_capacity(n);
    let mut latency_slack = Vec::with_capacity(n);
    let mut energy_slack = Vec::with_capacity(n);
    let mut violators = Vec::new();
    for k in 0..n {
        // Both constraints improve with bandwidth, so the device's minimal
        // share is the larger of the two single-constraint minima.
        let share = instance
            .min_share_for_latency(k, keep2)
            .max(instance.min_share_for_energy(k, keep2));
        min_share.push(share);
        if !share.is_finite() || share > 1.0 {
            violators.push(k);
            latency_slack.push(f64::NEG_INFINITY);
            energy_slack.push(f64::NEG_INFINITY);
            continue;
        }
        let t = instance.latency(k, keep2, share.max(EPS_SHARE));
        let e = instance.energy(k, keep2, share.max(EPS_SHARE));
        latency_slack.push(instance.network.t_max_t0 - t);
        energy_slack.push(instance.devices[k].profile.energy_budget_e0 - e);
    }
    let total: f64 = min_share.iter().sum();
    let feasible = violators.is_empty() && total <= 1.0;
    FeasibilityReport {
        feasible,
        min_share,
        bandwidth_slack: 1.0 - total,
        latency_slack,
        energy_slack,
        violators,
    }
}

/// Solve the round allocation to a KKT point.
///
/// Runs the feasibility probe first and fails with the report when the
/// instance cannot be satisfied even at the rate ceiling. Otherwise runs the
/// primal-dual loop; when it cannot reach tolerance within the iteration
/// budget the best iterate is returned with `converged = false`.
pub fn solve(instance: &AllocationInstance, options: &SolveOptions) -> Result<AllocationDecision> {
    let report = check_feasibility(instance);
    if !report.feasible {
        return Err(Error::Infeasible(report.to_string()));
    }

    let n = instance.n_devices();

    // When zero dropout fits the budgets outright, it is the unconstrained
    // minimizer of the objective: return it with each device at its minimal
    // feasible share (the objective is indifferent to shares, so the
    // smallest deterministic choice wins). All prices are zero and the KKT
    // conditions hold with every constraint slack.
    {
        let cap = instance.share_cap();
        let min_shares: Vec<f64> = (0..n)
            .map(|k| {
                instance
                    .min_share_for_latency(k, 1.0)
                    .max(instance.min_share_for_energy(k, 1.0))
            })
            .collect();
        let total: f64 = min_shares.iter().map(|s| s.max(EPS_SHARE)).sum();
        if min_shares.iter().all(|s| (0.0..=cap).contains(s)) && total <= 1.0 {
            let share: Vec<f64> = min_shares.iter().map(|s| s.max(EPS_SHARE)).collect();
            let point = PrimalPoint {
                keep_sqrt: vec![1.0; n],
                share,
                sweeps: 0,
                converged: true,
            };
            let duals = DualPrices::zero(n);
            let kkt = kkt_residuals(instance, &point, &duals);
            return Ok(AllocationDecision {
                gamma: vec![0.0; n],
                rho: point.share.clone(),
                mu: 0.0,
                lambda: vec![0.0; n],
                nu: vec![0.0; n],
                converged: true,
                iterations: 0,
                objective: 1.0,
                residuals: kkt,
            });
        }
    }

    let mut duals = DualPrices::zero(n);
    let mut point = PrimalPoint::cold(instance);
    let mut iterations = 0usize;
    let mut converged = false;

    let sweeps = match options.primal_mode {
        PrimalUpdateMode::FixedPoint => 50,
        PrimalUpdateMode::SingleEvaluation => 1,
    };

    for i in 1..=options.max_iters {
        iterations = i;
        point = inner_fixed_point(instance, &duals, &point, options.sweep_order, sweeps);
        let res = residuals(instance, &point);

        // With a zero bandwidth price the share fallback rides the latency
        // boundary, which would freeze the latency prices at exactly zero
        // residual even when spare bandwidth should let them decay. Grade
        // the prices against the spare-filled allocation instead.
        let step_res = if duals.bandwidth <= EPS_PRICE && res.bandwidth < -1e-9 {
            let spare = -res.bandwidth / instance.n_devices() as f64;
            let filled = PrimalPoint {
                share: point.share.iter().map(|s| s + spare).collect(),
                ..point.clone()
            };
            residuals(instance, &filled)
        } else {
            res.clone()
        };

        // The share fallback at zero bandwidth price can park the iterate on
        // a latency-tight plateau with spare bandwidth. The bandwidth price
        // that would exactly clear the market is available in closed form;
        // jumping there keeps the ascent moving.
        if options.refine && duals.bandwidth <= EPS_PRICE && res.bandwidth < -1e-9 {
            let mut root_sum = 0.0;
            for k in 0..n {
                let keep2 = point.keep_sqrt[k] * point.keep_sqrt[k];
                let budget = instance.devices[k].profile.energy_budget_e0;
                let pressure = keep2
                    * (duals.latency[k] * instance.comm_latency_coeff(k)
                        / instance.network.t_max_t0
                        + duals.energy[k] * instance.comm_energy_coeff(k) / budget);
                if pressure > 0.0 {
                    root_sum += pressure.sqrt();
                }
            }
            if root_sum > 0.0 {
                duals.bandwidth = root_sum * root_sum;
            }
        }

        dual_step(
            &mut duals,
            &step_res.capped(10.0),
            options.base_step / (i as f64).sqrt(),
        );

        if i % 25 == 0 || i == options.max_iters {
            let kkt = kkt_residuals(instance, &point, &duals);
            if kkt.max() <= options.tol {
                converged = true;
                break;
            }
            if options.refine && i >= 200 && i % 200 == 0 {
                if let Some((p, d)) = refine(instance, &point, &duals, options) {
                    point = p;
                    duals = d;
                    converged = true;
                    break;
                }
            }
        }
    }

    if !converged {
        // Final polish attempt before reporting failure.
        if options.refine {
            if let Some((p, d)) = refine(instance, &point, &duals, options) {
                point = p;
                duals = d;
                converged = true;
            }
        }
    }

    // The polished bandwidth market clears to |sum(share) - 1| ~ 1e-10;
    // shave any overshoot so the returned shares respect the budget exactly.
    let total_share: f64 = point.share.iter().sum();
    if total_share > 1.0 {
        let scale = (1.0 - 1e-12) / total_share;
        for s in point.share.iter_mut() {
            *s *= scale;
        }
    }
    let kkt = kkt_residuals(instance, &point, &duals);
    let converged = converged && kkt.max() <= options.tol.max(1e-7);
    let keep2: Vec<f64> = point.keep_sqrt.iter().map(|x| x * x).collect();
    Ok(AllocationDecision {
        gamma: point.drop_rates(),
        rho: point.share.clone(),
        mu: duals.bandwidth,
        lambda: duals
            .latency
            .iter()
            .map(|l| l / instance.network.t_max_t0)
            .collect(),
        nu: duals
            .energy
            .iter()
            .enumerate()
            .map(|(k, e)| e / instance.devices[k].profile.energy_budget_e0)
            .collect(),
        converged,
        iterations,
        objective: instance.objective(&keep2),
        residuals: kkt,
    })
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Constraint {
    Band,
    Lat(usize),
    En(usize),
}

/// Active-set Newton polish: pick the constraints that look active, solve
/// their residual system in the prices exactly (the primal fixed point is a
/// smooth function of the prices), and verify the full KKT conditions.
/// Retries with adjusted sets when a price is driven to zero or a left-out
/// constraint turns out violated.
fn refine(
    instance: &AllocationInstance,
    point: &PrimalPoint,
    duals: &DualPrices,
    options: &SolveOptions,
) -> Option<(PrimalPoint, DualPrices)> {
    let n = instance.n_devices();
    let res = residuals(instance, point);

    let act_price = 1e-7;
    let act_res = -1e-3;
    let mut active: Vec<Constraint> = Vec::new();
    for k in 0..n {
        if duals.latency[k] > act_price || res.latency[k] > act_res {
            active.push(Constraint::Lat(k));
        }
        if duals.energy[k] > act_price || res.energy[k] > act_res {
            active.push(Constraint::En(k));
        }
    }
    // Any priced per-device constraint makes bandwidth contested, so the
    // market clears at the full budget.
    if !active.is_empty() || duals.bandwidth > act_price || res.bandwidth > act_res {
        active.push(Constraint::Band);
    }

    let verify_tol = options.tol.max(1e-9);
    for _attempt in 0..6 {
        if active.is_empty() {
            // Fully slack instance: zero prices are already optimal.
            let zero = DualPrices::zero(n);
            let p = inner_fixed_point(instance, &zero, point, options.sweep_order, 50);
            let kkt = kkt_residuals(instance, &p, &zero);
            return (kkt.max() <= verify_tol).then_some((p, zero));
        }
        let (p, d, prices, rnorm) = newton_on_active(instance, &active, point, duals, options);
        if rnorm <= 1e-9 {
            let kkt = kkt_residuals(instance, &p, &d);
            if kkt.max() <= verify_tol {
                return Some((p, d));
            }
            // A pinned price means that constraint is not really active.
            let mut dropped = false;
            for (w, &v) in active.clone().iter().zip(&prices) {
                if v < 1e-9 && !matches!(w, Constraint::Band) {
                    active.retain(|a| a != w);
                    dropped = true;
                }
            }
            if dropped {
                if active == [Constraint::Band] {
                    active.clear();
                }
                continue;
            }
            // A violated constraint outside the set must join it.
            let r = residuals(instance, &p);
            let mut added = false;
            for k in 0..n {
                if r.latency[k] > verify_tol && !active.contains(&Constraint::Lat(k)) {
                    active.push(Constraint::Lat(k));
                    added = true;
                }
                if r.energy[k] > verify_tol && !active.contains(&Constraint::En(k)) {
                    active.push(Constraint::En(k));
                    added = true;
                }
            }
            if !added {
                return None;
            }
        } else {
            // Stuck: the set most likely contains a constraint that is not
            // active at the optimum. Shed the cheapest per-device price and
            // try again; the add-back branch restores it if it was real.
            let mut cheapest: Option<(usize, f64)> = None;
            for (j, (w, &v)) in active.iter().zip(&prices).enumerate() {
                if !matches!(w, Constraint::Band) && cheapest.is_none_or(|(_, best)| v < best) {
                    cheapest = Some((j, v));
                }
            }
            match cheapest {
                Some((j, _)) => {
                    active.remove(j);
                    if active == [Constraint::Band] {
                        active.clear();
                    }
                }
                None => return None,
            }
        }
    }
    None
}

/// Newton iteration on the residuals of the chosen constraints. Returns the
/// refined primal, full prices, and the packed price vector.
fn newton_on_active(
    instance: &AllocationInstance,
    active: &[Constraint],
    point: &PrimalPoint,
    duals: &DualPrices,
    options: &SolveOptions,
) -> (PrimalPoint, DualPrices, Vec<f64>, f64) {
    let n = instance.n_devices();
    let m = active.len();

    let unpack = |v: &[f64]| -> DualPrices {
        let mut d = DualPrices::zero(n);
        for (w, &val) in active.iter().zip(v) {
            match *w {
                Constraint::Band => d.bandwidth = val,
                Constraint::Lat(k) => d.latency[k] = val,
                Constraint::En(k) => d.energy[k] = val,
            }
        }
        d
    };
    let eval = |v: &[f64], warm: &PrimalPoint| -> (PrimalPoint, Vec<f64>) {
        let d = unpack(v);
        let p = inner_fixed_point(instance, &d, warm, options.sweep_order, 200);
        let r = residuals(instance, &p);
        let packed = active
            .iter()
            .map(|w| match *w {
                Constraint::Band => r.bandwidth,
                Constraint::Lat(k) => r.latency[k],
                Constraint::En(k) => r.energy[k],
            })
            .collect();
        (p, packed)
    };

    let mut v: Vec<f64> = active
        .iter()
        .map(|w| {
            let x = match *w {
                Constraint::Band => duals.bandwidth,
                Constraint::Lat(k) => duals.latency[k],
                Constraint::En(k) => duals.energy[k],
            };
            x.max(1e-6)
        })
        .collect();
    let mut warm = point.clone();
    let (p0, mut r) = eval(&v, &warm);
    warm = p0;

    for _ in 0..40 {
        let rnorm = r.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if rnorm <= 1e-11 {
            break;
        }
        // Forward-difference Jacobian of the active residuals in the prices.
        let mut jac = vec![vec![0.0; m]; m];
        for j in 0..m {
            let h = (v[j].abs() * 1e-6).max(1e-10);
            let mut vp = v.clone();
            vp[j] += h;
            let (_, rp) = eval(&vp, &warm);
            for i in 0..m {
                jac[i][j] = (rp[i] - r[i]) / h;
            }
        }
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let delta = match solve_linear(&mut jac.clone(), &rhs) {
            Some(d) => d,
            None => {
                // Singular system (some price has no local effect, e.g. a
                // share pinned at a clamp). Regularize lightly.
                for (i, row) in jac.iter_mut().enumerate() {
                    row[i] += 1e-9;
                }
                match solve_linear(&mut jac, &rhs) {
                    Some(d) => d,
                    None => break,
                }
            }
        };
        // Damped update keeping prices positive.
        let mut t: f64 = 1.0;
        for (j, d) in delta.iter().enumerate() {
            if v[j] + d < 0.0 {
                t = t.min(0.9 * v[j] / -d);
            }
        }
        let mut improved = false;
        for _ in 0..12 {
            let vt: Vec<f64> = v
                .iter()
                .zip(&delta)
                .map(|(a, d)| (a + t * d).max(0.0))
                .collect();
            let (pt, rt) = eval(&vt, &warm);
            let rt_norm = rt.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if rt_norm < rnorm {
                v = vt;
                r = rt;
                warm = pt;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let rnorm = r.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let d = unpack(&v);
    let p = inner_fixed_point(instance, &d, &warm, options.sweep_order, 200);
    (p, d, v, rnorm)
}

/// Gaussian elimination with partial pivoting; None on a singular system.
fn solve_linear(a: &mut [Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot =
            (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        x.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            let (pivot_rows, rest) = a.split_at_mut(row);
            let pivot = &pivot_rows[col];
            for (c, entry) in rest[0].iter_mut().enumerate().skip(col) {
                *entry -= f * pivot[c];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= a[col][col];
        for row in 0..col {
            x[row] -= a[row][col] * x[col];
            a[row][col] = 0.0;
        }
    }
    Some(x)
}
