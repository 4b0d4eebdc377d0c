//! Fading channels and the per-round latency/energy/overhead models.
//!
//! Each round a device downloads its subnet, runs local updates, and uploads
//! the result over its share of the system bandwidth. All three cost
//! components scale with the subnet: downlink and uplink latencies move the
//! subnet's `(1 - rate) * m_ori * q` bits at the link rate, computation takes
//! `(1 - rate) * c_ori * samples / f` seconds, compute energy follows the
//! cubic frequency law `omega * t * f^3`, and upload energy is transmit power
//! times upload time.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// System-wide network and model-size parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Total system bandwidth, Hz.
    pub bandwidth_b: f64,
    /// Noise spectral density, W/Hz.
    pub noise_n0: f64,
    /// Transmission bits per model parameter.
    pub bits_per_param_q: f64,
    /// Maximum permitted per-round latency, seconds.
    pub t_max_t0: f64,
    /// Parameter count of the full model.
    pub m_ori: f64,
    /// Processor cycles per sample for the full model.
    pub c_ori: f64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("bandwidth_b", self.bandwidth_b),
            ("noise_n0", self.noise_n0),
            ("bits_per_param_q", self.bits_per_param_q),
            ("t_max_t0", self.t_max_t0),
            ("m_ori", self.m_ori),
            ("c_ori", self.c_ori),
        ];
        for (name, v) in fields {
            if v.is_nan() || v <= 0.0 || !v.is_finite() {
                return Err(Error::domain(
                    "network config",
                    format!("{name} = {v} must be positive"),
                ));
            }
        }
        Ok(())
    }
}

/// Per-device compute, energy, and data parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// CPU frequency, cycles/s.
    pub cpu_freq_f: f64,
    /// Processor energy constant, J s^2 / cycle^3.
    pub cpu_const_omega: f64,
    /// Circuit energy for receiving the global model, J.
    pub circuit_energy_xi: f64,
    /// Local dataset size, samples.
    pub data_size: usize,
    /// Per-round energy budget, J.
    pub energy_budget_e0: f64,
    /// Downlink (server side) transmit power, W.
    pub p_dl: f64,
    /// Uplink (device side) transmit power, W.
    pub p_ul: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("cpu_freq_f", self.cpu_freq_f),
            ("cpu_const_omega", self.cpu_const_omega),
            ("circuit_energy_xi", self.circuit_energy_xi),
            ("energy_budget_e0", self.energy_budget_e0),
            ("p_dl", self.p_dl),
            ("p_ul", self.p_ul),
        ];
        for (name, v) in fields {
            if v.is_nan() || v <= 0.0 || !v.is_finite() {
                return Err(Error::domain(
                    "device profile",
                    format!("{name} = {v} must be positive"),
                ));
            }
        }
        if self.data_size == 0 {
            return Err(Error::domain(
                "device profile",
                "data_size must be positive",
            ));
        }
        if self.energy_budget_e0 <= self.circuit_energy_xi {
            return Err(Error::domain(
                "device profile",
                format!(
                    "energy budget {} does not even cover circuit energy {}",
                    self.energy_budget_e0, self.circuit_energy_xi
                ),
            ));
        }
        Ok(())
    }
}

/// Squared channel gains of both links for one round. Channels stay fixed
/// within a round and are redrawn across rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub h2_dl: f64,
    pub h2_ul: f64,
    pub round: usize,
}

/// Per-round cost decomposition for one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub t_dl: f64,
    pub t_cmp: f64,
    pub t_ul: f64,
    /// `t_dl + t_cmp + t_ul`.
    pub t_total: f64,
    pub e_ul: f64,
    pub e_cmp: f64,
    /// `e_ul + e_cmp + circuit_energy`.
    pub e_total: f64,
}

impl CostBreakdown {
    /// A dead link yields infinite latency rather than an error, so the
    /// optimizer can treat the device as infeasible this round.
    pub fn is_over_horizon(&self) -> bool {
        !self.t_total.is_finite()
    }
}

/// Draw squared gains for both links from Rician fading.
///
/// `h = sqrt(path_loss) * (sqrt(k/(k+1)) + sqrt(1/(k+1)) * cn)` with `cn`
/// standard complex normal; `E[|h|^2] = path_loss` for every k-factor. A
/// k-factor of 0 degenerates to Rayleigh fading; an infinite k-factor is the
/// pure line-of-sight channel with `|h|^2 = path_loss` exactly.
pub fn sample_rician(
    k_factor: f64,
    mean_path_loss: f64,
    round: usize,
    rng: &mut impl Rng,
) -> Result<ChannelState> {
    if k_factor < 0.0 || k_factor.is_nan() {
        return Err(Error::domain(
            "k_factor",
            format!("{k_factor} must be >= 0"),
        ));
    }
    if mean_path_loss.is_nan() || mean_path_loss <= 0.0 {
        return Err(Error::domain(
            "mean_path_loss",
            format!("{mean_path_loss} must be > 0"),
        ));
    }
    let mut draw = || {
        if k_factor.is_infinite() {
            return mean_path_loss;
        }
        let los = (k_factor / (k_factor + 1.0)).sqrt();
        let scatter = (1.0 / (k_factor + 1.0)).sqrt();
        // CN(0,1): independent real and imaginary parts with variance 1/2.
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        let h_re = los + scatter * re / 2.0_f64.sqrt();
        let h_im = scatter * im / 2.0_f64.sqrt();
        mean_path_loss * (h_re * h_re + h_im * h_im)
    };
    Ok(ChannelState {
        h2_dl: draw(),
        h2_ul: draw(),
        round,
    })
}

/// Achievable rate of one link: `rho * B * log2(1 + h2 * p / N0)` bits/s.
pub fn link_rate(rho: f64, cfg: &NetworkConfig, h2: f64, p_tx: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::domain("rho", format!("{rho} not in (0, 1]")));
    }
    Ok(rho * cfg.bandwidth_b * (1.0 + h2 * p_tx / cfg.noise_n0).log2())
}

/// Transmit power needed to sustain `r_ul` on the uplink:
/// `(2^(r/(rho B)) - 1) * N0 / h2`. Inverse of [`link_rate`] in the power
/// argument.
pub fn uplink_power_for_rate(r_ul: f64, rho: f64, cfg: &NetworkConfig, h2_ul: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::domain("rho", format!("{rho} not in (0, 1]")));
    }
    if h2_ul <= 0.0 {
        return Err(Error::NoCoverage(format!(
            "uplink gain {h2_ul} cannot carry rate {r_ul}"
        )));
    }
    Ok((2.0_f64.powf(r_ul / (rho * cfg.bandwidth_b)) - 1.0) * cfg.noise_n0 / h2_ul)
}

/// Latency and energy of one device for one round at the given dropout rate
/// and bandwidth share.
///
/// A zero-rate link produces infinite latency components rather than an
/// error; see [`CostBreakdown::is_over_horizon`].
pub fn round_costs(
    drop_rate: f64,
    rho: f64,
    cfg: &NetworkConfig,
    dev: &DeviceProfile,
    ch: &ChannelState,
) -> Result<CostBreakdown> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::domain(
            "dropout rate",
            format!("{drop_rate} not in [0, 1)"),
        ));
    }
    let keep = 1.0 - drop_rate;
    let m_bits = keep * cfg.m_ori * cfg.bits_per_param_q;
    let c_cycles = keep * cfg.c_ori;

    let r_dl = link_rate(rho, cfg, ch.h2_dl, dev.p_dl)?;
    let r_ul = link_rate(rho, cfg, ch.h2_ul, dev.p_ul)?;

    let t_dl = if r_dl > 0.0 {
        m_bits / r_dl
    } else {
        f64::INFINITY
    };
    let t_ul = if r_ul > 0.0 {
        m_bits / r_ul
    } else {
        f64::INFINITY
    };
    let t_cmp = c_cycles * dev.data_size as f64 / dev.cpu_freq_f;

    let e_cmp = dev.cpu_const_omega * t_cmp * dev.cpu_freq_f.powi(3);
    let e_ul = if t_ul.is_finite() {
        dev.p_ul * t_ul
    } else {
        f64::INFINITY
    };

    Ok(CostBreakdown {
        t_dl,
        t_cmp,
        t_ul,
        t_total: t_dl + t_cmp + t_ul,
        e_ul,
        e_cmp,
        e_total: e_ul + e_cmp + dev.circuit_energy_xi,
    })
}

/// Dimensions of a layer, for FLOP accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv {
        /// Filter width J (square filters).
        filter: usize,
        /// Input feature map height.
        height: usize,
        /// Input feature map width.
        width: usize,
        /// Filters in this layer.
        out_ch: usize,
        /// Filters in the previous layer.
        in_ch: usize,
    },
    Fc {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerKind {
    /// FLOPs at the given dropout rate: `2 J^2 H W O_l O_{l-1} (1 - rate)`
    /// for convolutions, `2 N_{l-1} N_l (1 - rate)` for FC layers.
    pub fn flops(&self, drop_rate: f64) -> f64 {
        let keep = 1.0 - drop_rate;
        match *self {
            LayerKind::Conv {
                filter,
                height,
                width,
                out_ch,
                in_ch,
            } => 2.0 * (filter * filter * height * width * out_ch * in_ch) as f64 * keep,
            LayerKind::Fc { inputs, outputs } => 2.0 * (inputs * outputs) as f64 * keep,
        }
    }
}

/// Communication bits and compute FLOPs per client per round for the three
/// subnet-training schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    /// Bits per parameter assumed by the comparison (exposed because the
    /// transfer quantization is a deployment choice).
    pub bits_per_param: f64,
    /// Subnet transfer only: `q (1 - rate) m_ori`.
    pub feddrop_bits: f64,
    /// Subnet transfer plus a full gradient every `delta_r` rounds.
    pub prunefl_upload_bits: f64,
    /// Subnet transfer plus a 1-bit mask refresh every `delta_r` rounds.
    pub feddst_bits: f64,
    /// Per-layer FLOPs at the given dropout rate.
    pub layer_flops: Vec<f64>,
    pub total_flops: f64,
}

/// Average per-round overhead of FedDrop against the pruning baselines, all
/// at the same dropout rate.
pub fn overhead_report(
    drop_rate: f64,
    m_ori: f64,
    delta_r: usize,
    layers: &[LayerKind],
    bits_per_param: f64,
) -> Result<OverheadReport> {
    if delta_r == 0 {
        return Err(Error::domain("delta_r", "must be at least 1"));
    }
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::domain(
            "dropout rate",
            format!("{drop_rate} not in [0, 1)"),
        ));
    }
    let q = bits_per_param;
    let keep = 1.0 - drop_rate;
    let base = q * keep * m_ori;
    let layer_flops: Vec<f64> = layers.iter().map(|l| l.flops(drop_rate)).collect();
    Ok(OverheadReport {
        bits_per_param: q,
        feddrop_bits: base,
        prunefl_upload_bits: base + q / delta_r as f64 * m_ori,
        feddst_bits: base + m_ori / delta_r as f64,
        total_flops: layer_flops.iter().sum(),
        layer_flops,
    })
}

/// Defaults matching the reference simulation settings: noise density
/// `1e-13` W/Hz and 256 transmission bits per parameter. Bandwidth and the
/// latency cap are desk-scale choices.
pub fn default_network(m_ori: f64, c_ori: f64) -> NetworkConfig {
    NetworkConfig {
        bandwidth_b: 1.0e6,
        noise_n0: 1.0e-13,
        bits_per_param_q: 256.0,
        t_max_t0: 0.5,
        m_ori,
        c_ori,
    }
}
