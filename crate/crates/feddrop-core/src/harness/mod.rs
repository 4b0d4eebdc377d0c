//! Experiment harness: data partitioning, device fleets, sweeps, output.
//!
//! All randomness flows from the one root seed in the config through named
//! streams (dataset, partition, profiles, init, channels, masks), so two
//! runs with the same config produce byte-identical CSV output.

pub mod config;
pub mod output;

pub use config::{
    ConstantsSection, DatasetSection, DeviceSection, DynamicSection, EtaSection, ExperimentConfig,
    ModelSection, NetworkSection, PartitionSection, PolicySection, ResolvedExperiment,
    TrainingSection,
};

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::learning::Dataset;
use crate::protocol::TrainingHistory;
use crate::rng::{stream_rng, Stream};
use crate::wireless::DeviceProfile;

/// Split the sample indices over devices with per-class Dirichlet shares:
/// small `alpha` concentrates each class on a few devices (non-IID), large
/// `alpha` approaches proportional splitting. Every device ends up nonempty
/// (repaired by moving single samples from the largest shard).
pub fn dirichlet_partition(
    dataset: &Dataset,
    n_devices: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>> {
    if n_devices == 0 {
        return Err(Error::domain("n_devices", "need at least one device"));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::domain("alpha", format!("{alpha} must be positive")));
    }
    if dataset.n_samples() < n_devices {
        return Err(Error::domain(
            "dataset",
            format!(
                "{} samples cannot cover {} devices",
                dataset.n_samples(),
                n_devices
            ),
        ));
    }
    if n_devices == 1 {
        return Ok(vec![(0..dataset.n_samples()).collect()]);
    }

    let n_classes = dataset
        .samples
        .iter()
        .map(|s| s.label)
        .max()
        .map_or(0, |m| m + 1);
    let gamma_dist = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::domain("alpha", format!("bad Dirichlet parameter: {e}")))?;

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_devices];
    for class in 0..n_classes {
        let mut indices: Vec<usize> = dataset
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            continue;
        }
        // Shuffle so the slices are random subsets.
        for i in (1..indices.len()).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        // Dirichlet shares via normalized Gamma draws.
        let raw: Vec<f64> = (0..n_devices).map(|_| gamma_dist.sample(rng)).collect();
        let total: f64 = raw.iter().sum();
        let shares: Vec<f64> = if total > 0.0 {
            raw.iter().map(|g| g / total).collect()
        } else {
            vec![1.0 / n_devices as f64; n_devices]
        };
        // Largest-remainder apportionment of the class count.
        let n = indices.len();
        let mut counts: Vec<usize> = shares.iter().map(|s| (s * n as f64) as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut fractional: Vec<(usize, f64)> = shares
            .iter()
            .enumerate()
            .map(|(k, s)| (k, s * n as f64 - counts[k] as f64))
            .collect();
        fractional.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(k, _) in fractional.iter().take(n - assigned) {
            counts[k] += 1;
        }
        let mut cursor = 0;
        for (k, &count) in counts.iter().enumerate() {
            shards[k].extend(&indices[cursor..cursor + count]);
            cursor += count;
        }
    }

    // Repair empty devices by peeling one index off the largest shard.
    while let Some(empty) = shards.iter().position(|s| s.is_empty()) {
        let largest = (0..n_devices)
            .max_by_key(|&k| shards[k].len())
            .expect("devices exist");
        if shards[largest].len() <= 1 {
            return Err(Error::Contract(
                "cannot repair empty shards: not enough samples".into(),
            ));
        }
        let moved = shards[largest].pop().expect("largest shard is nonempty");
        shards[empty].push(moved);
    }
    for shard in shards.iter_mut() {
        shard.sort_unstable();
    }
    Ok(shards)
}

/// Fleet defaults that the reference parameter table does not pin down.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FleetDefaults {
    pub energy_budget: f64,
    pub circuit_energy: f64,
    /// Server-side transmit power as a multiple of the device's.
    pub downlink_power_factor: f64,
}

impl Default for FleetDefaults {
    fn default() -> Self {
        FleetDefaults {
            energy_budget: 0.1,
            circuit_energy: 0.01,
            downlink_power_factor: 10.0,
        }
    }
}

/// Draw device hardware from the reference ranges: CPU frequency
/// `Unif(0.7, 1) x 7e9` Hz, transmit power `Unif(0.3, 1) x 1e-2` W, CPU
/// energy constant `Unif(0.3, 1) x 1e-26`. Shard sizes fix the per-device
/// sample counts.
pub fn sample_device_profiles(
    shard_sizes: &[usize],
    defaults: &FleetDefaults,
    rng: &mut impl Rng,
) -> Vec<DeviceProfile> {
    shard_sizes
        .iter()
        .map(|&data_size| {
            let p_ul = (0.3 + 0.7 * rng.random::<f64>()) * 1e-2;
            DeviceProfile {
                cpu_freq_f: (0.7 + 0.3 * rng.random::<f64>()) * 7.0e9,
                cpu_const_omega: (0.3 + 0.7 * rng.random::<f64>()) * 1e-26,
                circuit_energy_xi: defaults.circuit_energy,
                data_size,
                energy_budget_e0: defaults.energy_budget,
                p_dl: defaults.downlink_power_factor * p_ul,
                p_ul,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Per-round latency cap.
    TMax,
    /// System bandwidth.
    Bandwidth,
    /// Uniform dropout rate (switches the policy to uniform).
    GammaUniform,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Rounds until the target loss, or the round budget if never reached.
    pub rounds_to_target: usize,
    pub final_loss: f64,
    pub mean_gamma: f64,
    pub mean_rho: f64,
    pub halted: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub median_rounds_to_target: f64,
    pub mean_final_loss: f64,
    pub mean_gamma: f64,
    pub mean_rho: f64,
    pub seeds: Vec<SeedOutcome>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn summarize(
    history: &TrainingHistory,
    target: Option<f64>,
    budget: usize,
    seed: u64,
) -> SeedOutcome {
    let rounds_to_target = target
        .and_then(|t| history.rounds_to_loss(t))
        .map(|r| r + 1)
        .unwrap_or(budget);
    let mut gamma_sum = 0.0;
    let mut rho_sum = 0.0;
    let mut count = 0usize;
    for round in &history.rounds {
        for d in &round.devices {
            if d.participated {
                gamma_sum += d.gamma;
                rho_sum += d.rho;
                count += 1;
            }
        }
    }
    SeedOutcome {
        seed,
        rounds_to_target,
        final_loss: history.final_loss(),
        mean_gamma: if count > 0 {
            gamma_sum / count as f64
        } else {
            0.0
        },
        mean_rho: if count > 0 {
            rho_sum / count as f64
        } else {
            0.0
        },
        halted: history.halted.is_some(),
    }
}

/// Run the experiment once per (axis value, seed) with matched seeds across
/// values, and summarize each value.
pub fn sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::domain("values", "sweep needs at least one value"));
    }
    if seeds.is_empty() {
        return Err(Error::domain("seeds", "sweep needs at least one seed"));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let mut config = base.clone();
        match axis {
            SweepAxis::TMax => config.network.t_max = value,
            SweepAxis::Bandwidth => config.network.bandwidth = value,
            SweepAxis::GammaUniform => {
                config.training.policy = config::PolicySection::UniformGamma { gamma: value }
            }
        }
        let mut outcomes = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut c = config.clone();
            c.seed = seed;
            let resolved = ResolvedExperiment::prepare(&c)?;
            let history = resolved.run()?;
            outcomes.push(summarize(
                &history,
                c.training.target_loss,
                c.training.rounds,
                seed,
            ));
        }
        let mut rounds: Vec<f64> = outcomes.iter().map(|o| o.rounds_to_target as f64).collect();
        let n = outcomes.len() as f64;
        points.push(SweepPoint {
            value,
            median_rounds_to_target: median(&mut rounds),
            mean_final_loss: outcomes.iter().map(|o| o.final_loss).sum::<f64>() / n,
            mean_gamma: outcomes.iter().map(|o| o.mean_gamma).sum::<f64>() / n,
            mean_rho: outcomes.iter().map(|o| o.mean_rho).sum::<f64>() / n,
            seeds: outcomes,
        });
    }
    Ok(points)
}

/// Training with per-round fleet churn: each round activates a random device
/// count in the configured range and resamples their hardware. The dataset
/// stays partitioned over the maximum fleet; inactive shards sit out the
/// round and the aggregation weights renormalize over the active ones.
pub fn run_training_dynamic(
    resolved: &ResolvedExperiment,
    dynamic: &DynamicSection,
) -> Result<TrainingHistory> {
    use crate::protocol::{RoundAllocation, Simulation, TrainingState};
    use crate::wireless::sample_rician;

    if dynamic.min_devices == 0 || dynamic.min_devices > dynamic.max_devices {
        return Err(Error::domain("dynamic", "bad device count range"));
    }
    if dynamic.max_devices != resolved.simulation.dataset.n_devices() {
        return Err(Error::domain(
            "dynamic",
            "max_devices must match the partitioned device count",
        ));
    }

    let cfg = &resolved.config;
    let full = resolved.simulation.dataset.full_batch();
    let initial_loss = resolved
        .simulation
        .model
        .forward_loss(&resolved.initial_params, &full)?;
    let mut history = TrainingHistory {
        initial_loss,
        rounds: Vec::new(),
        halted: None,
    };
    let mut state = TrainingState::new(resolved.initial_params.clone(), resolved.eta);

    for round in 0..cfg.training.rounds {
        let mut fleet_rng = stream_rng(
            cfg.seed,
            Stream::Trial {
                index: round as u64,
            },
        );
        let n_active = fleet_rng.random_range(dynamic.min_devices..=dynamic.max_devices);
        let mut order: Vec<usize> = (0..dynamic.max_devices).collect();
        for i in (1..order.len()).rev() {
            let j = fleet_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut active = vec![false; dynamic.max_devices];
        for &k in order.iter().take(n_active) {
            active[k] = true;
        }

        let shard_sizes: Vec<usize> = (0..dynamic.max_devices)
            .map(|k| resolved.simulation.dataset.shard_size(k))
            .collect();
        let profiles = sample_device_profiles(&shard_sizes, &cfg.devices.fleet(), &mut fleet_rng);
        let sim = Simulation {
            profiles,
            ..resolved.simulation.clone()
        };

        let mut ch_rng = stream_rng(
            cfg.seed,
            Stream::Channels {
                round: round as u64,
            },
        );
        let channels: Vec<_> = (0..dynamic.max_devices)
            .map(|_| sample_rician(cfg.network.kappa, cfg.network.path_loss, round, &mut ch_rng))
            .collect::<Result<_>>()?;

        // Allocate over the active subset only.
        let keep: Vec<usize> = (0..dynamic.max_devices).filter(|&k| active[k]).collect();
        let sub_profiles: Vec<_> = keep.iter().map(|&k| sim.profiles[k]).collect();
        let sub_channels: Vec<_> = keep.iter().map(|&k| channels[k]).collect();
        let sub_sim = Simulation {
            profiles: sub_profiles.clone(),
            ..sim.clone()
        };
        let sub_alloc = match sub_sim.allocate(
            &sub_channels,
            &resolved.policy,
            cfg.training.theta,
            resolved.infeasible,
            &resolved.solve_options,
            round,
        ) {
            Ok(a) => a,
            Err(Error::Infeasible(reason)) => {
                history.halted = Some(format!("round {round}: {reason}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let mut allocation = RoundAllocation {
            gamma: vec![0.0; dynamic.max_devices],
            rho: vec![0.0; dynamic.max_devices],
            participating: vec![false; dynamic.max_devices],
            converged: sub_alloc.converged,
            ideal: sub_alloc.ideal,
        };
        for (slot, &k) in keep.iter().enumerate() {
            allocation.gamma[k] = sub_alloc.gamma[slot];
            allocation.rho[k] = sub_alloc.rho[slot];
            allocation.participating[k] = sub_alloc.participating[slot];
        }

        let record = sim.run_round(&mut state, &channels, &allocation)?;
        let done = cfg
            .training
            .target_loss
            .is_some_and(|t| record.global_loss <= t);
        history.rounds.push(record);
        if done {
            break;
        }
    }
    Ok(history)
}
