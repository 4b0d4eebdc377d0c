//! Experiment configuration (JSON) and its resolution into runnable parts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dropout::{MaskMode, ParamVector};
use crate::error::{Error, Result};
use crate::learning::{
    estimate_constants, make_synthetic_dataset, read_dataset_csv, AnalysisConstants,
    ConstantsOptions, MlpSpec, Model, QuadraticModel,
};
use crate::optimizer::SolveOptions;
use crate::protocol::{
    AggregationMode, AllocationPolicy, InfeasiblePolicy, Simulation, TrainingHistory,
};
use crate::rng::{stream_rng, Stream};
use crate::wireless::NetworkConfig;

use super::{dirichlet_partition, sample_device_profiles, FleetDefaults};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelSection {
    Mlp { dims: Vec<usize> },
    Quadratic { dim: usize },
}

impl Default for ModelSection {
    fn default() -> Self {
        // Small enough that Hessian probes stay cheap (~500 parameters).
        ModelSection::Mlp {
            dims: vec![8, 16, 16, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSection {
    Synthetic {
        classes: usize,
        samples: usize,
        dim: usize,
    },
    Csv {
        path: String,
    },
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection::Synthetic {
            classes: 4,
            samples: 600,
            dim: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PartitionSection {
    Dirichlet {
        alpha: f64,
    },
    /// Contiguous even split, IID only if the dataset is shuffled.
    Even,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection::Dirichlet { alpha: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceSection {
    pub count: usize,
    pub energy_budget: f64,
    pub circuit_energy: f64,
    pub downlink_power_factor: f64,
}

impl Default for DeviceSection {
    fn default() -> Self {
        DeviceSection {
            count: 10,
            energy_budget: 0.1,
            circuit_energy: 0.01,
            downlink_power_factor: 10.0,
        }
    }
}

impl DeviceSection {
    pub fn fleet(&self) -> FleetDefaults {
        FleetDefaults {
            energy_budget: self.energy_budget,
            circuit_energy: self.circuit_energy,
            downlink_power_factor: self.downlink_power_factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSection {
    pub bandwidth: f64,
    pub noise: f64,
    pub bits_per_param: f64,
    pub t_max: f64,
    pub kappa: f64,
    pub path_loss: f64,
    /// Cycles per sample as a multiple of the model's forward FLOPs
    /// (forward plus backward heuristic).
    pub cycles_per_flop_factor: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            bandwidth: 1.0e6,
            noise: 1.0e-13,
            bits_per_param: 256.0,
            t_max: 0.05,
            kappa: 10.0,
            path_loss: 1.0e-3,
            cycles_per_flop_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
#[derive(Default)]
pub enum EtaSection {
    /// `1/(3 sqrt(T) L)` with L from the constants estimate.
    #[default]
    Auto,
    Fixed {
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
#[derive(Default)]
pub enum PolicySection {
    #[default]
    Optimized,
    UniformGamma {
        gamma: f64,
    },
    BandwidthAware,
    NoDropoutIdeal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub rounds: usize,
    pub target_loss: Option<f64>,
    pub eta: EtaSection,
    pub local_steps: usize,
    pub aggregation: AggregationKind,
    pub mask_mode: MaskMode,
    pub policy: PolicySection,
    pub theta: f64,
    pub infeasible: InfeasiblePolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    Gradient,
    LocalSgd,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            rounds: 100,
            target_loss: None,
            eta: EtaSection::Auto,
            local_steps: 1,
            aggregation: AggregationKind::Gradient,
            mask_mode: MaskMode::ExactCount,
            policy: PolicySection::Optimized,
            theta: 0.5,
            infeasible: InfeasiblePolicy::Halt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstantsSection {
    pub probes: usize,
    pub safety: f64,
    pub weight_samples: usize,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        ConstantsSection {
            probes: 32,
            safety: 1.5,
            weight_samples: 6,
        }
    }
}

/// Per-round fleet churn; device count varies in the range and hardware is
/// resampled each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicSection {
    pub min_devices: usize,
    pub max_devices: usize,
}

/// Top-level experiment description; every field has a default, so `{}` is a
/// valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub dataset: DatasetSection,
    pub partition: PartitionSection,
    pub devices: DeviceSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub constants: ConstantsSection,
    pub dynamic: Option<DynamicSection>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything needed to run: the simulation, the initial weights, the
/// learning rate, and the estimated constants (always computed so that
/// reports can cite them).
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    pub simulation: Simulation,
    pub initial_params: ParamVector,
    pub constants: AnalysisConstants,
    pub eta: f64,
    pub policy: AllocationPolicy,
    pub infeasible: InfeasiblePolicy,
    pub solve_options: SolveOptions,
}

impl ResolvedExperiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        let model = match &config.model {
            ModelSection::Mlp { dims } => Model::Mlp(MlpSpec::new(dims.clone())?),
            ModelSection::Quadratic { dim } => {
                let mut rng = stream_rng(config.seed, Stream::Init);
                Model::Quadratic(QuadraticModel::random_symmetric(*dim, &mut rng))
            }
        };

        let mut dataset = match &config.dataset {
            DatasetSection::Synthetic {
                classes,
                samples,
                dim,
            } => {
                if let Model::Mlp(spec) = &model {
                    if spec.input_dim() != *dim || spec.n_classes() != *classes {
                        return Err(Error::Config(format!(
                            "model expects {} features / {} classes, dataset provides {dim} / {classes}",
                            spec.input_dim(),
                            spec.n_classes()
                        )));
                    }
                }
                let mut rng = stream_rng(config.seed, Stream::Dataset);
                make_synthetic_dataset(*classes, *samples, *dim, &mut rng)?
            }
            DatasetSection::Csv { path } => {
                let file = std::fs::File::open(path)?;
                read_dataset_csv(file)?
            }
        };

        let n_devices = config.devices.count;
        dataset.shards = match &config.partition {
            PartitionSection::Dirichlet { alpha } => {
                let mut rng = stream_rng(config.seed, Stream::Partition);
                dirichlet_partition(&dataset, n_devices, *alpha, &mut rng)?
            }
            PartitionSection::Even => {
                let n = dataset.n_samples();
                if n < n_devices {
                    return Err(Error::domain("dataset", "fewer samples than devices"));
                }
                (0..n_devices)
                    .map(|k| (k * n / n_devices..(k + 1) * n / n_devices).collect())
                    .collect()
            }
        };
        dataset.validate_shards()?;

        let shard_sizes: Vec<usize> = (0..n_devices).map(|k| dataset.shard_size(k)).collect();
        let mut prof_rng = stream_rng(config.seed, Stream::Profiles);
        let profiles = sample_device_profiles(&shard_sizes, &config.devices.fleet(), &mut prof_rng);

        let network = NetworkConfig {
            bandwidth_b: config.network.bandwidth,
            noise_n0: config.network.noise,
            bits_per_param_q: config.network.bits_per_param,
            t_max_t0: config.network.t_max,
            m_ori: model.param_count() as f64,
            c_ori: config.network.cycles_per_flop_factor * model.forward_flops(),
        };
        network.validate()?;

        let mut const_rng = stream_rng(config.seed, Stream::Probe);
        let constants = estimate_constants(
            &model,
            &dataset,
            &ConstantsOptions {
                probes: config.constants.probes,
                safety: config.constants.safety,
                theta: config.training.theta,
                rounds: config.training.rounds,
                weight_samples: config.constants.weight_samples,
            },
            &mut const_rng,
        )?;
        let eta = match config.training.eta {
            EtaSection::Auto => constants.eta,
            EtaSection::Fixed { value } => value,
        };

        let mut init_rng = stream_rng(config.seed, Stream::Init);
        let initial_params = model.init_params(&mut init_rng);

        let aggregation = match config.training.aggregation {
            AggregationKind::Gradient => AggregationMode::Gradient,
            AggregationKind::LocalSgd => AggregationMode::LocalSgd {
                steps: config.training.local_steps,
            },
        };
        let policy = match config.training.policy {
            PolicySection::Optimized => AllocationPolicy::Optimized,
            PolicySection::UniformGamma { gamma } => AllocationPolicy::UniformGamma { gamma },
            PolicySection::BandwidthAware => AllocationPolicy::BandwidthAware,
            PolicySection::NoDropoutIdeal => AllocationPolicy::NoDropoutIdeal,
        };

        Ok(ResolvedExperiment {
            config: config.clone(),
            simulation: Simulation {
                model,
                dataset,
                profiles,
                network,
                aggregation,
                mask_mode: config.training.mask_mode,
                seed: config.seed,
            },
            initial_params,
            constants,
            eta,
            policy,
            infeasible: config.training.infeasible,
            solve_options: SolveOptions::default(),
        })
    }

    /// Run the training loop described by the config.
    pub fn run(&self) -> Result<TrainingHistory> {
        if let Some(dynamic) = &self.config.dynamic {
            return super::run_training_dynamic(self, dynamic);
        }
        self.simulation.run_training(
            self.initial_params.clone(),
            self.eta,
            self.config.training.rounds,
            self.config.training.target_loss,
            &self.policy,
            self.config.training.theta,
            self.infeasible,
            self.config.network.kappa,
            self.config.network.path_loss,
            &self.solve_options,
        )
    }
}
