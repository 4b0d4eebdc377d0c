//! `feddrop`: simulate and optimize federated dropout over a wireless edge.
//!
//! Subcommands:
//! - `optimize`  solve one round's rate/bandwidth allocation
//! - `simulate`  run the multi-round training loop
//! - `verify`    check the gradient-variance bounds numerically
//! - `sweep`     rerun training across an axis (latency cap, bandwidth, rate)
//! - `partition` show the non-IID shard layout
//!
//! Every run writes a frozen copy of the resolved config into the output
//! directory. The seed comes from `--seed`, else `FEDDROP_SEED`, else the
//! config file.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use feddrop_core::analysis::{mask_variance_check, variance_scaling_fit};
use feddrop_core::harness::output::{
    prepare_run_dir, write_allocation_csv, write_allocation_summary, write_history_csv,
    write_partition_csv, write_sweep_csv, write_verification_csv,
};
use feddrop_core::harness::{sweep, ExperimentConfig, ResolvedExperiment, SweepAxis};
use feddrop_core::optimizer::{solve, AllocationInstance};
use feddrop_core::rng::{stream_rng, Stream};
use feddrop_core::wireless::sample_rician;

#[derive(Parser)]
#[command(
    name = "feddrop",
    version,
    about = "Federated dropout simulator and allocator"
)]
struct Cli {
    /// Experiment config file (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed; overrides FEDDROP_SEED and the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    TMax,
    Bandwidth,
    GammaUniform,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one round's joint dropout-rate / bandwidth allocation.
    Optimize,
    /// Run the multi-round training loop and record the history.
    Simulate,
    /// Monte Carlo checks of the gradient-variance bounds.
    Verify {
        /// Dropout rates to probe.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.2, 0.3, 0.4, 0.5])]
        gammas: Vec<f64>,
        /// Mask draws per rate.
        #[arg(long, default_value_t = 5000)]
        masks: usize,
    },
    /// Rerun training across an axis with matched seeds.
    Sweep {
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Seeds; defaults to the root seed and the next four.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Partition the dataset across devices and report shard composition.
    Partition,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    } else if let Ok(env_seed) = std::env::var("FEDDROP_SEED") {
        config.seed = env_seed
            .parse()
            .context("FEDDROP_SEED must be an unsigned integer")?;
    }
    Ok(config)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let config = load_config(&cli)?;

    match &cli.command {
        Command::Optimize => {
            let resolved = ResolvedExperiment::prepare(&config)?;
            prepare_run_dir(&cli.out, &resolved.config)?;
            let sim = &resolved.simulation;
            let mut ch_rng = stream_rng(config.seed, Stream::Channels { round: 0 });
            let channels: Vec<_> = (0..sim.profiles.len())
                .map(|_| {
                    sample_rician(
                        config.network.kappa,
                        config.network.path_loss,
                        0,
                        &mut ch_rng,
                    )
                })
                .collect::<Result<_, _>>()?;
            let instance = AllocationInstance::from_channels(
                sim.network,
                &sim.profiles,
                &channels,
                config.training.theta,
            )?;
            let decision = solve(&instance, &resolved.solve_options)?;

            let mut alloc = File::create(cli.out.join("allocation.csv"))?;
            write_allocation_csv(&decision, &instance, &mut alloc)?;
            let mut summary = File::create(cli.out.join("summary.csv"))?;
            write_allocation_summary(&decision, &mut summary)?;

            println!(
                "mu={} iterations={} converged={} objective={:.6} residuals: primal={:.2e} comp={:.2e} stat={:.2e}",
                decision.mu,
                decision.iterations,
                decision.converged,
                decision.objective,
                decision.residuals.primal,
                decision.residuals.comp_slackness,
                decision.residuals.stationarity,
            );
            for k in 0..instance.n_devices() {
                println!(
                    "device {k}: gamma={:.4} rho={:.4}",
                    decision.gamma[k], decision.rho[k]
                );
            }
            println!("wrote {}", cli.out.join("allocation.csv").display());
        }
        Command::Simulate => {
            let resolved = ResolvedExperiment::prepare(&config)?;
            prepare_run_dir(&cli.out, &resolved.config)?;
            let history = resolved.run()?;
            let mut file = File::create(cli.out.join("history.csv"))?;
            write_history_csv(&history, &mut file)?;
            let mut consts = File::create(cli.out.join("constants.json"))?;
            writeln!(consts, "{}", serde_json_string(&resolved.constants)?)?;
            println!(
                "{} rounds, loss {:.6} -> {:.6}{}",
                history.rounds.len(),
                history.initial_loss,
                history.final_loss(),
                history
                    .halted
                    .as_ref()
                    .map(|h| format!(" (halted: {h})"))
                    .unwrap_or_default(),
            );
            println!("wrote {}", cli.out.join("history.csv").display());
        }
        Command::Verify { gammas, masks } => {
            let resolved = ResolvedExperiment::prepare(&config)?;
            prepare_run_dir(&cli.out, &resolved.config)?;
            let sim = &resolved.simulation;
            let params = &resolved.initial_params;
            let shard = sim.dataset.full_batch();

            let mut checks = Vec::new();
            let mut all_pass = true;
            for (i, &rate) in gammas.iter().enumerate() {
                let mut rng = stream_rng(config.seed, Stream::Trial { index: i as u64 });
                let check = mask_variance_check(
                    &sim.model,
                    params,
                    &shard,
                    rate,
                    *masks,
                    &resolved.constants,
                    &mut rng,
                )?;
                let ok = check.within_fnorm_bound && check.within_constants_bound;
                all_pass &= ok;
                println!(
                    "gamma={:.2}: variance={:.4e} fnorm_bound={:.4e} const_bound={:.4e} {}",
                    rate,
                    check.empirical_variance,
                    check.bound_fnorm,
                    check.bound_constants,
                    if ok { "PASS" } else { "FAIL" },
                );
                checks.push(check);
            }
            let mut fit_rng = stream_rng(config.seed, Stream::Trial { index: 1000 });
            let fit = variance_scaling_fit(
                &sim.model,
                params,
                &shard,
                gammas,
                *masks,
                &resolved.constants,
                &mut fit_rng,
            )?;
            println!(
                "scaling fit: slope={:.4e} R^2={:.6} {}",
                fit.slope,
                fit.r_squared,
                if fit.r_squared >= 0.99 {
                    "PASS"
                } else {
                    "WARN (expected on non-quadratic models)"
                },
            );
            let mut file = File::create(cli.out.join("verify.csv"))?;
            write_verification_csv(&checks, &fit, &resolved.constants, &mut file)?;
            println!("wrote {}", cli.out.join("verify.csv").display());
            if !all_pass {
                bail!("a variance bound check failed");
            }
        }
        Command::Sweep {
            axis,
            values,
            seeds,
        } => {
            prepare_run_dir(&cli.out, &config)?;
            let axis = match axis {
                AxisArg::TMax => SweepAxis::TMax,
                AxisArg::Bandwidth => SweepAxis::Bandwidth,
                AxisArg::GammaUniform => SweepAxis::GammaUniform,
            };
            let seeds = seeds
                .clone()
                .unwrap_or_else(|| (config.seed..config.seed + 5).collect());
            let points = sweep(&config, axis, values, &seeds)?;
            let axis_name = match axis {
                SweepAxis::TMax => "t_max",
                SweepAxis::Bandwidth => "bandwidth",
                SweepAxis::GammaUniform => "gamma_uniform",
            };
            for p in &points {
                println!(
                    "{axis_name}={}: median_rounds={} final_loss={:.6} mean_gamma={:.4} mean_rho={:.4}",
                    p.value, p.median_rounds_to_target, p.mean_final_loss, p.mean_gamma, p.mean_rho,
                );
            }
            let mut file = File::create(cli.out.join("sweep.csv"))?;
            write_sweep_csv(axis_name, &points, &mut file)?;
            println!("wrote {}", cli.out.join("sweep.csv").display());
        }
        Command::Partition => {
            let resolved = ResolvedExperiment::prepare(&config)?;
            prepare_run_dir(&cli.out, &resolved.config)?;
            let mut file = File::create(cli.out.join("partition.csv"))?;
            write_partition_csv(&resolved.simulation.dataset, &mut file)?;
            for (k, shard) in resolved.simulation.dataset.shards.iter().enumerate() {
                println!("device {k}: {} samples", shard.len());
            }
            println!("wrote {}", cli.out.join("partition.csv").display());
        }
    }
    Ok(())
}

fn serde_json_string<T: serde::Serialize>(value: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}
