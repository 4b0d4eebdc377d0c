//! CSV writers and the run-directory layout.
//!
//! Every run directory gets a frozen copy of the resolved config
//! (`config.json`) next to the data files, so results stay reproducible
//! from the directory alone.

use std::io::Write;
use std::path::Path;

use crate::analysis::{ScalingFit, VarianceCheck};
use crate::error::Result;
use crate::harness::{ExperimentConfig, SweepPoint};
use crate::learning::{AnalysisConstants, Dataset};
use crate::optimizer::{AllocationDecision, AllocationInstance};
use crate::protocol::TrainingHistory;

/// `history.csv`: one row per round per device plus one `global` row per
/// round.
pub fn write_history_csv(history: &TrainingHistory, out: &mut impl Write) -> Result<()> {
    writeln!(
        out,
        "round,scope,gamma,rho,t_dl,t_cmp,t_ul,t_total,e_ul,e_cmp,e_total,local_loss,\
         global_loss,grad_norm2,bottleneck_latency,over_deadline,alloc_converged"
    )?;
    for round in &history.rounds {
        for d in &round.devices {
            if !d.participated {
                writeln!(out, "{},{},,,,,,,,,,skipped,,,,,", round.round, d.device)?;
                continue;
            }
            let c = &d.costs;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},,,,,",
                round.round,
                d.device,
                d.gamma,
                d.rho,
                c.t_dl,
                c.t_cmp,
                c.t_ul,
                c.t_total,
                c.e_ul,
                c.e_cmp,
                c.e_total,
                d.local_loss.unwrap_or(f64::NAN),
            )?;
        }
        writeln!(
            out,
            "{},global,,,,,,,,,,,{},{},{},{},{}",
            round.round,
            round.global_loss,
            round.grad_norm2,
            round.bottleneck_latency,
            round.over_deadline,
            round.allocation_converged,
        )?;
    }
    Ok(())
}

/// `allocation.csv`: per-device decision with Lagrangian prices and slacks.
pub fn write_allocation_csv(
    decision: &AllocationDecision,
    instance: &AllocationInstance,
    out: &mut impl Write,
) -> Result<()> {
    writeln!(
        out,
        "device,gamma,rho,lambda,nu,t_total,e_total,slack_t,slack_e"
    )?;
    for k in 0..instance.n_devices() {
        let keep2 = 1.0 - decision.gamma[k];
        let t = instance.latency(k, keep2, decision.rho[k]);
        let e = instance.energy(k, keep2, decision.rho[k]);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            k,
            decision.gamma[k],
            decision.rho[k],
            decision.lambda[k],
            decision.nu[k],
            t,
            e,
            instance.network.t_max_t0 - t,
            instance.devices[k].profile.energy_budget_e0 - e,
        )?;
    }
    Ok(())
}

/// One-line run summary for the allocation solve.
pub fn write_allocation_summary(decision: &AllocationDecision, out: &mut impl Write) -> Result<()> {
    writeln!(
        out,
        "mu,iterations,converged,objective,primal_residual,comp_slackness,stationarity"
    )?;
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        decision.mu,
        decision.iterations,
        decision.converged,
        decision.objective,
        decision.residuals.primal,
        decision.residuals.comp_slackness,
        decision.residuals.stationarity,
    )?;
    Ok(())
}

/// `verify.csv`: variance checks per rate plus the scaling fit.
pub fn write_verification_csv(
    checks: &[VarianceCheck],
    fit: &ScalingFit,
    constants: &AnalysisConstants,
    out: &mut impl Write,
) -> Result<()> {
    writeln!(
        out,
        "gamma,n_masks,empirical_variance,std_err,bound_fnorm,bound_constants,\
         within_fnorm,within_constants,slope,r_squared,l_smooth,hessian_fnorm,weight_norm,sigma2"
    )?;
    for c in checks {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.rate,
            c.n_masks,
            c.empirical_variance,
            c.std_err,
            c.bound_fnorm,
            c.bound_constants,
            c.within_fnorm_bound,
            c.within_constants_bound,
            fit.slope,
            fit.r_squared,
            constants.l_smooth,
            constants.hessian_fnorm,
            constants.weight_norm,
            constants.sigma2,
        )?;
    }
    Ok(())
}

/// `sweep.csv`: one row per axis value.
pub fn write_sweep_csv(axis: &str, points: &[SweepPoint], out: &mut impl Write) -> Result<()> {
    writeln!(
        out,
        "axis,value,median_rounds_to_target,mean_final_loss,mean_gamma,mean_rho,seeds"
    )?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            axis,
            p.value,
            p.median_rounds_to_target,
            p.mean_final_loss,
            p.mean_gamma,
            p.mean_rho,
            p.seeds.len(),
        )?;
    }
    Ok(())
}

/// `partition.csv`: shard sizes and per-class counts.
pub fn write_partition_csv(dataset: &Dataset, out: &mut impl Write) -> Result<()> {
    let n_classes = dataset
        .samples
        .iter()
        .map(|s| s.label)
        .max()
        .map_or(0, |m| m + 1);
    let header: Vec<String> = ["device".to_string(), "size".to_string()]
        .into_iter()
        .chain((0..n_classes).map(|c| format!("class_{c}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (k, shard) in dataset.shards.iter().enumerate() {
        let mut counts = vec![0usize; n_classes];
        for &i in shard {
            counts[dataset.samples[i].label] += 1;
        }
        let row: Vec<String> = [k.to_string(), shard.len().to_string()]
            .into_iter()
            .chain(counts.iter().map(|c| c.to_string()))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Create the run directory and freeze the resolved config inside it.
pub fn prepare_run_dir(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.json"), config.to_json_pretty()?)?;
    Ok(())
}
