//! Parameter sweeps. Each point writes into its own directory; the
//! aggregate `sweep.csv` is written once all points are back.

use bilevel_core::certify::{gains_for_kappa, small_gain_check};
use bilevel_core::{NoiseDistribution, NoiseSpec, OptimalSet, Oracle};
use clap::ValueEnum;
use rayon::prelude::*;

use crate::certify::{build as build_certificate, CERTIFICATE_FILE};
use crate::config::{Experiment, Steps};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, num, opt_num, write_json, write_text};
use crate::run::{execute, summarize, write_run};

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    /// Certificate gains and convergence for each κ in the configured range.
    Kappa,
    /// Asymptotic distance plateau for each noise amplitude.
    Noise,
}

pub fn cmd_sweep(exp: &Experiment, mode: SweepMode) -> CliResult<()> {
    ensure_dir(&exp.out)?;
    let steps = exp.steps()?;
    let oracle = exp.oracle()?;
    let set = oracle.solve_outer_exact(&exp.prox_p, steps.nu)?;
    let csv = match mode {
        SweepMode::Kappa => kappa_sweep(exp, steps, &oracle, &set)?,
        SweepMode::Noise => noise_sweep(exp, steps, &oracle, &set)?,
    };
    write_text(&exp.out.join(SWEEP_FILE), &csv)?;
    print!("{csv}");
    Ok(())
}

fn kappa_sweep(exp: &Experiment, steps: Steps, oracle: &Oracle, set: &OptimalSet) -> CliResult<String> {
    let opts = &exp.cfg.sweep;
    if opts.kappa_from == 0 || opts.kappa_to < opts.kappa_from {
        return Err(CliError::Usage(format!(
            "sweep kappa range {}..={} is empty or starts at 0",
            opts.kappa_from, opts.kappa_to
        )));
    }
    let cert = build_certificate(exp)?;
    write_json(&exp.out.join(CERTIFICATE_FILE), &cert)?;
    let rows = (opts.kappa_from..=opts.kappa_to)
        .into_par_iter()
        .map(|kappa| -> CliResult<String> {
            let gains = gains_for_kappa(&cert.constants, kappa)?;
            let margins = small_gain_check(&cert.constants, &gains);
            let mut solver = exp.solver_config(steps)?;
            solver.kappa = kappa;
            solver.noise = None;
            let attached = exp.with_oracle.then_some(oracle);
            let trace = execute(exp, &solver, attached)?;
            write_run(&exp.out.join(format!("kappa_{kappa:04}")), &trace, &summarize(&trace, steps, Some(set)))?;
            let reached = trace.rows.iter().find(|r| set.dist(&r.p) <= opts.tol).map(|r| r.ell);
            Ok([
                kappa.to_string(),
                num(gains.gamma_kappa),
                num(gains.a),
                opt_num(margins.gamma2_cycle),
                opt_num(margins.gamma0_gamma1_cycle),
                num(margins.a_margin),
                opt_num(margins.full_cycle),
                margins.pass.to_string(),
                reached.map_or_else(|| "NA".into(), |l| l.to_string()),
                trace.status.as_str().into(),
                num(set.dist(&trace.last().p)),
            ]
            .join(","))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let header = "kappa,gamma_kappa,a,margin_gamma2,margin_gamma0_gamma1,margin_a,margin_full_cycle,\
                  small_gain_pass,iterations_to_tol,status,final_dist";
    Ok(csv(header, rows))
}

fn noise_sweep(exp: &Experiment, steps: Steps, oracle: &Oracle, set: &OptimalSet) -> CliResult<String> {
    let amplitudes = &exp.cfg.sweep.noise_amplitudes;
    if amplitudes.is_empty() || amplitudes.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(CliError::Usage("sweep noise_amplitudes must be nonempty and nonnegative".into()));
    }
    let base = exp.cfg.solver.noise.clone();
    let seed = exp.seed.or(base.as_ref().map(|n| n.seed)).unwrap_or(0);
    let distribution = base.map_or(NoiseDistribution::UniformBall, |n| n.distribution);
    let rows = amplitudes
        .par_iter()
        .enumerate()
        .map(|(i, &amplitude)| -> CliResult<String> {
            let mut solver = exp.solver_config(steps)?;
            solver.noise = Some(NoiseSpec { amplitude, seed, distribution: distribution.clone() })
                .filter(NoiseSpec::is_active);
            let attached = exp.with_oracle.then_some(oracle);
            let trace = execute(exp, &solver, attached)?;
            write_run(&exp.out.join(format!("noise_{i:03}")), &trace, &summarize(&trace, steps, Some(set)))?;
            let dists: Vec<f64> = trace.rows.iter().map(|r| set.dist(&r.p)).collect();
            let tail = (dists.len() / 10).max(1);
            let plateau = dists[dists.len() - tail..].iter().sum::<f64>() / tail as f64;
            let peak = dists.iter().copied().fold(0.0, f64::max);
            Ok([
                num(amplitude),
                solver.kappa.to_string(),
                num(plateau),
                num(peak),
                trace.status.as_str().into(),
            ]
            .join(","))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(csv("amplitude,kappa,plateau,max_dist,status", rows))
}

fn csv(header: &str, rows: Vec<String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}
