use std::path::Path;

use bilevel_core::solver::{run_bilevel, SolverConfig};
use bilevel_core::{Oracle, OptimalSet, RunStatus, Trace};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, Steps};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_json, write_text};

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Everything `verify` needs besides the trace itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: RunStatus,
    /// Outer iterations performed (rows minus the initial one).
    pub iterations: usize,
    pub n_param: usize,
    pub solver: SolverConfig,
    /// Whether `mu`/`nu` came from the step size estimate.
    pub steps_estimated: bool,
    pub with_oracle: bool,
    pub final_p: Vec<f64>,
    pub final_dp_norm: f64,
    /// Distance of the last iterate to the oracle's optimal set.
    pub dist_to_pstar: Option<f64>,
    pub trace: String,
}

pub fn execute(exp: &Experiment, solver: &SolverConfig, oracle: Option<&Oracle>) -> CliResult<Trace> {
    Ok(run_bilevel(&exp.model, &exp.prox_p, &exp.prox_u, solver, &exp.p0(), &exp.u0(), oracle)?)
}

pub fn summarize(trace: &Trace, steps: Steps, set: Option<&OptimalSet>) -> Summary {
    let last = trace.last();
    Summary {
        status: trace.status,
        iterations: trace.rows.len() - 1,
        n_param: trace.meta.n_param,
        solver: trace.meta.solver.clone(),
        steps_estimated: steps.estimated,
        with_oracle: trace.meta.with_oracle,
        final_p: last.p.iter().copied().collect(),
        final_dp_norm: last.dp_norm,
        dist_to_pstar: set.map(|s| s.dist(&last.p)),
        trace: TRACE_FILE.into(),
    }
}

pub fn write_run(dir: &Path, trace: &Trace, summary: &Summary) -> CliResult<()> {
    ensure_dir(dir)?;
    write_text(&dir.join(TRACE_FILE), &trace.to_csv())?;
    write_json(&dir.join(SUMMARY_FILE), summary)
}

/// Noisy runs never stop early, so only divergence counts as failure for
/// them. Noiseless runs must converge.
pub fn outcome(summary: &Summary) -> CliResult<()> {
    let noisy = summary.solver.noise.is_some();
    match summary.status {
        RunStatus::Converged => Ok(()),
        RunStatus::MaxIter if noisy => Ok(()),
        RunStatus::MaxIter => Err(CliError::Analytic(format!(
            "not converged after {} outer iterations (last |dp| = {:e})",
            summary.iterations, summary.final_dp_norm
        ))),
        RunStatus::Diverged => Err(CliError::Analytic(format!(
            "diverged after {} outer iterations",
            summary.iterations
        ))),
    }
}

pub fn cmd_run(exp: &mut Experiment, noise: Option<f64>, kappa: Option<usize>) -> CliResult<()> {
    if let Some(k) = kappa {
        exp.cfg.solver.kappa = k;
    }
    if let Some(amplitude) = noise {
        let seed = exp.seed.unwrap_or(0);
        let spec = exp.cfg.solver.noise.get_or_insert(bilevel_core::NoiseSpec {
            amplitude,
            seed,
            distribution: bilevel_core::NoiseDistribution::UniformBall,
        });
        spec.amplitude = amplitude;
    }
    let steps = exp.steps()?;
    let solver = exp.solver_config(steps)?;
    let oracle = if exp.with_oracle { Some(exp.oracle()?) } else { None };
    let trace = execute(exp, &solver, oracle.as_ref())?;
    let set = match &oracle {
        Some(o) => Some(o.solve_outer_exact(&exp.prox_p, solver.nu)?),
        None => None,
    };
    let summary = summarize(&trace, steps, set.as_ref());
    write_run(&exp.out, &trace, &summary)?;
    println!(
        "{} after {} iterations; p = {:?}",
        summary.status.as_str(),
        summary.iterations,
        summary.final_p
    );
    outcome(&summary)
}
