use bilevel_core::certify::estimate_f;
use bilevel_core::sampling::domain_samples;
use bilevel_core::suites::{
    condensation_suite, contraction_suite, gradient_error_suite, gradient_suite, prox_suite, SuiteResult,
};
use bilevel_core::condense;
use serde::Serialize;

use crate::config::Experiment;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_json};

pub const CHECK_FILE: &str = "check_report.json";

#[derive(Debug, Serialize)]
struct CheckReport {
    mu: f64,
    nu: f64,
    /// Sampled per-step contraction factor of the inner iteration.
    eta: f64,
    f_bound: f64,
    seed: u64,
    pass: bool,
    suites: Vec<SuiteResult>,
}

fn prefixed(prefix: &str, mut results: Vec<SuiteResult>) -> Vec<SuiteResult> {
    for r in &mut results {
        r.name = format!("{prefix}.{}", r.name);
    }
    results
}

pub fn cmd_check(exp: &Experiment) -> CliResult<()> {
    let opts = &exp.cfg.check;
    let seed = exp.check_seed();
    let steps = exp.steps()?;
    let oracle = exp.oracle()?;
    let grid = domain_samples(&exp.prox_p, exp.cfg.certify.lipschitz_samples.max(2));

    // The raw rate, not the certificate estimator: that one refuses η ≥ 1,
    // while here an oversized step must show up as a failed suite.
    let mut eta: f64 = 0.0;
    for p in &grid {
        let (lo, hi) = condense(&exp.model, p)?.eigen_extremes();
        eta = eta.max((1.0 - 2.0 * steps.mu * lo).abs()).max((1.0 - 2.0 * steps.mu * hi).abs());
    }
    let f_bound = estimate_f(&exp.model, &exp.prox_u, &grid)?;

    let mut suites = prefixed("prox_p", prox_suite(&exp.prox_p, opts.prox_pairs, seed));
    suites.extend(prefixed("prox_u", prox_suite(&exp.prox_u, opts.prox_pairs, seed.wrapping_add(1))));
    suites.push(condensation_suite(&exp.model, &exp.prox_p, &exp.prox_u, opts.condensation_samples, seed)?);
    suites.push(SuiteResult {
        name: "inner_contraction_rate".into(),
        samples: grid.len(),
        failures: usize::from(eta >= 1.0),
        worst_slack: 1.0 - eta,
        tolerance: 0.0,
        pass: eta < 1.0,
    });
    suites.push(contraction_suite(
        &oracle,
        &exp.prox_p,
        steps.mu,
        eta,
        opts.contraction_steps,
        opts.contraction_starts,
        seed,
    )?);
    suites.push(
        gradient_suite(&oracle, &exp.prox_p, opts.gradient_points, opts.gradient_rel_tol, opts.gradient_min_fraction, seed)?
            .result,
    );
    suites.push(gradient_error_suite(&oracle, &exp.prox_p, f_bound, opts.gradient_error_samples, seed)?);

    let pass = suites.iter().all(|s| s.pass);
    let report = CheckReport { mu: steps.mu, nu: steps.nu, eta, f_bound, seed, pass, suites };
    ensure_dir(&exp.out)?;
    write_json(&exp.out.join(CHECK_FILE), &report)?;
    for s in &report.suites {
        println!(
            "{:<28} {:>6} samples  worst slack {:>11.3e}  {}",
            s.name,
            s.samples,
            s.worst_slack,
            if s.pass { "pass" } else { "FAIL" }
        );
    }
    if pass {
        Ok(())
    } else {
        let failed: Vec<&str> = report.suites.iter().filter(|s| !s.pass).map(|s| s.name.as_str()).collect();
        Err(CliError::Analytic(format!("failed suites: {}", failed.join(", "))))
    }
}
