use bilevel_core::certify::{certify, Certificate};

use crate::config::Experiment;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_json};

pub const CERTIFICATE_FILE: &str = "certificate.json";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4e}"))
}

pub fn margin_table(cert: &Certificate) -> String {
    let c = &cert.constants;
    let mut out = format!(
        "mu = {:.6e}  nu = {:.6e}\neta = {:.6e}  lambda* = {:.6e}  F = {:.6e}\n\
         alpha0 = {:.6e}  gamma0 = {:.6e}  b2 = {:.6e}  j* = {:.6e}\n",
        c.mu, c.nu, c.eta, c.lambda_star, c.f_bound, c.alpha0, c.gamma0, c.b2, c.j_star
    );
    out.push_str(&format!(
        "{:>5} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>5}\n",
        "kappa", "gamma_kappa", "a", "1-g2*gk", "1-g0*g1*gk", "1-a", "full cycle", "pass"
    ));
    for row in &cert.margin_table {
        let m = &row.margins;
        out.push_str(&format!(
            "{:>5} {:>12.4e} {:>12.4e} {:>12} {:>12} {:>12.4e} {:>12} {:>5}\n",
            row.kappa,
            row.gamma_kappa,
            row.a,
            cell(m.gamma2_cycle),
            cell(m.gamma0_gamma1_cycle),
            m.a_margin,
            cell(m.full_cycle),
            if m.pass { "yes" } else { "no" }
        ));
    }
    match cert.k_min {
        Some(k) => out.push_str(&format!("K_min = {k}\n")),
        None => out.push_str(&format!("not certified for kappa <= {}\n", cert.kappa_max)),
    }
    out
}

pub fn build(exp: &Experiment) -> CliResult<Certificate> {
    let steps = exp.steps()?;
    let oracle = exp.oracle()?;
    Ok(certify(&oracle, &exp.prox_p, steps.mu, steps.nu, &exp.cfg.certify)?)
}

pub fn cmd_certify(exp: &Experiment) -> CliResult<()> {
    let cert = build(exp)?;
    ensure_dir(&exp.out)?;
    write_json(&exp.out.join(CERTIFICATE_FILE), &cert)?;
    print!("{}", margin_table(&cert));
    if cert.certified {
        Ok(())
    } else {
        Err(CliError::Analytic(format!(
            "small-gain conditions fail for every kappa <= {}",
            cert.kappa_max
        )))
    }
}
