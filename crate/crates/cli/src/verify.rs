use std::path::PathBuf;

use bilevel_core::certify::{verify_iss_trace, Certificate, IssReport, TraceParams};
use bilevel_core::trace::parse_csv;

use crate::certify::CERTIFICATE_FILE;
use crate::config::Globals;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, read_json, read_text, write_json};
use crate::run::{Summary, SUMMARY_FILE, TRACE_FILE};

pub const REPORT_FILE: &str = "iss_report.json";

pub struct VerifyPaths {
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub certificate: Option<PathBuf>,
}

/// Replays the checks from `trace.csv`, `summary.json` and
/// `certificate.json`. The config is not needed: the stored files are
/// self-contained.
pub fn cmd_verify(globals: &Globals, paths: VerifyPaths) -> CliResult<()> {
    let cfg = match &globals.config {
        Some(p) => Some(crate::config::load_config(p)?),
        None => None,
    };
    let out = globals.out_dir(cfg.as_ref());
    let trace_path = paths.trace.unwrap_or_else(|| out.join(TRACE_FILE));
    let summary_path = paths.summary.unwrap_or_else(|| {
        trace_path.parent().map_or_else(|| PathBuf::from(SUMMARY_FILE), |d| d.join(SUMMARY_FILE))
    });
    let cert_path = paths.certificate.unwrap_or_else(|| out.join(CERTIFICATE_FILE));

    let summary: Summary = read_json(&summary_path)?;
    let cert: Certificate = read_json(&cert_path)?;
    let (n_param, rows) = parse_csv(&read_text(&trace_path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", trace_path.display())))?;
    if n_param != summary.n_param {
        return Err(CliError::Usage(format!(
            "{} has {n_param} parameter columns, summary says {}",
            trace_path.display(),
            summary.n_param
        )));
    }
    let params = TraceParams {
        mu: summary.solver.mu,
        nu: summary.solver.nu,
        kappa: summary.solver.kappa,
    };
    let report = verify_iss_trace(&rows, params, &cert, None)?;
    ensure_dir(&out)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    print!("{}", report_table(&report));
    match report.verdict.as_str() {
        "pass" => Ok(()),
        "incomplete" => Err(CliError::Analytic(
            "trace lacks oracle columns; rerun with --with-oracle to verify".into(),
        )),
        _ => {
            let failed: Vec<&str> =
                report.checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
            Err(CliError::Analytic(format!("violated: {}", failed.join(", "))))
        }
    }
}

fn report_table(report: &IssReport) -> String {
    let mut out = format!(
        "kappa = {}  K_min = {}  certified = {}  verdict = {}\n",
        report.kappa,
        report.k_min.map_or_else(|| "none".into(), |k| k.to_string()),
        report.certified,
        report.verdict
    );
    for c in &report.checks {
        let status = match (&c.skipped, c.passed()) {
            (Some(why), _) => format!("skipped ({why})"),
            (None, true) => "ok".into(),
            (None, false) => format!("{} violations", c.violations),
        };
        let slack = c.worst_slack.map_or_else(|| "-".into(), |s| format!("{s:.3e}"));
        out.push_str(&format!("  {:<20} {:>7} rows  worst slack {:>11}  {status}\n", c.name, c.checked, slack));
    }
    out
}
