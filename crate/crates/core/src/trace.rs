//! Per-iteration records of a bilevel run and their CSV form.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIter,
    Diverged,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxIter => "max_iter",
            Self::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Init,
    Iterate,
    /// Last row of a run.
    Final(RunStatus),
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Init => "init",
            Self::Iterate => "iterate",
            Self::Final(s) => s.as_str(),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "init" => Self::Init,
            "iterate" => Self::Iterate,
            "converged" => Self::Final(RunStatus::Converged),
            "max_iter" => Self::Final(RunStatus::MaxIter),
            "diverged" => Self::Final(RunStatus::Diverged),
            _ => return None,
        })
    }
}

/// Row `ℓ`: iterate `pˡ` (and `uˡ` when kept in memory) with the
/// measurements of the step that produced it. Oracle columns are `None`
/// when no oracle was attached.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub ell: usize,
    pub p: DVector<f64>,
    pub u: Option<DVector<f64>>,
    pub dp_norm: f64,
    pub lambda_p: Option<f64>,
    pub cost_outer: Option<f64>,
    pub omega_u: Option<f64>,
    pub grad_err: Option<f64>,
    pub d_norm: f64,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub n_param: usize,
    pub solver: SolverConfig,
    pub with_oracle: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
    pub status: RunStatus,
}

fn fmt_num(out: &mut String, v: f64) {
    if v.is_finite() {
        let _ = write!(out, "{v:.16e}");
    } else {
        let _ = write!(out, "{v}");
    }
}

fn fmt_opt(out: &mut String, v: Option<f64>) {
    match v {
        Some(v) => fmt_num(out, v),
        None => out.push_str("NA"),
    }
}

pub fn csv_header(n_param: usize) -> String {
    let mut cols = vec!["ell".to_string()];
    cols.extend((0..n_param).map(|i| format!("p_{i}")));
    cols.extend(
        ["dp_norm", "lambda_p", "cost_outer", "omega_u", "grad_err", "d_norm", "status"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

impl Trace {
    pub fn to_csv(&self) -> String {
        rows_to_csv(self.meta.n_param, &self.rows)
    }

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("a trace has at least the initial row")
    }
}

pub fn rows_to_csv(n_param: usize, rows: &[TraceRow]) -> String {
    let mut out = csv_header(n_param);
    out.push('\n');
    for row in rows {
        let _ = write!(out, "{}", row.ell);
        for v in row.p.iter() {
            out.push(',');
            fmt_num(&mut out, *v);
        }
        out.push(',');
        fmt_num(&mut out, row.dp_norm);
        for v in [row.lambda_p, row.cost_outer, row.omega_u, row.grad_err] {
            out.push(',');
            fmt_opt(&mut out, v);
        }
        out.push(',');
        fmt_num(&mut out, row.d_norm);
        out.push(',');
        out.push_str(row.status.as_str());
        out.push('\n');
    }
    out
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("trace line {line}: {msg}"))
}

fn parse_num(line: usize, s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| parse_err(line, format!("not a number: {s:?}")))
}

fn parse_opt(line: usize, s: &str) -> Result<Option<f64>> {
    if s == "NA" {
        Ok(None)
    } else {
        parse_num(line, s).map(Some)
    }
}

/// Parses a trace CSV. Rows come back without `u`.
pub fn parse_csv(text: &str) -> Result<(usize, Vec<TraceRow>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty trace"))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 8 {
        return Err(parse_err(1, "too few columns"));
    }
    let n_param = cols.len() - 8;
    if header.trim() != csv_header(n_param) {
        return Err(parse_err(1, format!("unexpected header, expected {:?}", csv_header(n_param))));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let ln = idx + 1;
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != cols.len() {
            return Err(parse_err(ln, format!("expected {} fields, got {}", cols.len(), f.len())));
        }
        let ell = f[0].parse::<usize>().map_err(|_| parse_err(ln, "bad ell"))?;
        let p = (0..n_param)
            .map(|i| parse_num(ln, f[1 + i]))
            .collect::<Result<Vec<_>>>()?;
        let k = 1 + n_param;
        rows.push(TraceRow {
            ell,
            p: DVector::from_vec(p),
            u: None,
            dp_norm: parse_num(ln, f[k])?,
            lambda_p: parse_opt(ln, f[k + 1])?,
            cost_outer: parse_opt(ln, f[k + 2])?,
            omega_u: parse_opt(ln, f[k + 3])?,
            grad_err: parse_opt(ln, f[k + 4])?,
            d_norm: parse_num(ln, f[k + 5])?,
            status: RowStatus::parse(f[k + 6]).ok_or_else(|| parse_err(ln, format!("unknown status {:?}", f[k + 6])))?,
        });
    }
    if rows.is_empty() {
        return Err(parse_err(2, "no rows"));
    }
    Ok((n_param, rows))
}
