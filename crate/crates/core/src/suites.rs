//! Sampled property suites: prox laws, condensation consistency, inner
//! contraction, value-function gradient and the gradient-error bound.
//! Each suite reports its worst slack; a suite passes when that slack is
//! above its tolerance.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::oracle::Oracle;
use crate::problem::{condense, eval_cost_rollout, grad_p, ParametrizedModel};
use crate::prox::ProxOperator;
use crate::sampling::stream;
use crate::solver::inner_step;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub samples: usize,
    pub failures: usize,
    pub worst_slack: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl SuiteResult {
    fn from_slacks(name: &str, slacks: &[f64], tolerance: f64) -> Self {
        let failures = slacks.iter().filter(|s| !(**s >= tolerance)).count();
        let worst = slacks.iter().copied().fold(f64::INFINITY, |a, b| if b.is_nan() { f64::NEG_INFINITY } else { a.min(b) });
        Self {
            name: name.into(),
            samples: slacks.len(),
            failures,
            worst_slack: worst,
            tolerance,
            pass: failures == 0,
        }
    }
}

/// A point around the domain of `op`, inside or out.
fn around<R: Rng + ?Sized>(op: &ProxOperator, rng: &mut R) -> DVector<f64> {
    let center = op.map_unit_cube(&vec![0.5; op.dim()]);
    let spread = op.domain_diameter().max(1.0);
    DVector::from_fn(op.dim(), |i, _| center[i] + spread * rng.random_range(-1.5..1.5))
}

/// Nonexpansiveness, perturbation bound, idempotence (pure projections) on
/// `pairs` samples and the prox optimality inequality on `pairs / 10`.
pub fn prox_suite(op: &ProxOperator, pairs: usize, seed: u64) -> Vec<SuiteResult> {
    let is_projection = !matches!(op, ProxOperator::BoxL1 { weight, .. } if weight.iter().any(|w| *w > 0.0));
    let mut nonexp = Vec::with_capacity(pairs);
    let mut perturb = Vec::with_capacity(pairs);
    let mut idem = Vec::new();
    let mut optimality = Vec::new();
    for i in 0..pairs as u64 {
        let mut rng = stream(seed, i);
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        let x1 = around(op, &mut rng);
        let x2 = around(op, &mut rng);
        let (y1, y2) = (op.apply(scale, &x1), op.apply(scale, &x2));
        nonexp.push((&x1 - &x2).norm() - (&y1 - &y2).norm());
        let eta = DVector::from_fn(op.dim(), |_, _| rng.random_range(-1.0..1.0)) * 10f64.powf(rng.random_range(-6.0..1.0));
        perturb.push(eta.norm() - (op.apply(scale, &(&x1 + &eta)) - &y1).norm());
        if is_projection {
            idem.push(-(op.apply(scale, &y1) - &y1).amax());
        }
        if i % 10 == 0 {
            let xi_prime = op.sample(&mut rng);
            let lhs = op.value(&y1) - op.value(&xi_prime);
            let rhs = -(&y1 - &xi_prime).dot(&(&y1 - &x1)) / scale;
            optimality.push(rhs - lhs);
        }
    }
    let mut out = vec![
        SuiteResult::from_slacks("prox_nonexpansive", &nonexp, -1e-12),
        SuiteResult::from_slacks("prox_perturbation", &perturb, -1e-12),
    ];
    if is_projection {
        out.push(SuiteResult::from_slacks("prox_idempotent", &idem, -1e-12));
    }
    out.push(SuiteResult::from_slacks("prox_optimality", &optimality, -1e-9));
    out
}

/// Condensed cost against the rollout on random `(p, u)`; slack is
/// `1e-9(1 + |cost|) − |difference|` shifted so that the tolerance is 0.
pub fn condensation_suite(
    model: &ParametrizedModel,
    prox_p: &ProxOperator,
    prox_u: &ProxOperator,
    count: usize,
    seed: u64,
) -> Result<SuiteResult> {
    let slacks = (0..count as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = stream(seed, i);
            let p = around(prox_p, &mut rng);
            let u = around(prox_u, &mut rng);
            let rollout = eval_cost_rollout(model, &p, &u)?;
            let condensed = condense(model, &p)?.value(&u);
            Ok(1e-9 * (1.0 + rollout.abs()) - (rollout - condensed).abs())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteResult::from_slacks("condensation", &slacks, 0.0))
}

/// `ω_u(u_k, p) ≤ ηᵏ ω_u(u₀, p)(1 + 1e-9)` for `k ≤ steps` from random
/// starts at random fixed `p`.
#[allow(clippy::too_many_arguments)]
pub fn contraction_suite(
    oracle: &Oracle,
    prox_p: &ProxOperator,
    mu: f64,
    eta: f64,
    steps: usize,
    starts: usize,
    seed: u64,
) -> Result<SuiteResult> {
    let slacks = (0..starts as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut rng = stream(seed, i);
            let p = prox_p.sample(&mut rng);
            let u_bar = oracle.u_bar(&p)?;
            let qp = condense(oracle.model(), &p)?;
            let mut u = around(oracle.prox_u(), &mut rng);
            let w0 = (&u - &u_bar).norm();
            let mut out = Vec::with_capacity(steps);
            for k in 1..=steps {
                u = inner_step(&qp, oracle.prox_u(), mu, &u);
                out.push(eta.powi(k as i32) * w0 * (1.0 + 1e-9) - (&u - &u_bar).norm());
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteResult::from_slacks("inner_contraction", &slacks.concat(), -1e-9))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSuite {
    pub result: SuiteResult,
    pub stable_points: usize,
    pub agreeing: usize,
    pub fraction: f64,
}

/// Exact `∇J̄` against central differences at points where the inner
/// active set is locally constant. Passes when at least `min_fraction` of
/// the stable points agree to `rel_tol` relative.
pub fn gradient_suite(
    oracle: &Oracle,
    prox_p: &ProxOperator,
    count: usize,
    rel_tol: f64,
    min_fraction: f64,
    seed: u64,
) -> Result<GradientSuite> {
    let rel = (0..count as u64)
        .into_par_iter()
        .map(|i| -> Result<Option<f64>> {
            let mut rng = stream(seed, i);
            let p = prox_p.sample(&mut rng);
            if !oracle.active_set_stable(&p)? {
                return Ok(None);
            }
            let g = oracle.grad_jbar(&p)?;
            let fd = oracle.fd_grad_jbar(&p)?;
            Ok(Some((&g - &fd).norm() / (1.0 + g.norm())))
        })
        .collect::<Result<Vec<_>>>()?;
    let errs: Vec<f64> = rel.into_iter().flatten().collect();
    let slacks: Vec<f64> = errs.iter().map(|e| rel_tol - e).collect();
    let agreeing = slacks.iter().filter(|s| **s >= 0.0).count();
    let fraction = if errs.is_empty() { 1.0 } else { agreeing as f64 / errs.len() as f64 };
    let mut result = SuiteResult::from_slacks("value_gradient", &slacks, 0.0);
    result.pass = fraction >= min_fraction;
    Ok(GradientSuite { result, stable_points: errs.len(), agreeing, fraction })
}

/// `|∇J̄(p) − ∇ₚJ(u, p)| ≤ Ϝ|ū(p) − u|` on random `(p, u) ∈ 𝒫 × 𝒰`.
pub fn gradient_error_suite(
    oracle: &Oracle,
    prox_p: &ProxOperator,
    f_bound: f64,
    count: usize,
    seed: u64,
) -> Result<SuiteResult> {
    let slacks = (0..count as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = stream(seed, i);
            let p = prox_p.sample(&mut rng);
            let u = oracle.prox_u().sample(&mut rng);
            let eval = oracle.evaluate(&p)?;
            let est = grad_p(oracle.model(), &p, &u)?;
            Ok(f_bound * (&eval.u_bar - &u).norm() - (&eval.grad - est).norm())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteResult::from_slacks("gradient_error_bound", &slacks, -1e-9))
}
