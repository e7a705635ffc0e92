//! Inner κ-step proximal gradient descent, the perturbed outer update and
//! the bilevel driver that interconnects them.
//!
//! One outer iteration at `pˡ`:
//!
//! 1. condense at `pˡ`;
//! 2. `uˡ⁺¹` = κ inner steps warm-started from `uˡ`;
//! 3. estimate `∇ₚJ(uˡ⁺¹, pˡ)`;
//! 4. `pˡ⁺¹ = prox_{νP}[pˡ − ν(estimate + d)]`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::oracle::{Oracle, OracleConfig, OracleEval};
use crate::problem::{condense, grad_p, CondensedQP, ParametrizedModel};
use crate::prox::ProxOperator;
use crate::sampling::{domain_samples, uniform_ball};
use crate::trace::{RowStatus, RunStatus, Trace, TraceMeta, TraceRow};

/// Iterates beyond this norm abort the run as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub mu: f64,
    pub nu: f64,
    /// `max_p 2 λmax(H(p))` over the sample grid.
    pub lipschitz_u: f64,
    /// Empirical Lipschitz constant of `∇J̄`, after the safety factor.
    pub lipschitz_p: f64,
}

/// Safety factor applied to the sampled Lipschitz constant of `∇J̄`.
pub const OUTER_LIPSCHITZ_SAFETY: f64 = 2.0;

/// Step sizes from sampled Lipschitz constants over the domain of `P`.
///
/// `μ = 1 / max 2λmax(H(p))`; `ν = 1 / (2 · max sampled difference quotient
/// of ∇J̄)`. When `∇J̄` is constant on the samples, `ν = 1`.
pub fn step_sizes(
    model: &ParametrizedModel,
    prox_p: &ProxOperator,
    prox_u: &ProxOperator,
    grid: usize,
    oracle_cfg: &OracleConfig,
) -> Result<StepSizes> {
    check_len("parameter penalty dimension", model.n_param(), prox_p.dim())?;
    if grid < 2 {
        return Err(Error::InvalidConfig("step size grid needs at least 2 points".into()));
    }
    let points = domain_samples(prox_p, grid);
    let mut lipschitz_u: f64 = 0.0;
    for p in &points {
        let (lo, hi) = condense(model, p)?.eigen_extremes();
        if lo <= 0.0 {
            return Err(Error::Certification(format!(
                "H(p) is not positive definite (smallest eigenvalue {lo:e})"
            )));
        }
        lipschitz_u = lipschitz_u.max(2.0 * hi);
    }

    let oracle = Oracle::new(model, prox_u, oracle_cfg.clone())?;
    let grads = points
        .par_iter()
        .map(|p| oracle.grad_jbar(p))
        .collect::<Result<Vec<_>>>()?;
    let mut quotient: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let dp = (&points[i] - &points[j]).norm();
            if dp > 0.0 {
                quotient = quotient.max((&grads[i] - &grads[j]).norm() / dp);
            }
        }
    }
    let lipschitz_p = OUTER_LIPSCHITZ_SAFETY * quotient;
    Ok(StepSizes {
        mu: 1.0 / lipschitz_u,
        nu: if lipschitz_p > 0.0 { 1.0 / lipschitz_p } else { 1.0 },
        lipschitz_u,
        lipschitz_p,
    })
}

/// One proximal gradient step on the inner problem.
pub fn inner_step(qp: &CondensedQP, prox_u: &ProxOperator, mu: f64, u: &DVector<f64>) -> DVector<f64> {
    let trial = u - qp.grad(u) * mu;
    prox_u.apply(mu, &trial)
}

/// `κ` inner steps at fixed parameter.
pub fn run_inner(
    qp: &CondensedQP,
    prox_u: &ProxOperator,
    mu: f64,
    kappa: usize,
    u0: &DVector<f64>,
) -> Result<DVector<f64>> {
    if kappa == 0 {
        return Err(Error::InvalidConfig("kappa must be at least 1".into()));
    }
    let mut u = inner_step(qp, prox_u, mu, u0);
    for _ in 1..kappa {
        u = inner_step(qp, prox_u, mu, &u);
    }
    Ok(u)
}

/// `T_ν(p, d) = prox_{νP}[p − ν(grad + d)]`.
pub fn outer_step_perturbed(
    p: &DVector<f64>,
    grad: &DVector<f64>,
    d: &DVector<f64>,
    nu: f64,
    prox_p: &ProxOperator,
) -> DVector<f64> {
    let trial = p - (grad + d) * nu;
    prox_p.apply(nu, &trial)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseDistribution {
    /// Uniform in the ball of radius `amplitude`.
    UniformBall,
    /// `amplitude · direction / |direction|` at every step.
    ConstantVector { direction: Vec<f64> },
}

/// Disturbance injected into the outer gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_distribution")]
    pub distribution: NoiseDistribution,
}

fn default_distribution() -> NoiseDistribution {
    NoiseDistribution::UniformBall
}

impl NoiseSpec {
    pub fn is_active(&self) -> bool {
        self.amplitude > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub mu: f64,
    pub nu: f64,
    pub kappa: usize,
    pub max_outer: usize,
    pub stop_tol: f64,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// Warm start the inner loop from the previous iterate. Disabling it
    /// restarts every outer step from the projection of zero (ablation).
    #[serde(default = "yes")]
    pub warm_start: bool,
}

fn yes() -> bool {
    true
}

impl SolverConfig {
    pub fn new(mu: f64, nu: f64, kappa: usize) -> Self {
        Self {
            mu,
            nu,
            kappa,
            max_outer: 10_000,
            stop_tol: 1e-10,
            noise: None,
            warm_start: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidConfig(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidConfig(format!("nu must be positive, got {}", self.nu)));
        }
        if self.kappa == 0 {
            return Err(Error::InvalidConfig("kappa must be at least 1".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidConfig("stop_tol must be nonnegative".into()));
        }
        if let Some(noise) = &self.noise {
            if !(noise.amplitude >= 0.0 && noise.amplitude.is_finite()) {
                return Err(Error::InvalidConfig("noise amplitude must be nonnegative".into()));
            }
            if let NoiseDistribution::ConstantVector { direction } = &noise.distribution {
                if direction.iter().map(|v| v * v).sum::<f64>() == 0.0 {
                    return Err(Error::InvalidConfig("constant noise direction must be nonzero".into()));
                }
            }
        }
        Ok(())
    }

    fn active_noise(&self) -> Option<&NoiseSpec> {
        self.noise.as_ref().filter(|n| n.is_active())
    }
}

struct NoiseSource {
    spec: NoiseSpec,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    fn new(spec: &NoiseSpec) -> Self {
        Self {
            spec: spec.clone(),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
        }
    }

    fn draw(&mut self, dim: usize) -> Result<DVector<f64>> {
        match &self.spec.distribution {
            NoiseDistribution::UniformBall => Ok(uniform_ball(&mut self.rng, dim, self.spec.amplitude)),
            NoiseDistribution::ConstantVector { direction } => {
                check_len("noise direction", dim, direction.len())?;
                let v = DVector::from_column_slice(direction);
                Ok(&v * (self.spec.amplitude / v.norm()))
            }
        }
    }
}

/// Oracle measurements for one trace row.
struct RowMeasures {
    lambda_p: f64,
    cost_outer: f64,
    omega_u: f64,
    grad_err: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn measure(
    oracle: &Oracle,
    prox_p: &ProxOperator,
    nu: f64,
    at: &OracleEval,
    p: &DVector<f64>,
    prev: &OracleEval,
    u: &DVector<f64>,
    estimate: Option<&DVector<f64>>,
) -> RowMeasures {
    let _ = oracle;
    let zero = DVector::zeros(p.len());
    let exact_step = outer_step_perturbed(p, &at.grad, &zero, nu, prox_p);
    RowMeasures {
        lambda_p: (exact_step - p).norm(),
        cost_outer: at.j_bar + prox_p.value(p),
        omega_u: (u - &prev.u_bar).norm(),
        grad_err: estimate.map(|g| (g - &prev.grad).norm()),
    }
}

/// Runs the bilevel iteration. With an oracle attached every row carries
/// `Λ(p)`, `J̄(p) + P(p)`, `ω_u` and the gradient-estimate error.
///
/// Row `ℓ` holds the iterate `(pˡ, uˡ)` and the quantities of the step that
/// produced it: `|Δpˡ| = |pˡ − pˡ⁻¹|`, `ω_u = |uˡ − ū(pˡ⁻¹)|`, the error of
/// the gradient estimate used at `pˡ⁻¹`, and the injected `|d|`. Row 0 uses
/// `p⁻¹ := p⁰`.
///
/// With active noise the run always uses the full `max_outer` budget, since
/// the fixed-point residual is not a convergence signal under persistent
/// disturbances.
pub fn run_bilevel(
    model: &ParametrizedModel,
    prox_p: &ProxOperator,
    prox_u: &ProxOperator,
    cfg: &SolverConfig,
    p0: &DVector<f64>,
    u0: &DVector<f64>,
    oracle: Option<&Oracle>,
) -> Result<Trace> {
    cfg.validate()?;
    check_len("initial parameter", model.n_param(), p0.len())?;
    check_len("initial input", model.n_decision(), u0.len())?;
    check_len("parameter penalty dimension", model.n_param(), prox_p.dim())?;
    check_len("input penalty dimension", model.n_decision(), prox_u.dim())?;

    let mut noise = cfg.active_noise().map(NoiseSource::new);
    let cold_start = prox_u.apply(cfg.mu, &DVector::zeros(model.n_decision()));

    let mut p = p0.clone();
    let mut u = u0.clone();
    let mut prev_eval = match oracle {
        Some(o) => Some(o.evaluate(&p)?),
        None => None,
    };
    let mut rows = Vec::with_capacity(cfg.max_outer.min(100_000) + 1);
    let first = prev_eval
        .as_ref()
        .map(|ev| measure(oracle.unwrap(), prox_p, cfg.nu, ev, &p, ev, &u, None));
    rows.push(TraceRow {
        ell: 0,
        p: p.clone(),
        u: Some(u.clone()),
        dp_norm: 0.0,
        lambda_p: first.as_ref().map(|m| m.lambda_p),
        cost_outer: first.as_ref().map(|m| m.cost_outer),
        omega_u: first.as_ref().map(|m| m.omega_u),
        grad_err: None,
        d_norm: 0.0,
        status: RowStatus::Init,
    });

    let mut status = RunStatus::MaxIter;
    for ell in 0..cfg.max_outer {
        let qp = condense(model, &p)?;
        let start = if cfg.warm_start { &u } else { &cold_start };
        let u_next = run_inner(&qp, prox_u, cfg.mu, cfg.kappa, start)?;
        let estimate = grad_p(model, &p, &u_next)?;
        let d = match noise.as_mut() {
            Some(src) => src.draw(model.n_param())?,
            None => DVector::zeros(model.n_param()),
        };
        let p_next = outer_step_perturbed(&p, &estimate, &d, cfg.nu, prox_p);

        let finite = p_next.iter().chain(u_next.iter()).all(|v| v.is_finite());
        if !finite || p_next.norm() > DIVERGENCE_NORM || u_next.norm() > DIVERGENCE_NORM {
            status = RunStatus::Diverged;
            break;
        }

        let dp_norm = (&p_next - &p).norm();
        let inner_residual = (inner_step(&qp, prox_u, cfg.mu, &u_next) - &u_next).norm();

        let measures = match (oracle, prev_eval.as_ref()) {
            (Some(o), Some(prev)) => {
                let at = o.evaluate(&p_next)?;
                let m = measure(o, prox_p, cfg.nu, &at, &p_next, prev, &u_next, Some(&estimate));
                prev_eval = Some(at);
                Some(m)
            }
            _ => None,
        };
        rows.push(TraceRow {
            ell: ell + 1,
            p: p_next.clone(),
            u: Some(u_next.clone()),
            dp_norm,
            lambda_p: measures.as_ref().map(|m| m.lambda_p),
            cost_outer: measures.as_ref().map(|m| m.cost_outer),
            omega_u: measures.as_ref().map(|m| m.omega_u),
            grad_err: measures.as_ref().and_then(|m| m.grad_err),
            d_norm: d.norm(),
            status: RowStatus::Iterate,
        });
        p = p_next;
        u = u_next;

        if noise.is_none() && dp_norm <= cfg.stop_tol && inner_residual <= cfg.stop_tol {
            status = RunStatus::Converged;
            break;
        }
    }
    if let Some(last) = rows.last_mut() {
        if last.ell > 0 {
            last.status = RowStatus::Final(status);
        }
    }

    Ok(Trace {
        meta: TraceMeta {
            n_param: model.n_param(),
            solver: cfg.clone(),
            with_oracle: oracle.is_some(),
        },
        rows,
        status,
    })
}
