//! High-accuracy reference solutions: the exact inner minimizer `ū(p)`,
//! the reduced cost `J̄(p)`, its gradient and the outer optimal set.
//!
//! The inner solve is plain proximal gradient at step `1/(2λmax(H(p)))`
//! run to a fixed-point residual below `tol`. Starting from the projection
//! of zero makes `ū` a pure function of `p`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::problem::{condense, grad_p, CondensedQP, ParametrizedModel};
use crate::prox::ProxOperator;
use crate::sampling::stream;
use crate::solver::{inner_step, outer_step_perturbed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Inner fixed-point residual tolerance.
    pub tol: f64,
    /// Outer fixed-point residual `Λ` tolerance for the optimal set search.
    pub outer_tol: f64,
    pub max_iter: usize,
    pub max_outer_iter: usize,
    /// Step of the central-difference cross-check of `∇J̄`.
    pub fd_step: f64,
    pub multistart: usize,
    pub seed: u64,
    /// Endpoints closer than this are one minimizer.
    pub cluster_radius: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            outer_tol: 1e-10,
            max_iter: 1_000_000,
            max_outer_iter: 100_000,
            fd_step: 1e-5,
            multistart: 16,
            seed: 0,
            cluster_radius: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub u: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Oracle values at one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEval {
    pub u_bar: DVector<f64>,
    /// `J(ū, p) + U(ū)`.
    pub j_bar: f64,
    /// `∇J̄(p) = ∇ₚJ(ū(p), p)`.
    pub grad: DVector<f64>,
}

pub struct Oracle<'a> {
    model: &'a ParametrizedModel,
    prox_u: &'a ProxOperator,
    cfg: OracleConfig,
    start: DVector<f64>,
}

impl<'a> Oracle<'a> {
    pub fn new(model: &'a ParametrizedModel, prox_u: &'a ProxOperator, cfg: OracleConfig) -> Result<Self> {
        check_len("input penalty dimension", model.n_decision(), prox_u.dim())?;
        if !(cfg.tol > 0.0 && cfg.outer_tol > 0.0 && cfg.fd_step > 0.0) {
            return Err(Error::InvalidConfig("oracle tolerances must be positive".into()));
        }
        let start = prox_u.apply(1.0, &DVector::zeros(model.n_decision()));
        Ok(Self { model, prox_u, cfg, start })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ParametrizedModel {
        self.model
    }

    pub fn prox_u(&self) -> &ProxOperator {
        self.prox_u
    }

    /// Step `1/(2λmax(H))`, the largest standard safe step.
    pub fn inner_step_size(qp: &CondensedQP) -> f64 {
        1.0 / (2.0 * qp.eigen_extremes().1)
    }

    pub fn solve_inner_exact(&self, p: &DVector<f64>) -> Result<InnerSolution> {
        self.solve_inner_from(p, &self.start)
    }

    /// Inner solve from a given start; zero iterations when the start is
    /// already a fixed point.
    pub fn solve_inner_from(&self, p: &DVector<f64>, start: &DVector<f64>) -> Result<InnerSolution> {
        check_len("inner start", self.model.n_decision(), start.len())?;
        let qp = condense(self.model, p)?;
        let mu = Self::inner_step_size(&qp);
        let mut u = start.clone();
        let mut residual = f64::INFINITY;
        for it in 0..=self.cfg.max_iter {
            let next = inner_step(&qp, self.prox_u, mu, &u);
            residual = (&next - &u).norm();
            if residual <= self.cfg.tol {
                return Ok(InnerSolution { u, iterations: it, residual });
            }
            if !residual.is_finite() {
                break;
            }
            u = next;
        }
        Err(Error::OracleFailure { iterations: self.cfg.max_iter, residual })
    }

    pub fn evaluate(&self, p: &DVector<f64>) -> Result<OracleEval> {
        let sol = self.solve_inner_exact(p)?;
        let qp = condense(self.model, p)?;
        let j_bar = qp.value(&sol.u) + self.prox_u.value(&sol.u);
        let grad = grad_p(self.model, p, &sol.u)?;
        Ok(OracleEval { u_bar: sol.u, j_bar, grad })
    }

    pub fn u_bar(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.solve_inner_exact(p)?.u)
    }

    pub fn j_bar(&self, p: &DVector<f64>) -> Result<f64> {
        Ok(self.evaluate(p)?.j_bar)
    }

    pub fn grad_jbar(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(p)?.grad)
    }

    /// Central differences of `J̄` with step `fd_step`.
    pub fn fd_grad_jbar(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let h = self.cfg.fd_step;
        let mut probe = p.clone();
        let mut out = DVector::zeros(p.len());
        for i in 0..p.len() {
            probe[i] = p[i] + h;
            let plus = self.j_bar(&probe)?;
            probe[i] = p[i] - h;
            let minus = self.j_bar(&probe)?;
            probe[i] = p[i];
            out[i] = (plus - minus) / (2.0 * h);
        }
        Ok(out)
    }

    /// Whether the inner active set is the same at `p` and at `p ± fd_step·eᵢ`.
    pub fn active_set_stable(&self, p: &DVector<f64>) -> Result<bool> {
        let tol = 1e-9;
        let base = self.prox_u.active_pattern(&self.u_bar(p)?, tol);
        let mut probe = p.clone();
        for i in 0..p.len() {
            for s in [1.0, -1.0] {
                probe[i] = p[i] + s * self.cfg.fd_step;
                if self.prox_u.active_pattern(&self.u_bar(&probe)?, tol) != base {
                    return Ok(false);
                }
            }
            probe[i] = p[i];
        }
        Ok(true)
    }

    /// Exact outer fixed-point residual `Λ(p) = |T(p, 0) − p|`.
    pub fn lambda(&self, p: &DVector<f64>, prox_p: &ProxOperator, nu: f64) -> Result<f64> {
        let grad = self.grad_jbar(p)?;
        let zero = DVector::zeros(p.len());
        Ok((outer_step_perturbed(p, &grad, &zero, nu, prox_p) - p).norm())
    }

    /// Exact outer proximal gradient from `multistart` seeded starts until
    /// `Λ ≤ outer_tol`, then clustering of the endpoints.
    pub fn solve_outer_exact(&self, prox_p: &ProxOperator, nu: f64) -> Result<OptimalSet> {
        check_len("parameter penalty dimension", self.model.n_param(), prox_p.dim())?;
        if !(nu > 0.0) {
            return Err(Error::InvalidConfig("outer step must be positive".into()));
        }
        let starts: Vec<DVector<f64>> = (0..self.cfg.multistart.max(1) as u64)
            .map(|i| prox_p.sample(&mut stream(self.cfg.seed, i)))
            .collect();
        let runs = starts
            .par_iter()
            .map(|s| self.descend(s, prox_p, nu))
            .collect::<Result<Vec<_>>>()?;

        let mut endpoints = Vec::new();
        let mut unconverged = Vec::new();
        for (i, run) in runs.into_iter().enumerate() {
            if run.lambda <= self.cfg.outer_tol {
                endpoints.push((i, run));
            } else {
                unconverged.push(StartFailure { start: i, iterations: run.iterations, lambda: run.lambda });
            }
        }
        if endpoints.is_empty() {
            return Err(Error::OracleFailure {
                iterations: self.cfg.max_outer_iter,
                residual: unconverged.iter().map(|f| f.lambda).fold(f64::INFINITY, f64::min),
            });
        }
        endpoints.sort_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)));
        let mut candidates: Vec<Candidate> = Vec::new();
        for (_, run) in endpoints {
            let p = DVector::from_vec(run.p.clone());
            match candidates
                .iter_mut()
                .find(|c| (DVector::from_column_slice(&c.p) - &p).norm() <= self.cfg.cluster_radius)
            {
                Some(c) => c.starts += 1,
                None => candidates.push(Candidate { p: run.p, value: run.value, lambda: run.lambda, starts: 1 }),
            }
        }
        let j_star = candidates[0].value;
        Ok(OptimalSet {
            isolated: candidates.len() == 1,
            j_star,
            candidates,
            unconverged,
            cluster_radius: self.cfg.cluster_radius,
        })
    }

    fn descend(&self, start: &DVector<f64>, prox_p: &ProxOperator, nu: f64) -> Result<Descent> {
        let zero = DVector::zeros(start.len());
        let mut p = start.clone();
        let mut lambda = f64::INFINITY;
        let mut it = 0;
        while it < self.cfg.max_outer_iter {
            let grad = self.grad_jbar(&p)?;
            let next = outer_step_perturbed(&p, &grad, &zero, nu, prox_p);
            lambda = (&next - &p).norm();
            if lambda <= self.cfg.outer_tol {
                break;
            }
            p = next;
            it += 1;
        }
        let value = self.j_bar(&p)? + prox_p.value(&p);
        Ok(Descent { p: p.iter().copied().collect(), value, lambda, iterations: it })
    }
}

struct Descent {
    p: Vec<f64>,
    value: f64,
    lambda: f64,
    iterations: usize,
}

/// One cluster of converged multistart endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub p: Vec<f64>,
    /// `J̄(p) + P(p)`.
    pub value: f64,
    pub lambda: f64,
    pub starts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartFailure {
    pub start: usize,
    pub iterations: usize,
    pub lambda: f64,
}

/// Numerical approximation of the outer optimal set, sorted by value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalSet {
    pub candidates: Vec<Candidate>,
    pub j_star: f64,
    /// A single cluster; otherwise the set is flat or there are several
    /// local minimizers.
    pub isolated: bool,
    pub unconverged: Vec<StartFailure>,
    pub cluster_radius: f64,
}

impl OptimalSet {
    /// Candidates whose value is within `1e-9(1 + |j⋆|)` of the best.
    pub fn minimizers(&self) -> Vec<DVector<f64>> {
        let tol = 1e-9 * (1.0 + self.j_star.abs());
        self.candidates
            .iter()
            .filter(|c| c.value <= self.j_star + tol)
            .map(|c| DVector::from_column_slice(&c.p))
            .collect()
    }

    pub fn p_star(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.candidates[0].p)
    }

    /// Euclidean distance to the nearest minimizer.
    pub fn dist(&self, p: &DVector<f64>) -> f64 {
        self.minimizers()
            .iter()
            .map(|q| (p - q).norm())
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::linalg::dvec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_tracking_closed_forms() {
        let inst = instances::scalar_tracking();
        let oracle = Oracle::new(&inst.model, &inst.prox_u, OracleConfig::default()).unwrap();
        for &p in &[0.5, 1.0, 1.7, 2.0] {
            let ev = oracle.evaluate(&dvec(&[p])).unwrap();
            assert_abs_diff_eq!(ev.u_bar[0], -p / 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(ev.j_bar, p * p / 4.0, epsilon = 1e-12);
            assert_abs_diff_eq!(ev.grad[0], p / 2.0, epsilon = 1e-12);
        }
        let set = oracle.solve_outer_exact(&inst.prox_p, 1.0).unwrap();
        assert!(set.isolated);
        assert_abs_diff_eq!(set.p_star()[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(set.j_star, 0.0625, epsilon = 1e-12);
    }

    #[test]
    fn self_consistent_at_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = instances::random_instance(&mut rng, instances::Dims::small(), 1.0, 0.5);
        let oracle = Oracle::new(&inst.model, &inst.prox_u, OracleConfig::default()).unwrap();
        let p = dvec(&[0.3, -0.2]);
        let u = oracle.u_bar(&p).unwrap();
        let again = oracle.solve_inner_from(&p, &u).unwrap();
        assert_eq!(again.iterations, 0);
        assert_eq!(again.u, u);
    }

    #[test]
    fn inner_failure_reported() {
        let inst = instances::scalar_tracking();
        let cfg = OracleConfig { max_iter: 0, ..OracleConfig::default() };
        let oracle = Oracle::new(&inst.model, &inst.prox_u, cfg).unwrap();
        assert!(matches!(oracle.u_bar(&dvec(&[1.0])), Err(Error::OracleFailure { .. })));
    }

    #[test]
    fn flat_outer_set_not_isolated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = instances::freeze_parameter(&instances::random_affine_model(&mut rng, instances::Dims::small()));
        let prox_p = ProxOperator::symmetric_box(2, 1.0).unwrap();
        let prox_u = ProxOperator::symmetric_box(model.n_decision(), 5.0).unwrap();
        let oracle = Oracle::new(&model, &prox_u, OracleConfig::default()).unwrap();
        let set = oracle.solve_outer_exact(&prox_p, 1.0).unwrap();
        assert!(!set.isolated);
        assert_eq!(set.minimizers().len(), set.candidates.len());
    }

    #[test]
    fn vertex_instance_optimum_is_corner() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inst = instances::vertex_optimum_instance(&mut rng, instances::Dims::small());
        let oracle = Oracle::new(&inst.model, &inst.prox_u, OracleConfig::default()).unwrap();
        let set = oracle.solve_outer_exact(&inst.prox_p, 0.1).unwrap();
        let ProxOperator::Box { lo, .. } = &inst.prox_p else { panic!() };
        assert!(set.isolated);
        assert!((set.p_star() - lo).norm() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // Optimality of ū: the prox-gradient fixed point holds for every μ.
        #[test]
        fn u_bar_is_fixed_point(seed in 0u64..1000, mu_scale in 0.05f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = instances::random_instance(&mut rng, instances::Dims::small(), 1.0, 0.3);
            let oracle = Oracle::new(&inst.model, &inst.prox_u, OracleConfig::default()).unwrap();
            let p = inst.prox_p.sample(&mut rng);
            let u = oracle.u_bar(&p).unwrap();
            let qp = condense(&inst.model, &p).unwrap();
            let mu = mu_scale * Oracle::inner_step_size(&qp);
            prop_assert!((inner_step(&qp, &inst.prox_u, mu, &u) - &u).norm() <= 1e-10);
        }

        // Gradient of J̄ matches central differences away from active-set changes.
        #[test]
        fn grad_matches_fd(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = instances::random_instance(&mut rng, instances::Dims::small(), 1.0, 0.3);
            let oracle = Oracle::new(&inst.model, &inst.prox_u, OracleConfig::default()).unwrap();
            let p = inst.prox_p.sample(&mut rng);
            prop_assume!(oracle.active_set_stable(&p).unwrap());
            let g = oracle.grad_jbar(&p).unwrap();
            let fd = oracle.fd_grad_jbar(&p).unwrap();
            prop_assert!((&g - &fd).norm() <= 1e-6 * (1.0 + g.norm()), "{} vs {}", g, fd);
        }
    }
}
