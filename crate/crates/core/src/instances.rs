//! Reference and randomly generated problem instances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg::{dvec, sym_eig_extremes};
use crate::problem::{condense, grad_p, special_case, AffineDynamics, ParametrizedModel, Weights};
use crate::prox::ProxOperator;

/// A model together with the outer and inner penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub model: ParametrizedModel,
    pub prox_p: ProxOperator,
    pub prox_u: ProxOperator,
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// `J(u, p) = ½(u + p)² + ½u²`: one step, `x₁ = u + p`, only the terminal
/// state and the input are penalized.
pub fn scalar_tracking_model() -> ParametrizedModel {
    special_case(
        scalar(0.0),
        scalar(1.0),
        scalar(1.0),
        Weights { q: scalar(0.0), r: scalar(1.0), s: scalar(1.0) },
        1,
        dvec(&[0.0]),
    )
    .expect("scalar tracking model is valid")
}

/// Scalar tracking with `P = box [0.5, 2]`, `U = box [−10, 10]`. The
/// optimum `p⋆ = 0.5` sits on the lower bound with `J̄(p⋆) = 1/16`.
pub fn scalar_tracking() -> Instance {
    Instance {
        model: scalar_tracking_model(),
        prox_p: ProxOperator::new_box(dvec(&[0.5]), dvec(&[2.0])).unwrap(),
        prox_u: ProxOperator::new_box(dvec(&[-10.0]), dvec(&[10.0])).unwrap(),
    }
}

/// Scalar tracking with `P = box [−2, 2]`, so the optimum `p⋆ = 0` is
/// interior.
pub fn scalar_tracking_interior() -> Instance {
    Instance {
        prox_p: ProxOperator::new_box(dvec(&[-2.0]), dvec(&[2.0])).unwrap(),
        ..scalar_tracking()
    }
}

/// `J(u, p) = ½(2c − 1)|u|² + ½|u + p|²`, so `H(p) = c·I` for every `p`.
/// Needs `c > ½`.
pub fn isotropic_model(c: f64, dim: usize) -> ParametrizedModel {
    assert!(c > 0.5, "isotropic model needs c > 1/2");
    let id = DMatrix::identity(dim, dim);
    special_case(
        DMatrix::zeros(dim, dim),
        id.clone(),
        id.clone(),
        Weights { q: DMatrix::zeros(dim, dim), r: &id * (2.0 * c - 1.0), s: id },
        1,
        DVector::zeros(dim),
    )
    .expect("isotropic model is valid")
}

/// The same model with every parameter coefficient set to zero.
pub fn freeze_parameter(model: &ParametrizedModel) -> ParametrizedModel {
    let mut dynamics = model.dynamics().clone();
    for k in 1..dynamics.a.len() {
        dynamics.a[k].fill(0.0);
        dynamics.b[k].fill(0.0);
        dynamics.e[k].fill(0.0);
    }
    ParametrizedModel::new(dynamics, model.weights().clone(), model.horizon(), model.x0().clone())
        .expect("freezing keeps the model valid")
}

/// Dimensions of a random instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn small() -> Self {
        Self { n: 2, m: 1, l: 2, horizon: 3 }
    }

    pub fn medium() -> Self {
        Self { n: 4, m: 2, l: 3, horizon: 10 }
    }
}

fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Stable-ish `A` with spectral norm at most `target`.
fn random_state_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize, target: f64) -> DMatrix<f64> {
    let a = uniform_matrix(rng, n, n, 1.0);
    let norm = a.clone().svd(false, false).singular_values.max();
    if norm > 0.0 {
        a * (target / norm)
    } else {
        a
    }
}

fn random_weights<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Weights {
    let lq = uniform_matrix(rng, n, n, 1.0);
    let lr = uniform_matrix(rng, m, m, 0.5);
    let q = lq.transpose() * &lq + DMatrix::identity(n, n) * 0.1;
    let r = lr.transpose() * &lr + DMatrix::identity(m, m) * 0.5;
    Weights { s: q.clone(), q, r }
}

/// Random model with affine dependence of `A`, `B` and `e` on `p`.
pub fn random_affine_model<R: Rng + ?Sized>(rng: &mut R, dims: Dims) -> ParametrizedModel {
    let Dims { n, m, l, horizon } = dims;
    let mut a = vec![random_state_matrix(rng, n, 0.9)];
    let mut b = vec![uniform_matrix(rng, n, m, 1.0)];
    let mut e = vec![DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5))];
    for _ in 0..l {
        a.push(uniform_matrix(rng, n, n, 0.05));
        b.push(uniform_matrix(rng, n, m, 0.1));
        e.push(DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5)));
    }
    let weights = random_weights(rng, n, m);
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    ParametrizedModel::new(AffineDynamics { a, b, e }, weights, horizon, x0)
        .expect("random affine model is valid")
}

/// Random model where `p` enters through `E p` only.
pub fn random_special_case_model<R: Rng + ?Sized>(rng: &mut R, dims: Dims) -> ParametrizedModel {
    let Dims { n, m, l, horizon } = dims;
    let a = random_state_matrix(rng, n, 0.9);
    let b = uniform_matrix(rng, n, m, 1.0);
    let e = uniform_matrix(rng, n, l, 1.0);
    let weights = random_weights(rng, n, m);
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    special_case(a, b, e, weights, horizon, x0).expect("random special case model is valid")
}

/// Unconstrained inner minimizer `−(2H)⁻¹ g`.
fn unconstrained_inner(model: &ParametrizedModel, p: &DVector<f64>) -> DVector<f64> {
    let qp = condense(model, p).expect("dimensions match");
    let chol = (&qp.h * 2.0).cholesky().expect("H is positive definite");
    -chol.solve(&qp.g)
}

/// Random additive-parameter instance whose outer optimum is the lower
/// corner of a box `P` with every bound strongly active, and whose inner box
/// `U` is never active on `P`.
///
/// Without inner constraints `J̄(p)` is a convex quadratic with gradient
/// `Mp + c₀`. The corner `v` is placed where `Mv + c₀` is componentwise
/// positive.
pub fn vertex_optimum_instance<R: Rng + ?Sized>(rng: &mut R, dims: Dims) -> Instance {
    loop {
        let model = random_special_case_model(rng, dims);
        let l = model.n_param();
        let grad_at = |p: &DVector<f64>| {
            let u = unconstrained_inner(&model, p);
            grad_p(&model, p, &u).expect("dimensions match")
        };
        let c0 = grad_at(&DVector::zeros(l));
        let mut m = DMatrix::zeros(l, l);
        for i in 0..l {
            let mut unit = DVector::zeros(l);
            unit[i] = 1.0;
            m.set_column(i, &(grad_at(&unit) - &c0));
        }
        let m = (&m + m.transpose()) * 0.5;
        let (lo_eig, hi_eig) = sym_eig_extremes(&m);
        if lo_eig < 1e-3 * hi_eig.max(1e-12) {
            continue;
        }
        let Some(m_inv) = m.clone().try_inverse() else { continue };
        let margin = DVector::from_fn(l, |_, _| rng.random_range(0.5..1.5));
        let vertex = &m_inv * (&margin - &c0);
        let width = DVector::from_fn(l, |_, _| rng.random_range(0.5..1.5));
        let prox_p = ProxOperator::new_box(vertex.clone(), &vertex + &width).expect("valid box");

        // Inner box large enough to stay inactive: ū is affine in p, so its
        // extremes over P are attained at corners.
        let mut reach: f64 = 0.0;
        for corner in 0..(1usize << l) {
            let p = DVector::from_fn(l, |i, _| if corner >> i & 1 == 1 { vertex[i] + width[i] } else { vertex[i] });
            reach = reach.max(unconstrained_inner(&model, &p).amax());
        }
        let prox_u = ProxOperator::symmetric_box(model.n_decision(), 2.0 * reach + 1.0).expect("valid box");
        return Instance { model, prox_p, prox_u };
    }
}

/// Random additive-parameter instance on symmetric boxes.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, dims: Dims, p_radius: f64, u_radius: f64) -> Instance {
    let model = random_special_case_model(rng, dims);
    Instance {
        prox_p: ProxOperator::symmetric_box(model.n_param(), p_radius).unwrap(),
        prox_u: ProxOperator::symmetric_box(model.n_decision(), u_radius).unwrap(),
        model,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_tracking_closed_form() {
        let model = scalar_tracking_model();
        for &p in &[0.5, 1.0, 2.0] {
            let u = unconstrained_inner(&model, &dvec(&[p]));
            assert!((u[0] + p / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn isotropic_hessian() {
        let model = isotropic_model(2.5, 3);
        let qp = condense(&model, &dvec(&[0.3, -1.0, 2.0])).unwrap();
        assert!((&qp.h - DMatrix::identity(3, 3) * 2.5).amax() < 1e-15);
    }

    #[test]
    fn vertex_instance_gradient_points_outward() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            let inst = vertex_optimum_instance(&mut rng, Dims::small());
            let ProxOperator::Box { lo, .. } = &inst.prox_p else { panic!() };
            let u = unconstrained_inner(&inst.model, lo);
            let g = grad_p(&inst.model, lo, &u).unwrap();
            assert!(g.iter().all(|&v| v > 0.4), "{g}");
        }
    }
}
