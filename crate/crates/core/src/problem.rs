//! Parameter-dependent linear-quadratic optimal control problems and their
//! condensed quadratic form.
//!
//! The model is
//!
//! ```text
//! x_{k+1} = A(p) x_k + B(p) u_k + e(p),    k = 0..N-1
//! J       = ½ x_Nᵀ S x_N + ½ Σ_{k<N} (x_kᵀ Q x_k + u_kᵀ R u_k)
//! ```
//!
//! with `A(p) = A₀ + Σᵢ pᵢ Aᵢ` (likewise `B`, `e`) and constant weights.
//! Eliminating the states gives `J(u, p) = uᵀ H(p) u + g(p)ᵀ u + c(p)`.
//!
//! **Convention:** there is no ½ in front of `uᵀHu`; it is folded into `H`.
//! Consequently `∇ᵤJ = 2Hu + g`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{asymmetry, block_diag, dmat_from_rows, dmat_to_rows, sym_eig_extremes};

const SYMMETRY_TOL: f64 = 1e-12;

/// Constant quadratic weights of the stage and terminal cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

/// Affine parameter dependence `M(p) = M₀ + Σᵢ pᵢ Mᵢ`, stored as the
/// coefficient list `[M₀, M₁, …, M_l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineDynamics {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub e: Vec<DVector<f64>>,
}

/// Precomputed data for models where `p` only enters through an additive
/// term `E p`. Then `∇ₚJ(u, p) = Êᵀ Q̄ (Â x₀ + B̂ u + Ê p)` is affine in `(u, p)`.
#[derive(Debug, Clone, PartialEq)]
struct AdditiveParameter {
    /// `Êᵀ Q̄ B̂`, l × Nm.
    coupling_u: DMatrix<f64>,
    /// `Êᵀ Q̄ Ê`, l × l.
    coupling_p: DMatrix<f64>,
    /// `Êᵀ Q̄ Â x₀`.
    offset: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametrizedModel {
    n_state: usize,
    n_input: usize,
    n_param: usize,
    horizon: usize,
    x0: DVector<f64>,
    dynamics: AffineDynamics,
    weights: Weights,
    additive: Option<AdditiveParameter>,
}

/// Stacked prediction `x = Â x₀ + B̂ u + ê` over `x₁ … x_N`.
struct Prediction {
    a_hat: DMatrix<f64>,
    b_hat: DMatrix<f64>,
    e_hat: DVector<f64>,
}

impl ParametrizedModel {
    pub fn new(
        dynamics: AffineDynamics,
        weights: Weights,
        horizon: usize,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let n = x0.len();
        if n == 0 {
            return Err(Error::InvalidModel("state dimension must be positive".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidModel("horizon must be positive".into()));
        }
        let n_coeffs = dynamics.a.len();
        if n_coeffs == 0 {
            return Err(Error::InvalidModel("A needs at least the constant coefficient".into()));
        }
        check_len("B coefficient count", n_coeffs, dynamics.b.len())?;
        check_len("e coefficient count", n_coeffs, dynamics.e.len())?;
        let m = dynamics.b[0].ncols();
        if m == 0 {
            return Err(Error::InvalidModel("input dimension must be positive".into()));
        }
        for (i, a) in dynamics.a.iter().enumerate() {
            check_len(&format!("rows of A[{i}]"), n, a.nrows())?;
            check_len(&format!("cols of A[{i}]"), n, a.ncols())?;
        }
        for (i, b) in dynamics.b.iter().enumerate() {
            check_len(&format!("rows of B[{i}]"), n, b.nrows())?;
            check_len(&format!("cols of B[{i}]"), m, b.ncols())?;
        }
        for (i, e) in dynamics.e.iter().enumerate() {
            check_len(&format!("length of e[{i}]"), n, e.len())?;
        }
        check_square("Q", &weights.q, n)?;
        check_square("S", &weights.s, n)?;
        check_square("R", &weights.r, m)?;
        check_definite("Q", &weights.q, false)?;
        check_definite("S", &weights.s, false)?;
        check_definite("R", &weights.r, true)?;

        Ok(Self {
            n_state: n,
            n_input: m,
            n_param: n_coeffs - 1,
            horizon,
            x0,
            dynamics,
            weights,
            additive: None,
        })
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn n_input(&self) -> usize {
        self.n_input
    }

    pub fn n_param(&self) -> usize {
        self.n_param
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Length of the stacked input vector, `N·m`.
    pub fn n_decision(&self) -> usize {
        self.horizon * self.n_input
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn dynamics(&self) -> &AffineDynamics {
        &self.dynamics
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    /// True for models built by [`special_case`]; these use the analytic
    /// parameter gradient.
    pub fn is_additive(&self) -> bool {
        self.additive.is_some()
    }

    /// No coefficient beyond the constant one is nonzero.
    pub fn is_constant_in_p(&self) -> bool {
        let d = &self.dynamics;
        d.a[1..].iter().all(|m| m.iter().all(|&v| v == 0.0))
            && d.b[1..].iter().all(|m| m.iter().all(|&v| v == 0.0))
            && d.e[1..].iter().all(|v| v.iter().all(|&x| x == 0.0))
    }

    pub fn a_at(&self, p: &DVector<f64>) -> DMatrix<f64> {
        affine_eval(&self.dynamics.a, p)
    }

    pub fn b_at(&self, p: &DVector<f64>) -> DMatrix<f64> {
        affine_eval(&self.dynamics.b, p)
    }

    pub fn e_at(&self, p: &DVector<f64>) -> DVector<f64> {
        let mut out = self.dynamics.e[0].clone();
        for (i, ei) in self.dynamics.e[1..].iter().enumerate() {
            out.axpy(p[i], ei, 1.0);
        }
        out
    }

    fn check_param(&self, p: &DVector<f64>) -> Result<()> {
        check_len("parameter vector", self.n_param, p.len())
    }

    fn check_input(&self, u: &DVector<f64>) -> Result<()> {
        check_len("stacked input vector", self.n_decision(), u.len())
    }

    /// `Q̄ = blockdiag(Q, …, Q, S)` over `x₁ … x_N`.
    fn stacked_state_weight(&self) -> DMatrix<f64> {
        let w = &self.weights;
        let mut blocks: Vec<&DMatrix<f64>> = vec![&w.q; self.horizon - 1];
        blocks.push(&w.s);
        block_diag(&blocks)
    }

    fn stacked_input_weight(&self) -> DMatrix<f64> {
        block_diag(&vec![&self.weights.r; self.horizon])
    }

    fn predict(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, e: &DVector<f64>) -> Prediction {
        let (n, m, big_n) = (self.n_state, self.n_input, self.horizon);
        let mut a_hat = DMatrix::zeros(big_n * n, n);
        let mut b_hat = DMatrix::zeros(big_n * n, big_n * m);
        let mut e_hat = DVector::zeros(big_n * n);

        let mut phi = DMatrix::<f64>::identity(n, n);
        let mut gamma = DMatrix::<f64>::zeros(n, big_n * m);
        let mut off = DVector::<f64>::zeros(n);
        for k in 0..big_n {
            phi = a * &phi;
            gamma = a * &gamma;
            let mut block = gamma.view_mut((0, k * m), (n, m));
            block += b;
            off = a * &off + e;
            a_hat.view_mut((k * n, 0), (n, n)).copy_from(&phi);
            b_hat.view_mut((k * n, 0), (n, big_n * m)).copy_from(&gamma);
            e_hat.rows_mut(k * n, n).copy_from(&off);
        }
        Prediction { a_hat, b_hat, e_hat }
    }
}

fn affine_eval(coeffs: &[DMatrix<f64>], p: &DVector<f64>) -> DMatrix<f64> {
    let mut out = coeffs[0].clone();
    for (i, m) in coeffs[1..].iter().enumerate() {
        out += m * p[i];
    }
    out
}

fn check_square(name: &str, m: &DMatrix<f64>, dim: usize) -> Result<()> {
    check_len(&format!("rows of {name}"), dim, m.nrows())?;
    check_len(&format!("cols of {name}"), dim, m.ncols())
}

fn check_definite(name: &str, m: &DMatrix<f64>, strict: bool) -> Result<()> {
    let scale = 1.0 + m.amax();
    if asymmetry(m) > SYMMETRY_TOL * scale {
        return Err(Error::InvalidModel(format!("{name} is not symmetric")));
    }
    let (min, _) = sym_eig_extremes(m);
    if strict && min <= 0.0 {
        return Err(Error::InvalidModel(format!(
            "{name} must be positive definite (smallest eigenvalue {min:e})"
        )));
    }
    if !strict && min < -SYMMETRY_TOL * scale {
        return Err(Error::InvalidModel(format!(
            "{name} must be positive semidefinite (smallest eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// `J(u) = uᵀHu + gᵀu + c` at a fixed parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedQP {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c: f64,
    pub at_p: DVector<f64>,
}

impl CondensedQP {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn value(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.h * u)) + self.g.dot(u) + self.c
    }

    /// `2Hu + g`.
    pub fn grad(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = self.g.clone();
        out.gemv(2.0, &self.h, u, 1.0);
        out
    }

    pub fn eigen_extremes(&self) -> (f64, f64) {
        sym_eig_extremes(&self.h)
    }
}

/// Condenses the optimal control problem at parameter `p`.
pub fn condense(model: &ParametrizedModel, p: &DVector<f64>) -> Result<CondensedQP> {
    model.check_param(p)?;
    let pred = model.predict(&model.a_at(p), &model.b_at(p), &model.e_at(p));
    let q_bar = model.stacked_state_weight();
    let r_bar = model.stacked_input_weight();

    let qb = &q_bar * &pred.b_hat;
    let h_raw = pred.b_hat.transpose() * &qb + r_bar;
    let h = (&h_raw + h_raw.transpose()) * 0.25;
    let free = &pred.a_hat * &model.x0 + &pred.e_hat;
    let g = qb.transpose() * &free;
    let c = 0.5 * free.dot(&(&q_bar * &free))
        + 0.5 * model.x0.dot(&(&model.weights.q * &model.x0));
    Ok(CondensedQP {
        h,
        g,
        c,
        at_p: p.clone(),
    })
}

/// Simulates the dynamics and accumulates the cost directly, without
/// condensation.
pub fn eval_cost_rollout(
    model: &ParametrizedModel,
    p: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    model.check_param(p)?;
    model.check_input(u)?;
    let (a, b, e) = (model.a_at(p), model.b_at(p), model.e_at(p));
    let w = &model.weights;
    let m = model.n_input;
    let mut x = model.x0.clone();
    let mut cost = 0.0;
    for k in 0..model.horizon {
        let uk = u.rows(k * m, m);
        cost += 0.5 * x.dot(&(&w.q * &x)) + 0.5 * uk.dot(&(&w.r * uk));
        x = &a * &x + &b * uk + &e;
    }
    cost += 0.5 * x.dot(&(&w.s * &x));
    Ok(cost)
}

/// `∇ᵤJ(u) = 2Hu + g`.
pub fn grad_u(qp: &CondensedQP, u: &DVector<f64>) -> DVector<f64> {
    qp.grad(u)
}

/// Partial parameter gradient `∇ₚJ(u, p)` with `u` held fixed.
///
/// Additive-parameter models use the closed form, all others central
/// differences of the condensed cost.
pub fn grad_p(model: &ParametrizedModel, p: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    match grad_p_analytic(model, p, u)? {
        Some(g) => Ok(g),
        None => grad_p_fd(model, p, u),
    }
}

/// Central-difference parameter gradient, step `max(1e-6, 1e-6·|pᵢ|)`.
pub fn grad_p_fd(model: &ParametrizedModel, p: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_param(p)?;
    model.check_input(u)?;
    let mut out = DVector::zeros(model.n_param);
    let mut probe = p.clone();
    for i in 0..model.n_param {
        let h = f64::max(1e-6, 1e-6 * p[i].abs());
        probe[i] = p[i] + h;
        let plus = condense(model, &probe)?.value(u);
        probe[i] = p[i] - h;
        let minus = condense(model, &probe)?.value(u);
        probe[i] = p[i];
        out[i] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// Closed-form `∇ₚJ` for additive-parameter models, `None` otherwise.
pub fn grad_p_analytic(
    model: &ParametrizedModel,
    p: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<Option<DVector<f64>>> {
    model.check_param(p)?;
    model.check_input(u)?;
    Ok(model.additive.as_ref().map(|add| {
        let mut out = add.offset.clone();
        out.gemv(1.0, &add.coupling_u, u, 1.0);
        out.gemv(1.0, &add.coupling_p, p, 1.0);
        out
    }))
}

/// Builds `x_{k+1} = A x_k + B u_k + E p` with constant weights. `E` is
/// n × l; its columns become the affine coefficients of `e(p)`.
pub fn special_case(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    e: DMatrix<f64>,
    weights: Weights,
    horizon: usize,
    x0: DVector<f64>,
) -> Result<ParametrizedModel> {
    let n = a.nrows();
    check_len("rows of E", n, e.nrows())?;
    let l = e.ncols();
    let m = b.ncols();
    let mut dynamics = AffineDynamics {
        a: vec![DMatrix::zeros(n, n); l + 1],
        b: vec![DMatrix::zeros(n, m); l + 1],
        e: vec![DVector::zeros(n); l + 1],
    };
    dynamics.a[0] = a.clone();
    dynamics.b[0] = b.clone();
    for i in 0..l {
        dynamics.e[i + 1] = e.column(i).into_owned();
    }
    let mut model = ParametrizedModel::new(dynamics, weights, horizon, x0)?;

    // Ê: propagate each column of E as a constant disturbance.
    let zero = DVector::zeros(n);
    let base = model.predict(&a, &b, &zero);
    let mut e_hat = DMatrix::zeros(horizon * n, l);
    for i in 0..l {
        let col = model.predict(&a, &b, &e.column(i).into_owned()).e_hat;
        e_hat.set_column(i, &col);
    }
    let q_bar = model.stacked_state_weight();
    let eq = e_hat.transpose() * &q_bar;
    model.additive = Some(AdditiveParameter {
        coupling_u: &eq * &base.b_hat,
        coupling_p: &eq * &e_hat,
        offset: &eq * (&base.a_hat * &model.x0),
    });
    Ok(model)
}

/// JSON description of a model: matrices as row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Full affine parametrization; `A`, `B`, `e` list the `l+1`
    /// coefficients.
    Affine {
        #[serde(rename = "A")]
        a: Vec<Vec<Vec<f64>>>,
        #[serde(rename = "B")]
        b: Vec<Vec<Vec<f64>>>,
        e: Vec<Vec<f64>>,
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
        #[serde(rename = "R")]
        r: Vec<Vec<f64>>,
        #[serde(rename = "S")]
        s: Vec<Vec<f64>>,
        horizon: usize,
        x0: Vec<f64>,
    },
    /// `x_{k+1} = A x_k + B u_k + E p`.
    SpecialCase {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
        #[serde(rename = "E")]
        e: Vec<Vec<f64>>,
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
        #[serde(rename = "R")]
        r: Vec<Vec<f64>>,
        #[serde(rename = "S")]
        s: Vec<Vec<f64>>,
        horizon: usize,
        x0: Vec<f64>,
    },
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    dmat_from_rows(rows).ok_or_else(|| Error::InvalidModel(format!("{name} has ragged rows")))
}

impl ModelSpec {
    pub fn build(&self) -> Result<ParametrizedModel> {
        match self {
            ModelSpec::Affine { a, b, e, q, r, s, horizon, x0 } => {
                let dynamics = AffineDynamics {
                    a: a.iter()
                        .enumerate()
                        .map(|(i, m)| matrix(&format!("A[{i}]"), m))
                        .collect::<Result<_>>()?,
                    b: b.iter()
                        .enumerate()
                        .map(|(i, m)| matrix(&format!("B[{i}]"), m))
                        .collect::<Result<_>>()?,
                    e: e.iter().map(|v| DVector::from_column_slice(v)).collect(),
                };
                let weights = Weights {
                    q: matrix("Q", q)?,
                    r: matrix("R", r)?,
                    s: matrix("S", s)?,
                };
                ParametrizedModel::new(dynamics, weights, *horizon, DVector::from_column_slice(x0))
            }
            ModelSpec::SpecialCase { a, b, e, q, r, s, horizon, x0 } => special_case(
                matrix("A", a)?,
                matrix("B", b)?,
                matrix("E", e)?,
                Weights {
                    q: matrix("Q", q)?,
                    r: matrix("R", r)?,
                    s: matrix("S", s)?,
                },
                *horizon,
                DVector::from_column_slice(x0),
            ),
        }
    }

    /// Inverse of [`ModelSpec::build`]; additive models keep their shorthand.
    pub fn from_model(model: &ParametrizedModel) -> Self {
        let d = model.dynamics();
        let w = model.weights();
        if model.is_additive() {
            let n = model.n_state();
            let e = DMatrix::from_fn(n, model.n_param(), |i, j| d.e[j + 1][i]);
            ModelSpec::SpecialCase {
                a: dmat_to_rows(&d.a[0]),
                b: dmat_to_rows(&d.b[0]),
                e: dmat_to_rows(&e),
                q: dmat_to_rows(&w.q),
                r: dmat_to_rows(&w.r),
                s: dmat_to_rows(&w.s),
                horizon: model.horizon(),
                x0: model.x0().iter().copied().collect(),
            }
        } else {
            ModelSpec::Affine {
                a: d.a.iter().map(dmat_to_rows).collect(),
                b: d.b.iter().map(dmat_to_rows).collect(),
                e: d.e.iter().map(|v| v.iter().copied().collect()).collect(),
                q: dmat_to_rows(&w.q),
                r: dmat_to_rows(&w.r),
                s: dmat_to_rows(&w.s),
                horizon: model.horizon(),
                x0: model.x0().iter().copied().collect(),
            }
        }
    }
}
