//! Closed-form proximity operators for the input penalty `U` and the
//! parameter penalty `P`.
//!
//! All variants have a compact, nonempty domain. Penalty values are
//! extended reals: outside the domain [`ProxOperator::value`] returns
//! `f64::INFINITY`.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Membership tolerance for penalty evaluation.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum ProxOperator {
    /// Indicator of `{x : lo ≤ x ≤ hi}`.
    Box { lo: DVector<f64>, hi: DVector<f64> },
    /// Indicator of `{x : |x − center| ≤ radius}`.
    Ball { center: DVector<f64>, radius: f64 },
    /// Box indicator plus `Σᵢ wᵢ |xᵢ|`.
    BoxL1 {
        lo: DVector<f64>,
        hi: DVector<f64>,
        weight: DVector<f64>,
    },
}

fn check_box(lo: &DVector<f64>, hi: &DVector<f64>) -> Result<()> {
    check_len("box upper bound", lo.len(), hi.len())?;
    if lo.is_empty() {
        return Err(Error::InvalidProx("box must have positive dimension".into()));
    }
    if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidProx("box bounds must be finite".into()));
    }
    if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
        return Err(Error::InvalidProx("box needs lo <= hi componentwise".into()));
    }
    Ok(())
}

impl ProxOperator {
    pub fn new_box(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        check_box(&lo, &hi)?;
        Ok(Self::Box { lo, hi })
    }

    pub fn new_ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProx("ball center must be a finite nonempty vector".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidProx(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self::Ball { center, radius })
    }

    pub fn new_box_l1(lo: DVector<f64>, hi: DVector<f64>, weight: DVector<f64>) -> Result<Self> {
        check_box(&lo, &hi)?;
        check_len("l1 weight", lo.len(), weight.len())?;
        if weight.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidProx("l1 weights must be nonnegative".into()));
        }
        Ok(Self::BoxL1 { lo, hi, weight })
    }

    /// Symmetric box `[-r, r]^dim`.
    pub fn symmetric_box(dim: usize, r: f64) -> Result<Self> {
        Self::new_box(DVector::from_element(dim, -r), DVector::from_element(dim, r))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Box { lo, .. } | Self::BoxL1 { lo, .. } => lo.len(),
            Self::Ball { center, .. } => center.len(),
        }
    }

    /// `prox_{scale·f}(x)`.
    pub fn apply(&self, scale: f64, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            Self::Box { lo, hi } => x.zip_zip_map(lo, hi, |v, l, h| v.clamp(l, h)),
            Self::Ball { center, radius } => {
                let offset = x - center;
                let dist = offset.norm();
                if dist <= *radius {
                    x.clone()
                } else {
                    center + offset * (*radius / dist)
                }
            }
            Self::BoxL1 { lo, hi, weight } => {
                let mut out = x.clone();
                for i in 0..out.len() {
                    let t = scale * weight[i];
                    let shrunk = x[i].signum() * (x[i].abs() - t).max(0.0);
                    out[i] = shrunk.clamp(lo[i], hi[i]);
                }
                out
            }
        }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        match self {
            Self::Box { lo, hi } | Self::BoxL1 { lo, hi, .. } => x
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .all(|(v, (l, h))| *v >= l - MEMBERSHIP_TOL && *v <= h + MEMBERSHIP_TOL),
            Self::Ball { center, radius } => (x - center).norm() <= radius + MEMBERSHIP_TOL,
        }
    }

    /// Penalty value; `f64::INFINITY` outside the domain.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        if !self.contains(x) {
            return f64::INFINITY;
        }
        match self {
            Self::BoxL1 { weight, .. } => weight.iter().zip(x.iter()).map(|(w, v)| w * v.abs()).sum(),
            _ => 0.0,
        }
    }

    pub fn domain_diameter(&self) -> f64 {
        match self {
            Self::Box { lo, hi } | Self::BoxL1 { lo, hi, .. } => (hi - lo).norm(),
            Self::Ball { radius, .. } => 2.0 * radius,
        }
    }

    /// `max_{x ∈ dom} |x|`.
    pub fn max_norm(&self) -> f64 {
        match self {
            Self::Box { lo, hi } | Self::BoxL1 { lo, hi, .. } => lo
                .iter()
                .zip(hi.iter())
                .map(|(l, h)| l.abs().max(h.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
            Self::Ball { center, radius } => center.norm() + radius,
        }
    }

    /// Maps a point of the unit cube onto the domain: affinely for boxes,
    /// through the bounding cube followed by projection for balls.
    pub fn map_unit_cube(&self, z: &[f64]) -> DVector<f64> {
        debug_assert_eq!(z.len(), self.dim());
        match self {
            Self::Box { lo, hi } | Self::BoxL1 { lo, hi, .. } => {
                DVector::from_fn(lo.len(), |i, _| lo[i] + z[i] * (hi[i] - lo[i]))
            }
            Self::Ball { center, radius } => {
                let x = DVector::from_fn(center.len(), |i, _| center[i] + radius * (2.0 * z[i] - 1.0));
                self.apply(1.0, &x)
            }
        }
    }

    /// Uniform sample from the domain.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            Self::Box { lo, hi } | Self::BoxL1 { lo, hi, .. } => {
                DVector::from_fn(lo.len(), |i, _| {
                    if lo[i] == hi[i] {
                        lo[i]
                    } else {
                        rng.random_range(lo[i]..=hi[i])
                    }
                })
            }
            Self::Ball { center, radius } => {
                let d = center.len();
                loop {
                    let z = DVector::from_fn(d, |_, _| rng.random_range(-1.0..=1.0));
                    if z.norm() <= 1.0 {
                        return center + z * *radius;
                    }
                }
            }
        }
    }

    /// Componentwise pattern of active constraints at `x`: `-1` on a lower
    /// face, `+1` on an upper face, `0` free. For balls a single entry marks
    /// the sphere. L1 kinks at zero are reported as `2`.
    pub fn active_pattern(&self, x: &DVector<f64>, tol: f64) -> Vec<i8> {
        match self {
            Self::Box { lo, hi } => box_pattern(lo, hi, x, tol),
            Self::BoxL1 { lo, hi, weight } => {
                let mut pat = box_pattern(lo, hi, x, tol);
                for i in 0..pat.len() {
                    if pat[i] == 0 && weight[i] > 0.0 && x[i].abs() <= tol {
                        pat[i] = 2;
                    }
                }
                pat
            }
            Self::Ball { center, radius } => {
                vec![i8::from((x - center).norm() >= radius - tol)]
            }
        }
    }
}

fn box_pattern(lo: &DVector<f64>, hi: &DVector<f64>, x: &DVector<f64>, tol: f64) -> Vec<i8> {
    (0..x.len())
        .map(|i| {
            if x[i] <= lo[i] + tol {
                -1
            } else if x[i] >= hi[i] - tol {
                1
            } else {
                0
            }
        })
        .collect()
}

/// JSON form, e.g. `{"type":"box","lo":[-1],"hi":[1]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProxSpec {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    BoxL1 { lo: Vec<f64>, hi: Vec<f64>, weight: Vec<f64> },
}

impl TryFrom<ProxSpec> for ProxOperator {
    type Error = Error;

    fn try_from(spec: ProxSpec) -> Result<Self> {
        let v = |x: Vec<f64>| DVector::from_vec(x);
        match spec {
            ProxSpec::Box { lo, hi } => Self::new_box(v(lo), v(hi)),
            ProxSpec::Ball { center, radius } => Self::new_ball(v(center), radius),
            ProxSpec::BoxL1 { lo, hi, weight } => Self::new_box_l1(v(lo), v(hi), v(weight)),
        }
    }
}

impl From<&ProxOperator> for ProxSpec {
    fn from(op: &ProxOperator) -> Self {
        let v = |x: &DVector<f64>| x.iter().copied().collect::<Vec<_>>();
        match op {
            ProxOperator::Box { lo, hi } => Self::Box { lo: v(lo), hi: v(hi) },
            ProxOperator::Ball { center, radius } => Self::Ball { center: v(center), radius: *radius },
            ProxOperator::BoxL1 { lo, hi, weight } => Self::BoxL1 { lo: v(lo), hi: v(hi), weight: v(weight) },
        }
    }
}

impl Serialize for ProxOperator {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ProxSpec::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ProxOperator {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let spec = ProxSpec::deserialize(deserializer)?;
        Self::try_from(spec).map_err(serde::de::Error::custom)
    }
}
