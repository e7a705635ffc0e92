//! Deterministic sample plans: Halton points and per-index seeded streams.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::prox::ProxOperator;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = f64::from(base);
    let mut inv = 1.0 / b;
    let mut out = 0.0;
    while index > 0 {
        out += (index % u64::from(base)) as f64 * inv;
        index /= u64::from(base);
        inv /= b;
    }
    out
}

/// Point `index` of the Halton sequence in `dim` dimensions. Index 0 is
/// skipped so no point sits on the origin corner.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton supports up to {} dimensions", PRIMES.len());
    (0..dim).map(|k| radical_inverse(index + 1, PRIMES[k])).collect()
}

/// `count` low-discrepancy points in the domain of `op`.
pub fn domain_grid(op: &ProxOperator, count: usize) -> Vec<DVector<f64>> {
    (0..count as u64)
        .map(|i| op.map_unit_cube(&halton(i, op.dim())))
        .collect()
}

/// Halton points plus the extreme points of the domain: box vertices (up
/// to 12 dimensions) or the axis points of a ball. Extremes matter because
/// eigenvalues of `H(p)` tend to peak on the boundary.
pub fn domain_samples(op: &ProxOperator, count: usize) -> Vec<DVector<f64>> {
    let mut pts = domain_grid(op, count);
    let d = op.dim();
    match op {
        ProxOperator::Box { .. } | ProxOperator::BoxL1 { .. } if d <= 12 => {
            for corner in 0..(1usize << d) {
                let z: Vec<f64> = (0..d).map(|i| (corner >> i & 1) as f64).collect();
                pts.push(op.map_unit_cube(&z));
            }
        }
        ProxOperator::Ball { center, radius } => {
            for i in 0..d {
                for s in [-1.0, 1.0] {
                    let mut x = center.clone();
                    x[i] += s * radius;
                    pts.push(x);
                }
            }
        }
        _ => {}
    }
    pts
}

/// Independent stream for sample `index` under a master seed.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniformly distributed unit vector.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Uniform sample from the ball of the given radius around zero.
pub fn uniform_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    let dir = unit_vector(rng, dim);
    let r: f64 = rng.random::<f64>().powf(1.0 / dim as f64);
    dir * (radius * r)
}
