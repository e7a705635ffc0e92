//! Fixed benchmark fixtures, so that every bench measures the same problems.

use bilevel_core::instances::{self, Dims, Instance};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A strictly complementary instance of the given size, reproducible from
/// `seed`.
pub fn vertex_instance(dims: Dims, seed: u64) -> Instance {
    instances::vertex_optimum_instance(&mut ChaCha8Rng::seed_from_u64(seed), dims)
}

/// Upper corner of the parameter set and a zero input sequence.
pub fn start(inst: &Instance) -> (DVector<f64>, DVector<f64>) {
    (
        inst.prox_p.map_unit_cube(&vec![1.0; inst.prox_p.dim()]),
        DVector::zeros(inst.model.n_decision()),
    )
}
