//! Shared helpers for the integration suites: exact sampling from the joint
//! prior via the Cholesky factor of the assembled gram matrix.

use capgp::kernels::McgpHyperParams;
use capgp::mcgp::{assemble_gram, CellObservations, TrainingSet};
use capgp::numerics::cholesky;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Draws capacities from the joint prior at the given cycles:
/// `Y = L z` with `L L' = K(hyper)` and standard normal `z`.
pub fn sample_training_set(
    hyper: &McgpHyperParams,
    cell_cycles: &[(&str, Vec<f64>)],
    rng: &mut ChaCha8Rng,
) -> TrainingSet {
    let skeleton = TrainingSet::new(
        cell_cycles
            .iter()
            .map(|(id, cycles)| CellObservations {
                id: (*id).to_string(),
                cycles: cycles.clone(),
                capacities: vec![0.0; cycles.len()],
            })
            .collect(),
    )
    .expect("valid skeleton");
    let gram = assemble_gram(hyper, &skeleton).expect("gram assembles");
    let factor = cholesky(&gram).expect("prior factorizes");
    let z = DVector::from_fn(gram.dim(), |_, _| rng.sample(StandardNormal));
    let y = factor.lower() * z;

    let mut offset = 0;
    TrainingSet::new(
        cell_cycles
            .iter()
            .map(|(id, cycles)| {
                let n = cycles.len();
                let caps = y.as_slice()[offset..offset + n].to_vec();
                offset += n;
                CellObservations {
                    id: (*id).to_string(),
                    cycles: cycles.clone(),
                    capacities: caps,
                }
            })
            .collect(),
    )
    .expect("valid sampled set")
}

/// Cycle grid 1..=n as f64.
pub fn grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64).collect()
}
