//! Fixtures shared by the benchmarks.

use cfx_core::train::synth::{synth_problem, SynthConfig, SyntheticProblem};
use cfx_core::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cfx_core::DenseLayer;

/// Synthetic problem with `n` filters and 10 classes.
pub fn problem(n: usize, per_class: usize) -> SyntheticProblem {
    let cfg = SynthConfig::new(n, 10, per_class, 4.0, 0);
    synth_problem(&cfg, &TrainConfig::classifier_default()).expect("synthetic problem")
}

/// Explainer layer with the usual uniform initialisation.
pub fn dense(n: usize, bias: f64) -> DenseLayer {
    DenseLayer::random(n, bias, &mut ChaCha8Rng::seed_from_u64(0))
}
