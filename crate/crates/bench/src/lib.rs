//! Shared fixtures for the benchmarks.

use syncore::synthgen::duplicated_ar_covariance;
use syncore::{generate, GaussianCov, Recording, SynthKind, SynthSpec, WeightedGraph};

/// Layered recording with `n_units` spread over three layers.
pub fn layered_recording(n_units: usize, n_prompts: usize, n_timesteps: usize) -> Recording {
    generate(&SynthSpec {
        n_units,
        n_prompts,
        n_timesteps,
        ..SynthSpec::new(SynthKind::LayeredInvertedU)
    })
    .expect("valid bench spec")
}

pub fn ar_covariance() -> GaussianCov {
    duplicated_ar_covariance(0.9, 0.1).expect("stationary")
}

/// Dense graph with deterministic weights in (0, 1].
pub fn dense_graph(n: usize) -> WeightedGraph {
    let mut g = WeightedGraph::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            let w = ((i * 31 + j * 17) % 97 + 1) as f64 / 97.0;
            g.set_weight(i, j, w).expect("in range");
        }
    }
    g
}
