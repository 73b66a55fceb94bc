//! Shared fixtures for the benchmark suite.

use hamflow_core::gmm::GaussianMixture;
use hamflow_core::net::{Mlp, MlpConfig};
use hamflow_core::rng::Rng;

pub fn bimodal() -> GaussianMixture {
    GaussianMixture::bimodal_1d()
}

/// A time-conditioned net with non-trivial output weights.
pub fn probe_net(dim: usize, hidden: Vec<usize>, seed: u64) -> Mlp {
    let mut rng = Rng::new(seed);
    let mut net = Mlp::new(MlpConfig::time_conditioned(dim, hidden), &mut rng);
    let mut p = net.params_flat();
    for w in &mut p {
        if *w == 0.0 {
            *w = rng.uniform(-0.3, 0.3);
        }
    }
    net.set_params_flat(&p).unwrap();
    net
}

/// An autonomous force net with non-trivial output weights.
pub fn probe_force(dim: usize, hidden: Vec<usize>, seed: u64) -> Mlp {
    let mut rng = Rng::new(seed);
    let mut net = Mlp::new(MlpConfig::autonomous(dim, hidden), &mut rng);
    let mut p = net.params_flat();
    for w in &mut p {
        if *w == 0.0 {
            *w = rng.uniform(-0.3, 0.3);
        }
    }
    net.set_params_flat(&p).unwrap();
    net
}
