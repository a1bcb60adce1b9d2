//! Shared inputs for the criterion benches.

use jim_core::config::{ExperimentConfig, MethodConfig};
use jim_core::numeric::rng_from_seed;
use jim_core::trainer::{toy_batch, toy_networks, EpisodeBatch, NetworkBundle, ToyDims};
use jim_core::VisibilityGraph;
use rand::Rng;

/// `count` random visibility graphs of `n` agents with mixed densities.
pub fn graphs(n: usize, count: usize, seed: u64) -> Vec<VisibilityGraph> {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|_| {
            let p = rng.gen_range(0.1..0.9);
            VisibilityGraph::random(n, p, &mut rng)
        })
        .collect()
}

/// Networks and a batch sized like a pursuit_small training step.
pub fn pursuit_step(seed: u64) -> (NetworkBundle, EpisodeBatch, MethodConfig) {
    let cfg = ExperimentConfig::for_preset("pursuit_small").expect("preset");
    let d = ToyDims {
        n_agents: cfg.env.n_agents,
        obs_dim: cfg.env.obs_dim(),
        state_dim: cfg.env.state_dim(),
        n_z: cfg.method.n_z,
        n_actions: cfg.env.n_actions(),
        hidden: cfg.network.hidden,
    };
    let mut rng = rng_from_seed(seed);
    let online = toy_networks(d, true, &mut rng);
    let batch = toy_batch(d, &[cfg.env.episode_limit; 4], &mut rng);
    let nets = NetworkBundle {
        target: online.clone(),
        online,
    };
    (nets, batch, cfg.method)
}
