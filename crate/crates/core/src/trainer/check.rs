use std::sync::Arc;

use rand::Rng;

use super::learn::compute_gradients;
use super::networks::{NetworkBundle, Networks};
use super::replay::{Episode, EpisodeBatch};
use crate::config::{MethodConfig, MiTarget, Mode};
use crate::error::Result;
use crate::mixer::QMixer;
use crate::numeric::{check_module, rng_from_seed, Activation, GradReport, Module, Tensor};
use crate::partition::{greedy_partition, VisibilityGraph};
use crate::policy::{BehaviorLayout, BehaviorNet, IntentionNet, Mlp, PosteriorNet};

/// Dimensions of the synthetic problem used by [`gradcheck_suite`].
#[derive(Clone, Copy, Debug)]
pub struct ToyDims {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub n_z: usize,
    pub n_actions: usize,
    pub hidden: usize,
}

impl Default for ToyDims {
    fn default() -> Self {
        ToyDims {
            n_agents: 3,
            obs_dim: 5,
            state_dim: 4,
            n_z: 4,
            n_actions: 3,
            hidden: 8,
        }
    }
}

/// Small randomly initialised networks, with or without the intention level.
pub fn toy_networks<R: Rng>(d: ToyDims, intentions: bool, rng: &mut R) -> Networks {
    let layout = BehaviorLayout {
        obs_dim: d.obs_dim,
        n_z: if intentions { d.n_z } else { 0 },
        id_slots: d.n_agents,
    };
    Networks {
        intention: intentions.then(|| IntentionNet::new(d.obs_dim, d.n_z, rng)),
        posterior: intentions.then(|| PosteriorNet::new(d.obs_dim, d.n_z, rng)),
        behavior: BehaviorNet::new(layout, d.hidden, d.n_actions, rng),
        mixer: QMixer::new(d.n_agents, d.state_dim, 6, 7, rng),
    }
}

/// Random episodes of the given lengths, with greedy partitions over random
/// visibility graphs.
pub fn toy_batch<R: Rng>(d: ToyDims, lengths: &[usize], rng: &mut R) -> EpisodeBatch {
    let eps = lengths
        .iter()
        .enumerate()
        .map(|(k, &len)| {
            let mut e = Episode::new(d.n_agents, d.obs_dim, d.state_dim, k as u64);
            for t in 0..=len {
                e.obs.push((0..d.n_agents * d.obs_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect());
                e.states.push((0..d.state_dim).map(|_| rng.gen_range(0.0f32..1.0)).collect());
                if t == len {
                    break;
                }
                let part = greedy_partition(&VisibilityGraph::random(d.n_agents, 0.5, rng), rng);
                e.z.push((0..part.len()).map(|_| rng.gen_range(0..d.n_z)).collect());
                e.partitions.push(part);
                e.actions.push((0..d.n_agents).map(|_| rng.gen_range(0..d.n_actions)).collect());
                e.rewards.push(rng.gen_range(-1.0..1.0));
                e.terminal.push(t + 1 == len);
            }
            Arc::new(e)
        })
        .collect();
    EpisodeBatch::from_episodes(eps)
}

/// Method settings under which the combined objective is a pure function of
/// the online parameters: α ≡ 1, no intrinsic reward, every gradient path on.
pub fn pure_objective_method() -> MethodConfig {
    MethodConfig {
        mode: Mode::NoWeighting,
        beta: 0.0,
        mi_target: MiTarget::Boltzmann,
        mi_grad_to_intention: true,
        lambda1: 0.7,
        lambda2: 1.3,
        temperature: 0.8,
        n_z: ToyDims::default().n_z,
        ..MethodConfig::default()
    }
}

fn sum_weighted(out: &Tensor, w: &[f64]) -> f64 {
    out.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Finite-difference check of every trainable block: dense stacks, the
/// recurrent behaviour network, intention and posterior networks, the mixer
/// and the full training objective.
pub fn gradcheck_suite(tol: f64, seed: u64) -> Result<GradReport> {
    let mut rng = rng_from_seed(seed);
    let d = ToyDims::default();
    let h = 1e-6;
    let mut report = GradReport {
        tol,
        perturb: h,
        blocks: Vec::new(),
    };

    // dense stack with every activation
    let mut mlp = Mlp::new("mlp", &[4, 6, 5, 3], Activation::Tanh, Activation::Identity, &mut rng);
    mlp.layers[1].activation = Activation::Relu;
    let x = Tensor::matrix(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let w: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = check_module(
        &mut mlp,
        |m| {
            m.zero_grad();
            let (y, c) = m.forward_cached(x.clone())?;
            m.backward(&c, &Tensor::matrix(3, 3, w.clone()));
            Ok(sum_weighted(&y, &w))
        },
        h,
        tol,
        None,
    )?;
    report.extend("dense", r);

    // intention network
    let mut int = IntentionNet::new(d.obs_dim, d.n_z, &mut rng);
    let x = Tensor::matrix(4, d.obs_dim, (0..4 * d.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let w: Vec<f64> = (0..4 * d.n_z).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = check_module(
        &mut int,
        |m| {
            m.zero_grad();
            let (y, c) = m.mlp.forward_cached(x.clone())?;
            m.mlp.backward(&c, &Tensor::matrix(4, d.n_z, w.clone()));
            Ok(sum_weighted(&y, &w))
        },
        h,
        tol,
        Some(40),
    )?;
    report.extend("intention", r);

    // posterior through a cross-entropy
    let mut post = PosteriorNet::new(d.obs_dim, d.n_z, &mut rng);
    let x = Tensor::matrix(3, 2 * d.obs_dim, (0..6 * d.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let target: Vec<usize> = (0..3).map(|_| rng.gen_range(0..d.n_z)).collect();
    let r = check_module(
        &mut post,
        |m| {
            m.zero_grad();
            let (y, c) = m.mlp.forward_cached(x.clone())?;
            let mut g = vec![0.0; 3 * d.n_z];
            let mut loss = 0.0;
            for (row, &z) in target.iter().enumerate() {
                let p = crate::numeric::softmax(y.row(row), 1.0)?;
                loss -= p[z].ln();
                for k in 0..d.n_z {
                    g[row * d.n_z + k] = p[k] - if k == z { 1.0 } else { 0.0 };
                }
            }
            m.mlp.backward(&c, &Tensor::matrix(3, d.n_z, g));
            Ok(loss)
        },
        h,
        tol,
        Some(40),
    )?;
    report.extend("posterior", r);

    // recurrent behaviour network over a sequence
    let layout = BehaviorLayout {
        obs_dim: d.obs_dim,
        n_z: d.n_z,
        id_slots: d.n_agents,
    };
    let mut beh = BehaviorNet::new(layout, d.hidden, d.n_actions, &mut rng);
    let (steps, rows) = (4, 2);
    let x = Tensor::matrix(
        steps * rows,
        layout.input_dim(),
        (0..steps * rows * layout.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    let w: Vec<f64> = (0..steps * rows * d.n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = check_module(
        &mut beh,
        |m| {
            m.zero_grad();
            let (q, c) = m.forward_sequence(x.clone(), rows)?;
            m.backward_sequence(&c, &Tensor::matrix(steps * rows, d.n_actions, w.clone()));
            Ok(sum_weighted(&q, &w))
        },
        h,
        tol,
        Some(40),
    )?;
    report.extend("behavior", r);

    // monotonic mixer
    let mut mixer = QMixer::new(d.n_agents, d.state_dim, 6, 7, &mut rng);
    let qs = Tensor::matrix(5, d.n_agents, (0..5 * d.n_agents).map(|_| rng.gen_range(-2.0..2.0)).collect());
    let st = Tensor::matrix(5, d.state_dim, (0..5 * d.state_dim).map(|_| rng.gen_range(0.0..1.0)).collect());
    let w: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = check_module(
        &mut mixer,
        |m| {
            m.zero_grad();
            let (y, c) = m.forward_cached(&qs, &st)?;
            m.backward(&c, &w);
            Ok(y.iter().zip(&w).map(|(a, b)| a * b).sum())
        },
        h,
        tol,
        None,
    )?;
    report.extend("mixer", r);

    // the whole objective, intentions on and off
    let method = pure_objective_method();
    for (name, intentions) in [("objective", true), ("objective_flat", false)] {
        let mut nets = NetworkBundle {
            online: toy_networks(d, intentions, &mut rng),
            target: toy_networks(d, intentions, &mut rng),
        };
        let batch = toy_batch(d, &[3, 2], &mut rng);
        let mut method = method.clone();
        if !intentions {
            method.mode = Mode::FlatQmix;
        }
        let r = check_module(
            &mut nets.online,
            |online| Ok(compute_gradients(online, &nets.target, &batch, &method)?.losses.total),
            h,
            tol,
            Some(12),
        )?;
        report.extend(name, r);
    }
    Ok(report)
}
