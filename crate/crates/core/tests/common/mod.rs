#![allow(dead_code)]

use std::sync::Arc;

use jim_core::config::{MethodConfig, MiTarget, Mode};
use jim_core::mixer::{alpha_weights, mi_estimate};
use jim_core::numeric::{rng_from_seed, softmax, Distribution, Module, OptimizerState, RmsPropConfig, Tensor};
use jim_core::partition::Team;
use jim_core::policy::{IntentionNet, PosteriorNet};
use jim_core::trainer::{compute_gradients, toy_networks, Episode, EpisodeBatch, ToyDims};
use jim_core::TeamPartition;
use rand::Rng;

/// Outcome of comparing the trainer's intention-net gradient with
/// `2·(Q_tot − y)·Σ α_j ∂Q_j/∂θ` built from finite differences.
pub struct IdentityCheck {
    pub max_abs_err: f64,
    pub params: usize,
    pub alphas: Vec<f64>,
}

fn q_of(net: &IntentionNet, obs: &[f64], z: usize) -> f64 {
    net.mlp.forward(&Tensor::matrix(1, obs.len(), obs.to_vec())).unwrap().data()[z]
}

fn shift(net: &mut IntentionNet, blk: usize, k: usize, delta: f64) {
    let mut b = 0;
    net.visit_params_mut(&mut |p| {
        if b == blk {
            p.value.data_mut()[k] += delta;
        }
        b += 1;
    });
}

pub fn gradient_identity(seed: u64) -> IdentityCheck {
    let d = ToyDims {
        n_agents: 4,
        ..ToyDims::default()
    };
    let mut rng = rng_from_seed(seed);
    let mut online = toy_networks(d, true, &mut rng);
    let target = online.clone();

    let mut ep = Episode::new(d.n_agents, d.obs_dim, d.state_dim, seed);
    for _ in 0..2 {
        ep.obs.push((0..d.n_agents * d.obs_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect());
        ep.states.push((0..d.state_dim).map(|_| rng.gen_range(0.0f32..1.0)).collect());
    }
    let teams = vec![
        Team {
            commander: 0,
            members: vec![0, 1],
        },
        Team {
            commander: 3,
            members: vec![2, 3],
        },
    ];
    ep.partitions.push(TeamPartition { n: 4, teams: teams.clone() });
    ep.z.push(vec![1, 2]);
    ep.actions.push(vec![0, 1, 2, 0]);
    ep.rewards.push(0.7);
    ep.terminal.push(true);
    let ep = Arc::new(ep);

    let method = MethodConfig {
        mode: Mode::FullMethod,
        beta: 0.0,
        lambda1: 0.0,
        lambda2: 0.0,
        mi_grad_to_intention: false,
        mi_target: MiTarget::Sampled,
        temperature: 1.0,
        n_z: d.n_z,
        ..MethodConfig::default()
    };
    let batch = EpisodeBatch::from_episodes(vec![ep.clone()]);
    compute_gradients(&mut online, &target, &batch, &method).unwrap();
    let mut autodiff = Vec::new();
    online.intention.as_ref().unwrap().visit_params(&mut |p| autodiff.extend_from_slice(p.grad.data()));

    // oracle: recompute α and Q_tot from the public pieces
    let obs = |t: usize, i: usize| -> Vec<f64> { ep.agent_obs(t, i).iter().map(|x| *x as f64).collect() };
    let intention = online.intention.clone().unwrap();
    let posterior = online.posterior.as_ref().unwrap();
    let mut mi = Vec::new();
    let mut qs = Vec::new();
    for (team, &z) in teams.iter().zip(&ep.z[0]) {
        let c = team.commander;
        let qh = intention.mlp.forward(&Tensor::matrix(1, d.obs_dim, obs(0, c))).unwrap();
        let p = Distribution::from_logits(qh.data(), method.temperature).unwrap();
        let x = [obs(0, c), obs(1, c)].concat();
        let logits = posterior.mlp.forward(&Tensor::matrix(1, x.len(), x)).unwrap();
        let q = Distribution::new(softmax(logits.data(), 1.0).unwrap()).unwrap();
        mi.push(mi_estimate(&p, &q, z, method.mi_floor));
        qs.push(qh.data()[z]);
    }
    let alphas = alpha_weights(&mi, &[2, 2]).unwrap();
    let q_tot: f64 = alphas.iter().zip(&qs).map(|(a, q)| a * q).sum();
    let td = q_tot - ep.rewards[0];

    let h = 1e-5;
    let mut expected = Vec::new();
    let mut probe = intention.clone();
    let mut values = Vec::new();
    probe.visit_params(&mut |p| values.push(p.value.len()));
    for (blk, &len) in values.iter().enumerate() {
        for k in 0..len {
            let mut sum = 0.0;
            for (j, (team, &z)) in teams.iter().zip(&ep.z[0]).enumerate() {
                let o = obs(0, team.commander);
                shift(&mut probe, blk, k, h);
                let up = q_of(&probe, &o, z);
                shift(&mut probe, blk, k, -2.0 * h);
                let down = q_of(&probe, &o, z);
                shift(&mut probe, blk, k, h);
                sum += alphas[j] * (up - down) / (2.0 * h);
            }
            expected.push(2.0 * td * sum);
        }
    }
    let max_abs_err = autodiff
        .iter()
        .zip(&expected)
        .map(|(a, e)| (a - e).abs())
        .fold(0.0, f64::max);
    IdentityCheck {
        max_abs_err,
        params: expected.len(),
        alphas,
    }
}

/// Discrete channel `z → o′` whose noise level depends on a context `o`.
pub struct Channel {
    pub symbols: usize,
    /// Probability of replacing `z` by a uniform symbol, per context.
    pub noise: Vec<f64>,
}

impl Channel {
    pub fn sixteen() -> Self {
        Channel {
            symbols: 16,
            noise: vec![0.1, 0.5],
        }
    }

    fn emit(&self, ctx: usize, z: usize, o2: usize) -> f64 {
        let n = self.symbols as f64;
        let e = self.noise[ctx];
        (1.0 - e) * if z == o2 { 1.0 } else { 0.0 } + e / n
    }

    /// `I(z; o′ | o)` with `z` and `o` uniform, from the joint table.
    pub fn exact_mi(&self) -> f64 {
        let n = self.symbols;
        let mut mi = 0.0;
        for ctx in 0..self.noise.len() {
            for z in 0..n {
                for o2 in 0..n {
                    let pz = 1.0 / n as f64;
                    let po2: f64 = (0..n).map(|zz| self.emit(ctx, zz, o2) * pz).sum();
                    let joint = pz * self.emit(ctx, z, o2);
                    if joint > 0.0 {
                        mi += joint / self.noise.len() as f64 * (joint / (pz * po2)).ln();
                    }
                }
            }
        }
        mi
    }

    fn obs_dim(&self) -> usize {
        self.noise.len() + self.symbols
    }

    /// Rows `(ctx, z, o′)` with their joint weights and posterior inputs.
    fn table(&self) -> (Vec<(usize, usize, usize)>, Vec<f64>, Tensor) {
        let (n, c, d) = (self.symbols, self.noise.len(), self.obs_dim());
        let mut rows = Vec::new();
        let mut w = Vec::new();
        let mut x = Vec::new();
        for ctx in 0..c {
            for z in 0..n {
                for o2 in 0..n {
                    rows.push((ctx, z, o2));
                    w.push(self.emit(ctx, z, o2) / (n * c) as f64);
                    let mut a = vec![0.0; d];
                    a[ctx] = 1.0;
                    let mut b = vec![0.0; d];
                    b[ctx] = 1.0;
                    b[c + o2] = 1.0;
                    x.extend(a);
                    x.extend(b);
                }
            }
        }
        let len = rows.len();
        (rows, w, Tensor::matrix(len, 2 * d, x))
    }
}

pub struct MiRun {
    pub truth: f64,
    /// Expected unclamped estimate after every training round.
    pub trace: Vec<f64>,
}

impl MiRun {
    pub fn max_excess(&self) -> f64 {
        self.trace.iter().map(|e| e - self.truth).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn final_gap(&self) -> f64 {
        (self.truth - self.trace.last().copied().unwrap_or(0.0)).abs()
    }
}

/// Fit a posterior network to the channel by exact expected cross-entropy and
/// record the variational estimate `E[ln q(z|o,o′) − ln p(z|o)]` as it trains.
pub fn mi_channel_run(ch: &Channel, rounds: usize, seed: u64) -> MiRun {
    let n = ch.symbols;
    let (rows, w, x) = ch.table();
    let mut post = PosteriorNet::new(ch.obs_dim(), n, &mut rng_from_seed(seed));
    let mut opt = OptimizerState::new(RmsPropConfig {
        lr: 3e-3,
        ..RmsPropConfig::default()
    });
    let prior = Distribution::uniform(n);
    let mut trace = Vec::new();
    for round in 0..=rounds {
        post.zero_grad();
        let (logits, cache) = post.mlp.forward_cached(x.clone()).unwrap();
        let mut g = vec![0.0; rows.len() * n];
        let mut estimate = 0.0;
        for (r, &(_, z, _)) in rows.iter().enumerate() {
            let q = softmax(logits.row(r), 1.0).unwrap();
            estimate += w[r] * mi_estimate(&prior, &Distribution::new(q.clone()).unwrap(), z, f64::NEG_INFINITY);
            for k in 0..n {
                g[r * n + k] = w[r] * (q[k] - if k == z { 1.0 } else { 0.0 });
            }
        }
        trace.push(estimate);
        if round == rounds {
            break;
        }
        post.mlp.backward(&cache, &Tensor::matrix(rows.len(), n, g));
        opt.step(&mut post).unwrap();
    }
    MiRun {
        truth: ch.exact_mi(),
        trace,
    }
}
