//! Monotonic low-level mixing, MI-weighted high-level mixing and every loss
//! term of the combined objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::numeric::prob::softmax_in_place;
use crate::numeric::{categorical_kl, Activation, DenseCache, DenseLayer, Distribution, Module, Param, Tensor, PROB_FLOOR};
use crate::policy::{IntentionId, Mlp, MlpCache};

/// Default lower clamp of per-sample MI estimates.
pub const MI_FLOOR: f64 = 1e-6;

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Two-layer mixer whose weights are absolute values of hypernetwork outputs,
/// so the joint value is non-decreasing in every agent value.
#[derive(Clone, Debug)]
pub struct QMixer {
    n_agents: usize,
    embed: usize,
    pub hyper_w1: Mlp,
    pub hyper_b1: DenseLayer,
    pub hyper_w2: Mlp,
    pub hyper_b2: Mlp,
}

pub struct MixCache {
    rows: usize,
    qs: Vec<f64>,
    w1_raw: Vec<f64>,
    w2_raw: Vec<f64>,
    hidden: Vec<f64>,
    c_w1: MlpCache,
    c_b1: DenseCache,
    c_w2: MlpCache,
    c_b2: MlpCache,
}

impl QMixer {
    pub fn new<R: Rng>(n_agents: usize, state_dim: usize, embed: usize, hyper_hidden: usize, rng: &mut R) -> Self {
        QMixer {
            n_agents,
            embed,
            hyper_w1: Mlp::new(
                "mixer.hyper_w1",
                &[state_dim, hyper_hidden, n_agents * embed],
                Activation::Relu,
                Activation::Identity,
                rng,
            ),
            hyper_b1: DenseLayer::new("mixer.hyper_b1", state_dim, embed, Activation::Identity, rng),
            hyper_w2: Mlp::new(
                "mixer.hyper_w2",
                &[state_dim, hyper_hidden, embed],
                Activation::Relu,
                Activation::Identity,
                rng,
            ),
            hyper_b2: Mlp::new("mixer.hyper_b2", &[state_dim, embed, 1], Activation::Relu, Activation::Identity, rng),
        }
    }

    pub fn zeros(n_agents: usize, state_dim: usize, embed: usize, hyper_hidden: usize) -> Self {
        QMixer {
            n_agents,
            embed,
            hyper_w1: Mlp::zeros(
                "mixer.hyper_w1",
                &[state_dim, hyper_hidden, n_agents * embed],
                Activation::Relu,
                Activation::Identity,
            ),
            hyper_b1: DenseLayer::zeros("mixer.hyper_b1", state_dim, embed, Activation::Identity),
            hyper_w2: Mlp::zeros("mixer.hyper_w2", &[state_dim, hyper_hidden, embed], Activation::Relu, Activation::Identity),
            hyper_b2: Mlp::zeros("mixer.hyper_b2", &[state_dim, embed, 1], Activation::Relu, Activation::Identity),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn state_dim(&self) -> usize {
        self.hyper_b1.in_dim()
    }

    fn mix_rows(&self, qs: &[f64], w1_raw: &[f64], b1: &[f64], w2_raw: &[f64], b2: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        let (n, e) = (self.n_agents, self.embed);
        let mut hidden = vec![0.0; rows * e];
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let q = &qs[r * n..(r + 1) * n];
            let w1 = &w1_raw[r * n * e..(r + 1) * n * e];
            for k in 0..e {
                let mut pre = b1[r * e + k];
                for i in 0..n {
                    pre += q[i] * w1[i * e + k].abs();
                }
                hidden[r * e + k] = elu(pre);
            }
            let mut tot = b2[r];
            for k in 0..e {
                tot += hidden[r * e + k] * w2_raw[r * e + k].abs();
            }
            out[r] = tot;
        }
        (out, hidden)
    }

    fn check(&self, qs: &Tensor, states: &Tensor) -> Result<usize> {
        dim_check("mixer agent count", self.n_agents, qs.cols())?;
        dim_check("mixer state width", self.state_dim(), states.cols())?;
        dim_check("mixer rows", qs.rows(), states.rows())?;
        Ok(qs.rows())
    }

    /// Joint values for `[rows, n]` agent values and `[rows, S]` states.
    pub fn forward(&self, qs: &Tensor, states: &Tensor) -> Result<Vec<f64>> {
        let rows = self.check(qs, states)?;
        let w1 = self.hyper_w1.forward(states)?;
        let b1 = self.hyper_b1.forward(states)?;
        let w2 = self.hyper_w2.forward(states)?;
        let b2 = self.hyper_b2.forward(states)?;
        Ok(self.mix_rows(qs.data(), w1.data(), b1.data(), w2.data(), b2.data(), rows).0)
    }

    pub fn forward_cached(&self, qs: &Tensor, states: &Tensor) -> Result<(Vec<f64>, MixCache)> {
        let rows = self.check(qs, states)?;
        let (w1, c_w1) = self.hyper_w1.forward_cached(states.clone())?;
        let (b1, c_b1) = self.hyper_b1.forward_cached(states.clone())?;
        let (w2, c_w2) = self.hyper_w2.forward_cached(states.clone())?;
        let (b2, c_b2) = self.hyper_b2.forward_cached(states.clone())?;
        let (out, hidden) = self.mix_rows(qs.data(), w1.data(), b1.data(), w2.data(), b2.data(), rows);
        Ok((
            out,
            MixCache {
                rows,
                qs: qs.data().to_vec(),
                w1_raw: w1.into_data(),
                w2_raw: w2.into_data(),
                hidden,
                c_w1,
                c_b1,
                c_w2,
                c_b2,
            },
        ))
    }

    /// Accumulate hypernetwork gradients and return `d out / d qs` scaled by
    /// `dout`, shaped `[rows, n]`.
    pub fn backward(&mut self, cache: &MixCache, dout: &[f64]) -> Tensor {
        let (n, e, rows) = (self.n_agents, self.embed, cache.rows);
        let mut dq = vec![0.0; rows * n];
        let mut dw1 = vec![0.0; rows * n * e];
        let mut db1 = vec![0.0; rows * e];
        let mut dw2 = vec![0.0; rows * e];
        let mut db2 = vec![0.0; rows];
        for r in 0..rows {
            let g = dout[r];
            db2[r] = g;
            let q = &cache.qs[r * n..(r + 1) * n];
            for k in 0..e {
                let h = cache.hidden[r * e + k];
                let w2 = cache.w2_raw[r * e + k];
                dw2[r * e + k] = g * h * w2.signum();
                // elu'(pre) = 1 for pre > 0, else elu(pre) + 1
                let dpre = g * w2.abs() * if h > 0.0 { 1.0 } else { h + 1.0 };
                db1[r * e + k] = dpre;
                for i in 0..n {
                    let w = cache.w1_raw[r * n * e + i * e + k];
                    dw1[r * n * e + i * e + k] = dpre * q[i] * w.signum();
                    dq[r * n + i] += dpre * w.abs();
                }
            }
        }
        self.hyper_w1.backward(&cache.c_w1, &Tensor::matrix(rows, n * e, dw1));
        self.hyper_b1.backward(&cache.c_b1, &Tensor::matrix(rows, e, db1));
        self.hyper_w2.backward(&cache.c_w2, &Tensor::matrix(rows, e, dw2));
        self.hyper_b2.backward(&cache.c_b2, &Tensor::matrix(rows, 1, db2));
        Tensor::matrix(rows, n, dq)
    }
}

impl Module for QMixer {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.hyper_w1.visit_params(f);
        self.hyper_b1.visit_params(f);
        self.hyper_w2.visit_params(f);
        self.hyper_b2.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.hyper_w1.visit_params_mut(f);
        self.hyper_b1.visit_params_mut(f);
        self.hyper_w2.visit_params_mut(f);
        self.hyper_b2.visit_params_mut(f);
    }
}

/// Joint value of a single state.
pub fn qmix_mix(mixer: &QMixer, agent_qs: &[f64], state: &[f64]) -> Result<f64> {
    let qs = Tensor::matrix(1, agent_qs.len(), agent_qs.to_vec());
    let s = Tensor::matrix(1, state.len(), state.to_vec());
    Ok(mixer.forward(&qs, &s)?[0])
}

/// Per-sample bound `ln q(z) − ln p(z)`, clamped below at `floor`.
pub fn mi_estimate(p: &Distribution, q: &Distribution, chosen_z: IntentionId, floor: f64) -> f64 {
    mi_from_probs(p.prob(chosen_z), q.prob(chosen_z), floor)
}

pub(crate) fn mi_from_probs(p: f64, q: f64, floor: f64) -> f64 {
    (q.max(PROB_FLOOR).ln() - p.max(PROB_FLOOR).ln()).max(floor)
}

/// `α_j = K_j·Î_j / Σ_m Î_m` over the teams of one step.
pub fn alpha_weights(mi: &[f64], team_sizes: &[usize]) -> Result<Vec<f64>> {
    if mi.is_empty() {
        return Err(Error::Empty("alpha weights need at least one team".into()));
    }
    dim_check("alpha team sizes", mi.len(), team_sizes.len())?;
    if let Some(v) = mi.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Parameter(format!("MI estimate {v} is not positive")));
    }
    let total: f64 = mi.iter().sum();
    Ok(mi.iter().zip(team_sizes).map(|(i, k)| *k as f64 * i / total).collect())
}

/// `Σ_j α_j Q_j`.
pub fn weighted_vdn_mix(team_qs: &[f64], alphas: &[f64]) -> Result<f64> {
    dim_check("weighted mix", team_qs.len(), alphas.len())?;
    Ok(team_qs.iter().zip(alphas).map(|(q, a)| q * a).sum())
}

pub fn loss_i(p: &Distribution, q: &Distribution) -> Result<f64> {
    categorical_kl(p, q)
}

/// Mean KL from `p` to each member posterior.
pub fn loss_a(p: &Distribution, member_qs: &[Distribution]) -> Result<f64> {
    if member_qs.is_empty() {
        return Err(Error::Empty("auxiliary loss needs at least one member".into()));
    }
    let mut s = 0.0;
    for q in member_qs {
        s += categorical_kl(p, q)?;
    }
    Ok(s / member_qs.len() as f64)
}

/// Negated KL between `p` and `q` restricted to the unselected intentions.
pub fn loss_d(p: &Distribution, q: &Distribution, chosen_z: IntentionId) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::Parameter("loss_D is undefined for a single intention".into()));
    }
    dim_check("loss_D support", p.len(), q.len())?;
    Ok(-categorical_kl(&p.without(chosen_z)?, &q.without(chosen_z)?)?)
}

/// KL value with gradients with respect to both sets of logits, given the
/// probability vectors they produce. The gradients are those of the unfloored
/// divergence, so entries far below the floor can still recover.
pub(crate) fn kl_with_grads(p: &[f64], q: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (kl, log_ratio) = kl_parts(p, q);
    let dq: Vec<f64> = q.iter().zip(p).map(|(qi, pi)| qi - pi).collect();
    let dp: Vec<f64> = p.iter().zip(&log_ratio).map(|(pi, lr)| pi * (lr - kl)).collect();
    (kl, dq, dp)
}

/// As [`kl_with_grads`] but differentiating the floored value exactly: an
/// entry held at the floor contributes no gradient, which bounds ascent.
pub(crate) fn floored_kl_with_grads(p: &[f64], q: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (kl, log_ratio) = kl_parts(p, q);
    let gq: Vec<f64> = q
        .iter()
        .zip(p)
        .map(|(&qi, &pi)| if qi >= PROB_FLOOR { -pi / qi } else { 0.0 })
        .collect();
    let gp: Vec<f64> = p
        .iter()
        .zip(&log_ratio)
        .map(|(&pi, &lr)| if pi >= PROB_FLOOR { lr + 1.0 } else { lr })
        .collect();
    (kl, softmax_backward(q, &gq), softmax_backward(p, &gp))
}

fn kl_parts(p: &[f64], q: &[f64]) -> (f64, Vec<f64>) {
    let mut kl = 0.0;
    let mut log_ratio = vec![0.0; p.len()];
    for i in 0..p.len() {
        if p[i] > 0.0 {
            log_ratio[i] = p[i].max(PROB_FLOOR).ln() - q[i].max(PROB_FLOOR).ln();
            kl += p[i] * log_ratio[i];
        }
    }
    (kl, log_ratio)
}

fn softmax_backward(s: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
    s.iter().zip(g).map(|(si, gi)| si * (gi - dot)).collect()
}

/// Softmax of `logits / temperature` with entry `skip` removed.
pub(crate) fn restricted_softmax(logits: &[f64], skip: usize, temperature: f64) -> Vec<f64> {
    let mut v: Vec<f64> = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != skip)
        .map(|(_, x)| *x)
        .collect();
    softmax_in_place(&mut v, temperature);
    v
}

/// Training form of [`loss_d`] from raw logits. Returns the value and the
/// gradients with respect to the posterior logits and the intention Q-values.
pub(crate) fn loss_d_with_grads(q_h: &[f64], temperature: f64, q_logits: &[f64], z: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let p = restricted_softmax(q_h, z, temperature);
    let q = restricted_softmax(q_logits, z, 1.0);
    let (kl, dq_r, dp_r) = floored_kl_with_grads(&p, &q);
    let expand = |g: &[f64], scale: f64| {
        let mut out = vec![0.0; q_h.len()];
        let mut k = 0;
        for (i, o) in out.iter_mut().enumerate() {
            if i != z {
                *o = -g[k] * scale;
                k += 1;
            }
        }
        out
    };
    (-kl, expand(&dq_r, 1.0), expand(&dp_r, 1.0 / temperature))
}

/// `y = r` at terminal steps, else `r + γ·max_next`.
pub fn td_target(reward: f64, gamma: f64, terminal: bool, max_next: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * max_next
    }
}

/// Loss terms of one training step. MI terms are summed over teams and
/// averaged over valid steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub td_low: f64,
    pub td_high: f64,
    pub l_i: f64,
    pub l_a: f64,
    pub l_d: f64,
    pub total: f64,
}

pub fn total_objective(td_high: f64, td_low: f64, l_i: f64, l_a: f64, l_d: f64, lambda1: f64, lambda2: f64) -> f64 {
    td_high + td_low + l_i + lambda1 * l_a + lambda2 * l_d
}

impl LossBundle {
    pub fn new(td_low: f64, td_high: f64, l_i: f64, l_a: f64, l_d: f64, lambda1: f64, lambda2: f64) -> Self {
        LossBundle {
            td_low,
            td_high,
            l_i,
            l_a,
            l_d,
            total: total_objective(td_high, td_low, l_i, l_a, l_d, lambda1, lambda2),
        }
    }
}
