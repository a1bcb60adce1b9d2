use serde::{Deserialize, Serialize};

use super::networks::{NetworkBundle, Networks};
use super::replay::EpisodeBatch;
use crate::config::{MethodConfig, MiTarget, Mode};
use crate::error::{Error, Result};
use crate::mixer::{alpha_weights, kl_with_grads, loss_d_with_grads, mi_from_probs, LossBundle};
use crate::numeric::prob::softmax_in_place;
use crate::numeric::{Module, OptimizerState, Tensor};

/// Loss terms plus the diagnostics logged next to them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub losses: LossBundle,
    pub mean_alpha: f64,
    pub mean_mi: f64,
    /// Mean intrinsic reward added to the low-level targets, already scaled by β.
    pub intrinsic: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

struct TeamRow {
    z: usize,
    size: usize,
    /// First posterior row of this team; the commander's row is `post_cmd`.
    post_start: usize,
    post_cmd: usize,
}

fn softmax_row(v: &[f64], temperature: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out, temperature);
    out
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Zero the online gradients and fill them with the gradient of the combined
/// objective on `batch`. Targets are read, never written.
pub fn compute_gradients(
    online: &mut Networks,
    target: &Networks,
    batch: &EpisodeBatch,
    method: &MethodConfig,
) -> Result<TrainStats> {
    online.zero_grad();
    if batch.is_empty() || batch.max_len == 0 {
        return Err(Error::Empty("training batch".into()));
    }
    let b_n = batch.len();
    let n = batch.episodes[0].n_agents;
    let obs_dim = batch.episodes[0].obs_dim;
    let state_dim = batch.episodes[0].state_dim;
    let tm = batch.max_len;
    let rows = b_n * n;
    let layout = online.behavior.layout;
    let n_actions = online.behavior.n_actions();
    let uses_z = online.uses_intentions();
    let n_z = online.n_z();
    let temp = method.temperature;

    // valid (t, b) pairs, time-major
    let mut steps: Vec<(usize, usize)> = Vec::with_capacity(batch.valid_steps());
    let mut step_index = vec![usize::MAX; tm * b_n];
    for t in 0..tm {
        for (b, ep) in batch.episodes.iter().enumerate() {
            if t < ep.len() {
                step_index[t * b_n + b] = steps.len();
                steps.push((t, b));
            }
        }
    }
    let v = steps.len() as f64;

    let obs_f64 = |b: usize, t: usize, i: usize| -> Vec<f64> {
        batch.episodes[b].agent_obs(t, i).iter().map(|x| *x as f64).collect()
    };

    // ---- high level: intention Q, posteriors, MI estimates, α
    let mut intrinsic = vec![0.0; steps.len()];
    let mut stats = TrainStats::default();
    let mut td_high = 0.0;
    let (mut l_i, mut l_a, mut l_d) = (0.0, 0.0, 0.0);
    let mut high = None;
    if uses_z {
        let mut teams: Vec<TeamRow> = Vec::new();
        let mut team_start = Vec::with_capacity(steps.len() + 1);
        let mut cmd_x = Vec::new();
        let mut post_x = Vec::new();
        let mut post_rows = 0;
        for &(t, b) in &steps {
            team_start.push(teams.len());
            let ep = &batch.episodes[b];
            for (j, team) in ep.partitions[t].teams.iter().enumerate() {
                cmd_x.extend(ep.agent_obs(t, team.commander).iter().map(|x| *x as f64));
                let start = post_rows;
                let mut cmd_row = start;
                for &k in &team.members {
                    if k == team.commander {
                        cmd_row = post_rows;
                    }
                    post_x.extend(ep.agent_obs(t, team.commander).iter().map(|x| *x as f64));
                    post_x.extend(ep.agent_obs(t + 1, k).iter().map(|x| *x as f64));
                    post_rows += 1;
                }
                teams.push(TeamRow {
                    z: ep.z[t][j],
                    size: team.members.len(),
                    post_start: start,
                    post_cmd: cmd_row,
                });
            }
        }
        team_start.push(teams.len());
        let h_rows = teams.len();
        let cmd_x = Tensor::matrix(h_rows, obs_dim, cmd_x);
        let intention = online.intention.as_ref().expect("intention net");
        let target_int = target.intention.as_ref().expect("target intention net");
        let q_h_target = target_int.mlp.forward(&cmd_x)?;
        let (q_h, int_cache) = intention.mlp.forward_cached(cmd_x)?;
        let posterior = online.posterior.as_ref().expect("posterior net");
        let (post_logits, post_cache) = posterior.mlp.forward_cached(Tensor::matrix(post_rows, 2 * obs_dim, post_x))?;
        q_h.check_finite("intention Q")?;
        post_logits.check_finite("posterior logits")?;
        let post_probs: Vec<Vec<f64>> = (0..post_rows).map(|r| softmax_row(post_logits.row(r), 1.0)).collect();

        let boltz: Vec<Vec<f64>> = (0..h_rows).map(|h| softmax_row(q_h.row(h), temp)).collect();
        let mi: Vec<f64> = teams
            .iter()
            .enumerate()
            .map(|(h, tr)| mi_from_probs(boltz[h][tr.z], post_probs[tr.post_cmd][tr.z], method.mi_floor))
            .collect();
        let mut alpha = vec![1.0; h_rows];
        for s in 0..steps.len() {
            let (a, e) = (team_start[s], team_start[s + 1]);
            if method.mode != Mode::NoWeighting {
                let sizes: Vec<usize> = teams[a..e].iter().map(|t| t.size).collect();
                alpha[a..e].copy_from_slice(&alpha_weights(&mi[a..e], &sizes)?);
            }
            if method.beta != 0.0 {
                let cap = (n_z as f64).ln();
                let m: f64 = mi[a..e].iter().map(|x| x.min(cap)).sum::<f64>() / (e - a) as f64;
                intrinsic[s] = method.beta * m;
            }
        }

        // weighted TD on the high level
        let mut d_qh = vec![0.0; h_rows * n_z];
        for (s, &(t, b)) in steps.iter().enumerate() {
            let ep = &batch.episodes[b];
            let (a, e) = (team_start[s], team_start[s + 1]);
            let q_tot: f64 = (a..e).map(|h| alpha[h] * q_h.row(h)[teams[h].z]).sum();
            let next = if ep.terminal[t] {
                0.0
            } else {
                let s1 = step_index[(t + 1) * b_n + b];
                (team_start[s1]..team_start[s1 + 1])
                    .map(|h| alpha[h] * max_of(q_h_target.row(h)))
                    .sum()
            };
            let y = ep.rewards[t] + if ep.terminal[t] { 0.0 } else { method.gamma * next };
            let err = q_tot - y;
            td_high += err * err / v;
            for h in a..e {
                d_qh[h * n_z + teams[h].z] += 2.0 * err * alpha[h] / v;
            }
        }

        // information losses
        let mut d_post = vec![0.0; post_rows * n_z];
        for (h, tr) in teams.iter().enumerate() {
            let p = match method.mi_target {
                MiTarget::Sampled => {
                    let mut p = vec![0.0; n_z];
                    p[tr.z] = 1.0;
                    p
                }
                MiTarget::Boltzmann => boltz[h].clone(),
            };
            let mut dp_total = vec![0.0; n_z];
            let (kl_i, dq, dp) = kl_with_grads(&p, &post_probs[tr.post_cmd]);
            l_i += kl_i / v;
            for z in 0..n_z {
                d_post[tr.post_cmd * n_z + z] += dq[z] / v;
                dp_total[z] += dp[z];
            }
            let k = tr.size as f64;
            for r in tr.post_start..tr.post_start + tr.size {
                let (kl_a, dq, dp) = kl_with_grads(&p, &post_probs[r]);
                l_a += kl_a / (k * v);
                for z in 0..n_z {
                    d_post[r * n_z + z] += method.lambda1 * dq[z] / (k * v);
                    dp_total[z] += method.lambda1 * dp[z] / k;
                }
            }
            if n_z >= 2 {
                let (val, g_post, g_qh) = loss_d_with_grads(q_h.row(h), temp, post_logits.row(tr.post_cmd), tr.z);
                l_d += val / v;
                for z in 0..n_z {
                    d_post[tr.post_cmd * n_z + z] += method.lambda2 * g_post[z] / v;
                }
                if method.mi_grad_to_intention {
                    for z in 0..n_z {
                        d_qh[h * n_z + z] += method.lambda2 * g_qh[z] / v;
                    }
                }
            }
            if method.mi_grad_to_intention && method.mi_target == MiTarget::Boltzmann {
                for z in 0..n_z {
                    d_qh[h * n_z + z] += dp_total[z] / (temp * v);
                }
            }
        }
        stats.mean_alpha = alpha.iter().sum::<f64>() / h_rows as f64;
        stats.mean_mi = mi.iter().sum::<f64>() / h_rows as f64;
        high = Some((int_cache, Tensor::matrix(h_rows, n_z, d_qh), post_cache, Tensor::matrix(post_rows, n_z, d_post)));
    }

    // ---- low level: behaviour sequences and the monotonic mixer
    let in_dim = layout.input_dim();
    let mut x = vec![0.0; tm * rows * in_dim];
    let mut scratch = Vec::with_capacity(in_dim);
    for &(t, b) in &steps {
        let ep = &batch.episodes[b];
        let assign = if uses_z { ep.partitions[t].assignment() } else { Vec::new() };
        for i in 0..n {
            scratch.clear();
            let z = if uses_z { Some(ep.z[t][assign[i]]) } else { None };
            layout.write_input(&mut scratch, &obs_f64(b, t, i), z, i)?;
            let r = t * rows + b * n + i;
            x[r * in_dim..(r + 1) * in_dim].copy_from_slice(&scratch);
        }
    }
    let x = Tensor::matrix(tm * rows, in_dim, x);
    let q_target = target.behavior.forward_sequence_eval(&x, rows)?;
    let (q, beh_cache) = online.behavior.forward_sequence(x, rows)?;

    let mut chosen = Vec::with_capacity(steps.len() * n);
    let mut states = Vec::with_capacity(steps.len() * state_dim);
    let mut next_rows = Vec::new();
    let mut next_q = Vec::new();
    let mut next_states = Vec::new();
    for &(t, b) in &steps {
        let ep = &batch.episodes[b];
        for i in 0..n {
            chosen.push(q.row(t * rows + b * n + i)[ep.actions[t][i]]);
        }
        states.extend(ep.states[t].iter().map(|x| *x as f64));
        if !ep.terminal[t] {
            next_rows.push(step_index[t * b_n + b]);
            for i in 0..n {
                next_q.push(max_of(q_target.row((t + 1) * rows + b * n + i)));
            }
            next_states.extend(ep.states[t + 1].iter().map(|x| *x as f64));
        }
    }
    let nv = steps.len();
    let mut bootstrap = vec![0.0; nv];
    if !next_rows.is_empty() {
        let m = next_rows.len();
        let tgt = target
            .mixer
            .forward(&Tensor::matrix(m, n, next_q), &Tensor::matrix(m, state_dim, next_states))?;
        for (k, s) in next_rows.into_iter().enumerate() {
            bootstrap[s] = tgt[k];
        }
    }
    let (q_tot, mix_cache) = online
        .mixer
        .forward_cached(&Tensor::matrix(nv, n, chosen), &Tensor::matrix(nv, state_dim, states))?;
    let mut td_low = 0.0;
    let mut dout = vec![0.0; nv];
    for (s, &(t, b)) in steps.iter().enumerate() {
        let ep = &batch.episodes[b];
        let y = ep.rewards[t] + intrinsic[s] + if ep.terminal[t] { 0.0 } else { method.gamma * bootstrap[s] };
        let err = q_tot[s] - y;
        td_low += err * err / v;
        dout[s] = 2.0 * err / v;
    }

    stats.intrinsic = intrinsic.iter().sum::<f64>() / v;
    stats.losses = LossBundle::new(td_low, td_high, l_i, l_a, l_d, method.lambda1, method.lambda2);
    if !stats.losses.total.is_finite() {
        let eps: Vec<String> = batch
            .episodes
            .iter()
            .map(|e| format!("seed {} ({} steps)", e.seed, e.len()))
            .collect();
        return Err(Error::Numeric(format!(
            "non-finite loss {:?} on batch [{}]",
            stats.losses,
            eps.join(", ")
        )));
    }

    // ---- backward
    let d_chosen = online.mixer.backward(&mix_cache, &dout);
    let mut dq = Tensor::zeros(vec![tm * rows, n_actions]);
    for (s, &(t, b)) in steps.iter().enumerate() {
        let ep = &batch.episodes[b];
        for i in 0..n {
            let r = t * rows + b * n + i;
            dq.row_mut(r)[ep.actions[t][i]] += d_chosen.row(s)[i];
        }
    }
    online.behavior.backward_sequence(&beh_cache, &dq);
    if let Some((int_cache, d_qh, post_cache, d_post)) = high {
        online.intention.as_mut().expect("intention net").mlp.backward(&int_cache, &d_qh);
        online.posterior.as_mut().expect("posterior net").mlp.backward(&post_cache, &d_post);
    }
    Ok(stats)
}

/// One optimisation step on `batch`: gradients, global-norm clipping, RMSprop.
pub fn train_step(
    nets: &mut NetworkBundle,
    batch: &EpisodeBatch,
    opt: &mut OptimizerState,
    method: &MethodConfig,
    grad_clip: f64,
) -> Result<TrainStats> {
    let mut stats = compute_gradients(&mut nets.online, &nets.target, batch, method)?;
    stats.grad_norm = nets.online.grad_norm();
    if grad_clip > 0.0 && stats.grad_norm > grad_clip {
        nets.online.scale_grads(grad_clip / stats.grad_norm);
    }
    opt.step(&mut nets.online)?;
    Ok(stats)
}
