use rand::distributions::{Distribution as _, WeightedIndex};
use rand::Rng;

use super::networks::Networks;
use super::replay::{quantize, Episode};
use crate::config::{IntentionSelection, MethodConfig};
use crate::env::{Env, TeamRecord, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::numeric::{argmax, softmax, Tensor};
use crate::partition::{greedy_partition, TeamPartition};
use crate::policy::{select_discrete, IntentionNet};

/// How one episode is played.
#[derive(Clone, Copy, Debug)]
pub struct RolloutSpec {
    /// Exploration rate for both intentions and actions.
    pub epsilon: f64,
    /// Force every team onto this intention.
    pub fixed_z: Option<usize>,
    /// Keep per-step trajectory records, including observer choices.
    pub record: bool,
    pub episode_index: usize,
}

impl RolloutSpec {
    pub fn greedy(episode_index: usize) -> Self {
        RolloutSpec {
            epsilon: 0.0,
            fixed_z: None,
            record: false,
            episode_index,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RolloutOutcome {
    pub episode: Episode,
    pub total_reward: f64,
    pub success: f64,
    pub records: Vec<TrajectoryRecord>,
}

/// Q-values of the intention network for several observations at once.
pub fn intention_rows(net: &IntentionNet, rows: &[&[f64]]) -> Result<Tensor> {
    let x = Tensor::stack_rows(rows)?;
    net.mlp.forward(&x)
}

fn choose_intention<R: Rng>(q: &[f64], method: &MethodConfig, epsilon: f64, rng: &mut R) -> Result<usize> {
    match method.intention_selection {
        IntentionSelection::EpsilonGreedy => select_discrete(q, epsilon, rng, None),
        IntentionSelection::Boltzmann if epsilon == 0.0 => Ok(argmax(q)),
        IntentionSelection::Boltzmann => {
            let p = softmax(q, method.temperature)?;
            let w = WeightedIndex::new(&p).map_err(|e| Error::Numeric(format!("intention sampling: {e}")))?;
            Ok(w.sample(rng))
        }
    }
}

/// Play one episode from `env_seed`.
pub fn rollout<R: Rng>(
    nets: &Networks,
    method: &MethodConfig,
    env: &mut Env,
    env_seed: u64,
    spec: &RolloutSpec,
    rng: &mut R,
) -> Result<RolloutOutcome> {
    let n = env.n_agents();
    let obs_dim = env.config().obs_dim();
    let state_dim = env.config().state_dim();
    let layout = nets.behavior.layout;
    let mut ep = Episode::new(n, obs_dim, state_dim, env_seed);
    let mut records = Vec::new();

    let mut raw = env.reset(env_seed)?;
    let mut hidden = nets.behavior.initial_hidden(n);
    let mut input = Vec::with_capacity(n * layout.input_dim());
    loop {
        let flat: Vec<f64> = raw.iter().flatten().copied().collect();
        let stored = quantize(&flat);
        let obs: Vec<f64> = stored.iter().map(|v| *v as f64).collect();
        ep.obs.push(stored);
        ep.states.push(quantize(&env.global_state()));
        let agent_obs = |i: usize| &obs[i * obs_dim..(i + 1) * obs_dim];

        let (partition, zs, team_records) = match &nets.intention {
            Some(net) => {
                let part = greedy_partition(&env.visibility(), rng);
                let cmd_rows: Vec<&[f64]> = part.teams.iter().map(|t| agent_obs(t.commander)).collect();
                let q = intention_rows(net, &cmd_rows)?;
                let mut zs = Vec::with_capacity(part.len());
                for j in 0..part.len() {
                    zs.push(match spec.fixed_z {
                        Some(z) => z,
                        None => choose_intention(q.row(j), method, spec.epsilon, rng)?,
                    });
                }
                let teams = if spec.record {
                    let all: Vec<&[f64]> = (0..n).map(agent_obs).collect();
                    let qa = intention_rows(net, &all)?;
                    Some(
                        part.teams
                            .iter()
                            .zip(&zs)
                            .map(|(t, &z)| TeamRecord {
                                commander: t.commander,
                                members: t.members.clone(),
                                z,
                                observer_z: t.members.iter().map(|&m| argmax(qa.row(m))).collect(),
                            })
                            .collect(),
                    )
                } else {
                    None
                };
                (part, zs, teams)
            }
            None => (TeamPartition::singletons(n), vec![0; n], None),
        };

        let assign = partition.assignment();
        input.clear();
        for i in 0..n {
            let z = nets.intention.as_ref().map(|_| zs[assign[i]]);
            layout.write_input(&mut input, agent_obs(i), z, i)?;
        }
        let x = Tensor::matrix(n, layout.input_dim(), std::mem::take(&mut input));
        let (q, h) = nets.behavior.step(&x, &hidden)?;
        input = x.into_data();
        hidden = h;
        let mut actions = Vec::with_capacity(n);
        for i in 0..n {
            actions.push(select_discrete(q.row(i), spec.epsilon, rng, None)?);
        }

        let positions = if spec.record { env.agent_positions() } else { Vec::new() };
        let prey = if spec.record { env.prey_positions() } else { Vec::new() };
        let res = env.step(&actions)?;
        if spec.record {
            records.push(TrajectoryRecord {
                episode: spec.episode_index,
                step: ep.len(),
                positions,
                prey,
                actions: actions.clone(),
                reward: res.reward,
                teams: team_records,
            });
        }
        ep.partitions.push(partition);
        ep.z.push(zs);
        ep.actions.push(actions);
        ep.rewards.push(res.reward);
        ep.terminal.push(res.done);
        raw = res.obs;
        if res.done {
            break;
        }
    }
    let flat: Vec<f64> = raw.iter().flatten().copied().collect();
    ep.obs.push(quantize(&flat));
    ep.states.push(quantize(&env.global_state()));
    Ok(RolloutOutcome {
        total_reward: ep.total_reward(),
        success: env.success(),
        episode: ep,
        records,
    })
}
