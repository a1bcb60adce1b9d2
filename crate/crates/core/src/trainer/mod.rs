//! Episode replay, exploration schedule, target maintenance and the training
//! loop.

mod check;
mod learn;
mod log;
mod networks;
mod replay;
mod rollout;
mod schedule;

use std::path::Path;

pub use check::{gradcheck_suite, pure_objective_method, toy_batch, toy_networks, ToyDims};
pub use learn::{compute_gradients, train_step, TrainStats};
pub use log::{write_log_files, EvalPoint, LossRow, TrainingLog};
pub use networks::{sync_targets, NetworkBundle, Networks};
pub use replay::{quantize, Episode, EpisodeBatch, ReplayBuffer};
pub use rollout::{intention_rows, rollout, RolloutOutcome, RolloutSpec};
pub use schedule::{epsilon_at, Schedule};

use crate::config::ExperimentConfig;
use crate::env::{make_env, DumpWriter, TrajectoryRecord};
use crate::error::Result;
use crate::eval::{evaluate, intention_stats, IntentionReport};
use crate::mixer::LossBundle;
use crate::numeric::{derive_seed, rng_from_seed, OptimizerState};

/// Trained networks together with their log.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub log: TrainingLog,
    pub nets: NetworkBundle,
}

#[derive(Default)]
struct StatsAcc {
    sum: TrainStats,
    n: usize,
}

impl StatsAcc {
    fn add(&mut self, s: &TrainStats) {
        let (a, b) = (&mut self.sum.losses, &s.losses);
        a.td_low += b.td_low;
        a.td_high += b.td_high;
        a.l_i += b.l_i;
        a.l_a += b.l_a;
        a.l_d += b.l_d;
        a.total += b.total;
        self.sum.mean_alpha += s.mean_alpha;
        self.sum.mean_mi += s.mean_mi;
        self.sum.intrinsic += s.intrinsic;
        self.sum.grad_norm += s.grad_norm;
        self.n += 1;
    }

    fn take(&mut self) -> TrainStats {
        let k = self.n.max(1) as f64;
        let s = std::mem::take(&mut self.sum);
        self.n = 0;
        TrainStats {
            losses: LossBundle {
                td_low: s.losses.td_low / k,
                td_high: s.losses.td_high / k,
                l_i: s.losses.l_i / k,
                l_a: s.losses.l_a / k,
                l_d: s.losses.l_d / k,
                total: s.losses.total / k,
            },
            mean_alpha: s.mean_alpha / k,
            mean_mi: s.mean_mi / k,
            intrinsic: s.intrinsic / k,
            grad_norm: s.grad_norm / k,
        }
    }
}

/// Train with the first seed of `config.run.seeds`, writing nothing to disk.
pub fn run_training(config: &ExperimentConfig) -> Result<TrainingLog> {
    let seed = config.run.seeds.first().copied().unwrap_or(0);
    Ok(train_seed(config, seed, None)?.log)
}

/// Full training run for one seed. With `out` set, the config echo, CSVs,
/// summary, checkpoints and optional trajectory dump are written there.
pub fn train_seed(config: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<RunResult> {
    config.validate()?;
    let mut env = make_env(&config.env)?;
    let mut nets = NetworkBundle::new(config, &mut rng_from_seed(derive_seed(seed, 0)));
    let mut policy_rng = rng_from_seed(derive_seed(seed, 1));
    let mut sample_rng = rng_from_seed(derive_seed(seed, 2));
    let mut opt = OptimizerState::new(config.train.rmsprop());
    let mut buffer = ReplayBuffer::new(config.train.buffer_episodes);
    let schedule = Schedule::from(&config.schedule);
    let uses_z = config.method.mode.uses_intentions();
    let n_z = config.method.n_z;

    let mut log = TrainingLog {
        seed,
        mode: config.method.mode.as_str().to_string(),
        config_hash: config.hash(),
        ..TrainingLog::default()
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let mut dump = match out {
        Some(dir) if config.run.dump_trajectories => {
            Some(DumpWriter::create(&dir.join("trajectories.jsonl"), &log.header())?)
        }
        _ => None,
    };

    let eval_point = |nets: &NetworkBundle,
                      step: usize,
                      episodes: usize,
                      losses: TrainStats,
                      window: Option<&IntentionReport>|
     -> Result<EvalPoint> {
        let m = evaluate(&nets.online, config, config.eval.episodes, seed)?;
        Ok(EvalPoint {
            step,
            episodes,
            epsilon: epsilon_at(step, &schedule),
            mean_return_per_agent: m.mean_return_per_agent,
            success_rate: m.success_rate,
            losses,
            mean_run_length: window.map(|r| r.mean_run_length()),
            tv_distance: window.map(|r| r.tv_distance()),
            agreement: window.map(|r| r.agreement),
        })
    };

    log.points.push(eval_point(&nets, 0, 0, TrainStats::default(), None)?);
    let mut acc = StatsAcc::default();
    let mut window: Vec<TrajectoryRecord> = Vec::new();
    let (mut steps, mut episodes) = (0usize, 0usize);
    let mut next_eval = config.eval.interval_steps.max(1);
    while steps < config.train.total_steps {
        let spec = RolloutSpec {
            epsilon: epsilon_at(steps, &schedule),
            fixed_z: None,
            record: uses_z || dump.is_some(),
            episode_index: episodes,
        };
        let env_seed = derive_seed(seed, (1 << 20) + episodes as u64);
        let outcome = rollout(&nets.online, &config.method, &mut env, env_seed, &spec, &mut policy_rng)?;
        steps += outcome.episode.len();
        episodes += 1;
        if let Some(w) = dump.as_mut() {
            for r in &outcome.records {
                w.write(r)?;
            }
        }
        if uses_z {
            let rep = intention_stats(&outcome.records, n_z)?;
            log.episode_continuity.push(rep.mean_run_length());
            window.extend(outcome.records);
        }
        buffer.push(outcome.episode);

        if let Some(batch) = buffer.sample_batch(config.train.batch_size, &mut sample_rng) {
            let stats = train_step(&mut nets, &batch, &mut opt, &config.method, config.train.grad_clip)?;
            acc.add(&stats);
            log.losses.push(LossRow { step: steps, stats });
        }
        sync_targets(&mut nets, episodes, config.train.target_sync_episodes);
        if let (Some(dir), k) = (out, config.run.checkpoint_every) {
            if k > 0 && episodes % k == 0 {
                nets.save(&dir.join(format!("episode_{episodes}.ckpt")))?;
            }
        }
        if steps >= next_eval || steps >= config.train.total_steps {
            while next_eval <= steps {
                next_eval += config.eval.interval_steps.max(1);
            }
            let rep = if uses_z { Some(intention_stats(&window, n_z)?) } else { None };
            window.clear();
            log.points.push(eval_point(&nets, steps, episodes, acc.take(), rep.as_ref())?);
            ::log::info!(
                "seed {seed} step {steps} episodes {episodes} return/agent {:.3}",
                log.points.last().map_or(0.0, |p| p.mean_return_per_agent)
            );
        }
    }
    log.total_steps = steps;
    log.total_episodes = episodes;
    log.final_eval = evaluate(&nets.online, config, config.eval.final_episodes, seed)?;

    if let Some(w) = dump {
        w.finish()?;
    }
    if let Some(dir) = out {
        write_log_files(dir, config, &log)?;
        nets.save(&dir.join("final.ckpt"))?;
    }
    Ok(RunResult { log, nets })
}
