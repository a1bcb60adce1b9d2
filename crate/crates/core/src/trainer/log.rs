use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::learn::TrainStats;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::EvalMetrics;

/// One row per evaluation point.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub episodes: usize,
    pub epsilon: f64,
    pub mean_return_per_agent: f64,
    pub success_rate: f64,
    /// Mean training losses since the previous point.
    pub losses: TrainStats,
    /// Intention statistics of the training episodes since the previous point.
    pub mean_run_length: Option<f64>,
    pub tv_distance: Option<f64>,
    pub agreement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub stats: TrainStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub seed: u64,
    pub mode: String,
    pub config_hash: String,
    pub points: Vec<EvalPoint>,
    pub losses: Vec<LossRow>,
    /// Mean intention run length of every training episode, in order.
    pub episode_continuity: Vec<f64>,
    pub total_steps: usize,
    pub total_episodes: usize,
    pub final_eval: EvalMetrics,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainingLog {
    pub fn header(&self) -> String {
        format!("seed={}\nconfig_hash={}\nmode={}", self.seed, self.config_hash, self.mode)
    }

    fn comment_rows(&self) -> String {
        self.header().lines().map(|l| format!("# {l}\n")).collect()
    }

    pub fn training_csv(&self) -> String {
        let mut s = self.comment_rows();
        s.push_str(
            "step,episodes,epsilon,mean_return_per_agent,success_rate,td_low,td_high,l_I,l_A,l_D,total,\
             mean_alpha,mean_mi,intrinsic,mean_run_length,tv_distance,agreement\n",
        );
        for p in &self.points {
            let l = &p.losses;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                p.step,
                p.episodes,
                p.epsilon,
                p.mean_return_per_agent,
                p.success_rate,
                l.losses.td_low,
                l.losses.td_high,
                l.losses.l_i,
                l.losses.l_a,
                l.losses.l_d,
                l.losses.total,
                l.mean_alpha,
                l.mean_mi,
                l.intrinsic,
                opt(p.mean_run_length),
                opt(p.tv_distance),
                opt(p.agreement)
            );
        }
        s
    }

    pub fn losses_csv(&self) -> String {
        let mut s = self.comment_rows();
        s.push_str("step,td_low,td_high,l_I,l_A,l_D,total,mean_alpha,mean_mi,intrinsic,grad_norm\n");
        for r in &self.losses {
            let (st, l) = (&r.stats, &r.stats.losses);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.step, l.td_low, l.td_high, l.l_i, l.l_a, l.l_d, l.total, st.mean_alpha, st.mean_mi, st.intrinsic, st.grad_norm
            );
        }
        s
    }

    /// Mean per-episode run length over the first and last `frac` of training.
    pub fn continuity_trend(&self, frac: f64) -> Option<(f64, f64)> {
        let n = self.episode_continuity.len();
        let k = ((n as f64 * frac).ceil() as usize).max(1);
        if n < 2 * k {
            return None;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&self.episode_continuity[..k]), mean(&self.episode_continuity[n - k..])))
    }

    /// Observer/selection distance at the first and last points that have one.
    pub fn tv_trend(&self) -> Option<(f64, f64)> {
        let mut it = self.points.iter().filter_map(|p| p.tv_distance);
        let first = it.next()?;
        let last = it.last()?;
        Some((first, last))
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    mode: &'a str,
    config_hash: &'a str,
    total_steps: usize,
    total_episodes: usize,
    final_eval: &'a EvalMetrics,
    last_point: Option<&'a EvalPoint>,
    continuity_first_last: Option<(f64, f64)>,
    tv_first_last: Option<(f64, f64)>,
    config: &'a ExperimentConfig,
}

/// Write config echo, both CSVs and the JSON summary into `dir`.
pub fn write_log_files(dir: &Path, cfg: &ExperimentConfig, log: &TrainingLog) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut conf = log.comment_rows();
    conf.push_str(&cfg.canonical());
    std::fs::write(dir.join("config.toml"), conf)?;
    std::fs::write(dir.join("training_log.csv"), log.training_csv())?;
    std::fs::write(dir.join("losses.csv"), log.losses_csv())?;
    let summary = Summary {
        seed: log.seed,
        mode: &log.mode,
        config_hash: &log.config_hash,
        total_steps: log.total_steps,
        total_episodes: log.total_episodes,
        final_eval: &log.final_eval,
        last_point: log.points.last(),
        continuity_first_last: log.continuity_trend(0.1),
        tv_first_last: log.tv_trend(),
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(())
}
