//! Greedy evaluation, ad-hoc team sizes, intention analytics and ablations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Mode};
use crate::env::{make_env, Action, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::numeric::{derive_seed, rng_from_seed};
use crate::trainer::{rollout, train_seed, Networks, RolloutSpec, TrainingLog};

/// Stream offset separating evaluation environments from training ones.
const EVAL_STREAM: u64 = 1 << 40;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub mean_return_per_agent: f64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub episodes: usize,
    /// Episode return divided by the number of agents, averaged over episodes.
    pub mean_return_per_agent: f64,
    pub success_rate: f64,
    pub mean_agents: f64,
    pub per_seed: Vec<SeedMetrics>,
}

impl EvalMetrics {
    /// Mean over seeds, keeping each seed's numbers.
    pub fn aggregate(runs: &[(u64, EvalMetrics)]) -> Result<EvalMetrics> {
        if runs.is_empty() {
            return Err(Error::Empty("no runs to aggregate".into()));
        }
        let k = runs.len() as f64;
        Ok(EvalMetrics {
            episodes: runs.iter().map(|(_, m)| m.episodes).sum(),
            mean_return_per_agent: runs.iter().map(|(_, m)| m.mean_return_per_agent).sum::<f64>() / k,
            success_rate: runs.iter().map(|(_, m)| m.success_rate).sum::<f64>() / k,
            mean_agents: runs.iter().map(|(_, m)| m.mean_agents).sum::<f64>() / k,
            per_seed: runs
                .iter()
                .map(|(s, m)| SeedMetrics {
                    seed: *s,
                    mean_return_per_agent: m.mean_return_per_agent,
                    success_rate: m.success_rate,
                })
                .collect(),
        })
    }
}

fn eval_episodes(
    nets: &Networks,
    cfg: &ExperimentConfig,
    episodes: usize,
    seed: u64,
    fixed_z: Option<usize>,
    mut team_size: impl FnMut(usize) -> usize,
) -> Result<EvalMetrics> {
    if episodes == 0 {
        return Err(Error::Parameter("evaluation needs at least one episode".into()));
    }
    let mut rng = rng_from_seed(derive_seed(seed, EVAL_STREAM - 1));
    let mut ret = 0.0;
    let mut success = 0.0;
    let mut agents = 0.0;
    for e in 0..episodes {
        let mut env_cfg = cfg.env.clone();
        env_cfg.n_agents = team_size(e);
        let mut env = make_env(&env_cfg)?;
        let spec = RolloutSpec {
            fixed_z,
            ..RolloutSpec::greedy(e)
        };
        let out = rollout(nets, &cfg.method, &mut env, derive_seed(seed, EVAL_STREAM + e as u64), &spec, &mut rng)?;
        let n = env_cfg.n_agents as f64;
        ret += out.total_reward / n;
        success += out.success;
        agents += n;
    }
    let k = episodes as f64;
    Ok(EvalMetrics {
        episodes,
        mean_return_per_agent: ret / k,
        success_rate: success / k,
        mean_agents: agents / k,
        per_seed: Vec::new(),
    })
}

/// Greedy rollouts with no learning. Deterministic in `seed`.
pub fn evaluate(nets: &Networks, cfg: &ExperimentConfig, episodes: usize, seed: u64) -> Result<EvalMetrics> {
    let n = cfg.env.n_agents;
    eval_episodes(nets, cfg, episodes, seed, None, |_| n)
}

/// Greedy evaluation with every team forced onto intention `z`.
pub fn evaluate_fixed_intention(
    nets: &Networks,
    cfg: &ExperimentConfig,
    episodes: usize,
    seed: u64,
    z: usize,
) -> Result<EvalMetrics> {
    if !nets.uses_intentions() {
        return Err(Error::Parameter("fixed-intention evaluation needs an intention network".into()));
    }
    if z >= nets.n_z() {
        return Err(Error::Parameter(format!("intention {z} out of range 0..{}", nets.n_z())));
    }
    let n = cfg.env.n_agents;
    eval_episodes(nets, cfg, episodes, seed, Some(z), |_| n)
}

/// Greedy evaluation where each episode draws its agent count uniformly from
/// `[n − delta, n + delta]`. Counts below 1 are clamped.
pub fn adhoc_evaluate<R: Rng>(
    nets: &Networks,
    cfg: &ExperimentConfig,
    delta: usize,
    rng: &mut R,
    episodes: usize,
    seed: u64,
) -> Result<EvalMetrics> {
    let n = cfg.env.n_agents;
    let slots = nets.behavior.layout.id_slots;
    if n + delta > slots {
        return Err(Error::Parameter(format!(
            "ad-hoc delta {delta} needs {} agent ids, the network has {slots}",
            n + delta
        )));
    }
    let mut warned = false;
    eval_episodes(nets, cfg, episodes, seed, None, |_| {
        if delta == 0 {
            return n;
        }
        let drawn = rng.gen_range(n as i64 - delta as i64..=(n + delta) as i64);
        if drawn < 1 {
            if !warned {
                log::warn!("ad-hoc agent count {drawn} clamped to 1");
                warned = true;
            }
            1
        } else {
            drawn as usize
        }
    })
}

/// Bucket of a joint action for the co-occurrence table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionBucket {
    AllAttack,
    AllMove,
    Mixed,
}

impl ActionBucket {
    pub const ALL: [ActionBucket; 3] = [ActionBucket::AllAttack, ActionBucket::AllMove, ActionBucket::Mixed];

    pub fn of(actions: &[usize]) -> ActionBucket {
        let is = |a: &usize, f: fn(Action) -> bool| Action::from_index(*a).is_some_and(f);
        if !actions.is_empty() && actions.iter().all(|a| is(a, |x| x == Action::Attack)) {
            ActionBucket::AllAttack
        } else if !actions.is_empty() && actions.iter().all(|a| is(a, Action::is_move)) {
            ActionBucket::AllMove
        } else {
            ActionBucket::Mixed
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionBucket::AllAttack => "all_attack",
            ActionBucket::AllMove => "all_move",
            ActionBucket::Mixed => "mixed",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntentionReport {
    pub selection_counts: Vec<u64>,
    pub observer_counts: Vec<u64>,
    /// Run length → number of runs.
    pub continuity: BTreeMap<usize, u64>,
    /// Fraction of member choices that match the commander's.
    pub agreement: f64,
    /// `[bucket][z]` counts, buckets ordered as [`ActionBucket::ALL`].
    pub cooccurrence: Vec<Vec<u64>>,
}

fn normalize(c: &[u64]) -> Vec<f64> {
    let s: u64 = c.iter().sum();
    c.iter().map(|x| if s == 0 { 0.0 } else { *x as f64 / s as f64 }).collect()
}

fn max_normalize(c: &[u64]) -> Vec<f64> {
    let m = c.iter().copied().max().unwrap_or(0);
    c.iter().map(|x| if m == 0 { 0.0 } else { *x as f64 / m as f64 }).collect()
}

impl IntentionReport {
    pub fn runs(&self) -> u64 {
        self.continuity.values().sum()
    }

    pub fn mean_run_length(&self) -> f64 {
        let runs = self.runs();
        if runs == 0 {
            return 0.0;
        }
        self.continuity.iter().map(|(l, c)| *l as f64 * *c as f64).sum::<f64>() / runs as f64
    }

    /// Total-variation distance between observer and selection frequencies.
    pub fn tv_distance(&self) -> f64 {
        let a = normalize(&self.selection_counts);
        let b = normalize(&self.observer_counts);
        0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    /// Write selection.csv, observer.csv, continuity.csv and cooccurrence.csv.
    pub fn write_csvs(&self, dir: &Path, header: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let head = || header.lines().map(|l| format!("# {l}\n")).collect::<String>();
        for (name, counts) in [("selection.csv", &self.selection_counts), ("observer.csv", &self.observer_counts)] {
            let mut s = head();
            s.push_str("z,count,fraction,max_normalized\n");
            let (f, m) = (normalize(counts), max_normalize(counts));
            for z in 0..counts.len() {
                let _ = writeln!(s, "{z},{},{},{}", counts[z], f[z], m[z]);
            }
            std::fs::write(dir.join(name), s)?;
        }
        let mut s = head();
        s.push_str("run_length,count,fraction,max_normalized\n");
        let counts: Vec<u64> = self.continuity.values().copied().collect();
        let (f, m) = (normalize(&counts), max_normalize(&counts));
        for (i, (l, c)) in self.continuity.iter().enumerate() {
            let _ = writeln!(s, "{l},{c},{},{}", f[i], m[i]);
        }
        std::fs::write(dir.join("continuity.csv"), s)?;
        let mut s = head();
        s.push_str("bucket,z,count,fraction,max_normalized\n");
        let flat: Vec<u64> = self.cooccurrence.iter().flatten().copied().collect();
        let (f, m) = (normalize(&flat), max_normalize(&flat));
        let nz = self.selection_counts.len();
        for (b, row) in self.cooccurrence.iter().enumerate() {
            for (z, c) in row.iter().enumerate() {
                let k = b * nz + z;
                let _ = writeln!(s, "{},{z},{c},{},{}", ActionBucket::ALL[b].as_str(), f[k], m[k]);
            }
        }
        std::fs::write(dir.join("cooccurrence.csv"), s)?;
        Ok(())
    }
}

/// Intention statistics from trajectory records in episode order.
pub fn intention_stats(records: &[TrajectoryRecord], n_z: usize) -> Result<IntentionReport> {
    let mut rep = IntentionReport {
        selection_counts: vec![0; n_z],
        observer_counts: vec![0; n_z],
        continuity: BTreeMap::new(),
        agreement: 0.0,
        cooccurrence: vec![vec![0; n_z]; ActionBucket::ALL.len()],
    };
    let (mut agree, mut members) = (0u64, 0u64);
    // commander → (z, length) of the runs still open
    let mut open: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut prev: Option<(usize, usize)> = None;
    let flush = |open: BTreeMap<usize, (usize, usize)>, hist: &mut BTreeMap<usize, u64>| {
        for (_, (_, len)) in open {
            *hist.entry(len).or_insert(0) += 1;
        }
    };
    for rec in records {
        let teams = rec.teams.as_ref().ok_or_else(|| {
            Error::Format(format!("record episode {} step {} has no team data", rec.episode, rec.step))
        })?;
        if prev != Some((rec.episode, rec.step.wrapping_sub(1))) {
            flush(std::mem::take(&mut open), &mut rep.continuity);
        }
        prev = Some((rec.episode, rec.step));
        let bucket = ActionBucket::of(&rec.actions) as usize;
        let mut next = BTreeMap::new();
        for t in teams {
            if t.z >= n_z || t.observer_z.iter().any(|z| *z >= n_z) {
                return Err(Error::Format(format!(
                    "intention out of range 0..{n_z} at episode {} step {}",
                    rec.episode, rec.step
                )));
            }
            rep.selection_counts[t.z] += 1;
            rep.cooccurrence[bucket][t.z] += 1;
            for &oz in &t.observer_z {
                rep.observer_counts[oz] += 1;
                members += 1;
                if oz == t.z {
                    agree += 1;
                }
            }
            let len = match open.remove(&t.commander) {
                Some((z, len)) if z == t.z => len + 1,
                Some((_, len)) => {
                    *rep.continuity.entry(len).or_insert(0) += 1;
                    1
                }
                None => 1,
            };
            next.insert(t.commander, (t.z, len));
        }
        flush(std::mem::replace(&mut open, next), &mut rep.continuity);
    }
    flush(open, &mut rep.continuity);
    rep.agreement = if members == 0 { 0.0 } else { agree as f64 / members as f64 };
    Ok(rep)
}

/// Result of an ablation.
#[derive(Clone, Debug)]
pub enum AblationResult {
    Eval(EvalMetrics),
    Training(Box<TrainingLog>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    ZeroIntention,
    NoWeighting,
}

/// `zero_intention` evaluates `nets` with a constant intention;
/// `no_weighting` runs a fresh training with α fixed to 1.
pub fn ablate(nets: &Networks, cfg: &ExperimentConfig, mode: Ablation, seed: u64) -> Result<AblationResult> {
    match mode {
        Ablation::ZeroIntention => Ok(AblationResult::Eval(evaluate_fixed_intention(
            nets,
            cfg,
            cfg.eval.final_episodes,
            seed,
            cfg.eval.zero_intention,
        )?)),
        Ablation::NoWeighting => {
            let mut c = cfg.clone();
            c.method.mode = Mode::NoWeighting;
            Ok(AblationResult::Training(Box::new(train_seed(&c, seed, None)?.log)))
        }
    }
}
