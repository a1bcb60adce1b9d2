//! Experiment configuration: TOML in, canonical TOML out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::numeric::RmsPropConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FullMethod,
    FlatQmix,
    NoWeighting,
}

impl Mode {
    pub fn uses_intentions(self) -> bool {
        !matches!(self, Mode::FlatQmix)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::FullMethod => "full_method",
            Mode::FlatQmix => "flat_qmix",
            Mode::NoWeighting => "no_weighting",
        }
    }
}

/// How rollouts pick a team intention from the high-level Q-values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentionSelection {
    EpsilonGreedy,
    Boltzmann,
}

/// Target distribution `p` used inside the information and auxiliary losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiTarget {
    /// One-hot at the intention actually executed.
    Sampled,
    /// Boltzmann distribution over high-level Q-values.
    Boltzmann,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub mode: Mode,
    pub n_z: usize,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Intrinsic reward coefficient on the low-level TD target.
    pub beta: f64,
    pub temperature: f64,
    pub mi_floor: f64,
    pub eps_gap: f64,
    pub intention_selection: IntentionSelection,
    pub mi_target: MiTarget,
    pub mi_grad_to_intention: bool,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            mode: Mode::FullMethod,
            n_z: 16,
            gamma: 0.99,
            lambda1: 1.0,
            lambda2: 1.0,
            beta: 0.1,
            temperature: 1.0,
            mi_floor: crate::mixer::MI_FLOOR,
            eps_gap: 0.01,
            intention_selection: IntentionSelection::EpsilonGreedy,
            mi_target: MiTarget::Sampled,
            mi_grad_to_intention: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden: usize,
    pub mixer_embed: usize,
    pub hyper_hidden: usize,
    /// Extra agent-id slots beyond `env.n_agents`, for ad-hoc team sizes.
    pub extra_id_slots: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: 64,
            mixer_embed: 32,
            hyper_hidden: 64,
            extra_id_slots: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub batch_size: usize,
    pub buffer_episodes: usize,
    pub target_sync_episodes: usize,
    pub total_steps: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            rms_decay: 0.99,
            rms_eps: 1e-5,
            batch_size: 4,
            buffer_episodes: 2000,
            target_sync_episodes: 200,
            total_steps: 150_000,
            grad_clip: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn rmsprop(&self) -> RmsPropConfig {
        RmsPropConfig {
            lr: self.lr,
            decay: self.rms_decay,
            eps: self.rms_eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub eps_start: f64,
    pub eps_end: f64,
    pub anneal_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            eps_start: 1.0,
            eps_end: 0.05,
            anneal_steps: 70_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub interval_steps: usize,
    pub episodes: usize,
    pub final_episodes: usize,
    pub adhoc_delta: usize,
    pub zero_intention: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            interval_steps: 5_000,
            episodes: 20,
            final_episodes: 100,
            adhoc_delta: 2,
            zero_intention: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Write a checkpoint every this many episodes; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Record training-episode trajectories for intention analytics.
    pub dump_trajectories: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("runs"),
            checkpoint_every: 0,
            dump_trajectories: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub method: MethodConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub schedule: ScheduleConfig,
    pub eval: EvalConfig,
    pub run: RunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvConfig::default(),
            method: MethodConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            schedule: ScheduleConfig::default(),
            eval: EvalConfig::default(),
            run: RunConfig::default(),
        }
    }
}

/// Environment variable overriding `run.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "JIM_OUTPUT_DIR";

impl ExperimentConfig {
    /// Defaults for a named environment preset.
    pub fn for_preset(name: &str) -> Result<Self> {
        let mut c = ExperimentConfig {
            env: EnvConfig::preset(name)?,
            ..ExperimentConfig::default()
        };
        if name == "matrix_game" {
            c.train.total_steps = 50_000;
            c.schedule.anneal_steps = 25_000;
            c.eval.interval_steps = 2_500;
            c.eval.episodes = 1;
            c.eval.final_episodes = 1;
            c.eval.adhoc_delta = 0;
            // payoffs span ±30, so the intrinsic term and the intention
            // softmax need matching scale
            c.method.beta = 10.0;
            c.method.temperature = 5.0;
            c.method.intention_selection = IntentionSelection::Boltzmann;
        }
        Ok(c)
    }

    /// Parse TOML. `[env] preset = "..."` seeds the environment table before
    /// the remaining keys are applied.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<toml>", e.message().to_string()))?;
        if let Some(toml::Value::Table(env)) = value.get_mut("env") {
            if let Some(preset) = env.remove("preset") {
                let name = preset
                    .as_str()
                    .ok_or_else(|| Error::config("env.preset", "must be a string"))?;
                let base = ExperimentConfig::for_preset(name)?;
                let mut merged = toml::Table::try_from(&base).map_err(|e| Error::config("<preset>", e.to_string()))?;
                overlay(&mut merged, &value);
                value = merged;
            }
        }
        let config: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(value)).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::from_toml_str(&text)
    }

    /// Fully expanded TOML; parses back to an identical config.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 prefix of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Output directory after applying the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.run.output_dir.clone(),
        }
    }

    /// Agent-id slots of the behaviour network input.
    pub fn id_slots(&self) -> usize {
        self.env.n_agents + self.network.extra_id_slots
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let m = &self.method;
        let check = |ok: bool, path: &str, msg: &str| if ok { Ok(()) } else { Err(Error::config(path, msg)) };
        check(m.n_z >= 2, "method.n_z", "need at least two intentions")?;
        check((0.0..=1.0).contains(&m.gamma), "method.gamma", "must lie in [0, 1]")?;
        check(m.lambda1 >= 0.0, "method.lambda1", "must be non-negative")?;
        check(m.lambda2 >= 0.0, "method.lambda2", "must be non-negative")?;
        check(m.beta >= 0.0 && m.beta.is_finite(), "method.beta", "must be non-negative")?;
        check(m.temperature > 0.0, "method.temperature", "must be positive")?;
        check(m.mi_floor > 0.0, "method.mi_floor", "must be positive")?;
        check(m.eps_gap >= 0.0, "method.eps_gap", "must be non-negative")?;
        let n = &self.network;
        check(n.hidden > 0, "network.hidden", "must be positive")?;
        check(n.mixer_embed > 0, "network.mixer_embed", "must be positive")?;
        check(n.hyper_hidden > 0, "network.hyper_hidden", "must be positive")?;
        let t = &self.train;
        check(t.lr > 0.0, "train.lr", "must be positive")?;
        check((0.0..1.0).contains(&t.rms_decay), "train.rms_decay", "must lie in [0, 1)")?;
        check(t.rms_eps >= 0.0, "train.rms_eps", "must be non-negative")?;
        check(t.batch_size >= 1, "train.batch_size", "must be at least 1")?;
        check(t.buffer_episodes >= t.batch_size, "train.buffer_episodes", "must hold at least one batch")?;
        check(t.target_sync_episodes >= 1, "train.target_sync_episodes", "must be at least 1")?;
        check(t.grad_clip >= 0.0, "train.grad_clip", "must be non-negative")?;
        let s = &self.schedule;
        check((0.0..=1.0).contains(&s.eps_start), "schedule.eps_start", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&s.eps_end), "schedule.eps_end", "must lie in [0, 1]")?;
        check(self.eval.adhoc_delta <= n.extra_id_slots, "eval.adhoc_delta", "exceeds the spare agent-id slots")?;
        check(self.eval.zero_intention < m.n_z, "eval.zero_intention", "must index an intention")?;
        check(!self.run.seeds.is_empty(), "run.seeds", "need at least one seed")?;
        Ok(())
    }
}

fn overlay(base: &mut toml::Table, top: &toml::Table) {
    for (k, v) in top {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}
