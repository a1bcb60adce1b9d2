use std::path::Path;

use rand::Rng;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::mixer::QMixer;
use crate::numeric::{Checkpoint, Module, Param};
use crate::policy::{BehaviorLayout, BehaviorNet, IntentionNet, PosteriorNet};

/// One full set of trainable networks. The intention and posterior networks
/// are absent in flat mode.
#[derive(Clone, Debug)]
pub struct Networks {
    pub intention: Option<IntentionNet>,
    pub posterior: Option<PosteriorNet>,
    pub behavior: BehaviorNet,
    pub mixer: QMixer,
}

impl Networks {
    pub fn layout(cfg: &ExperimentConfig) -> BehaviorLayout {
        BehaviorLayout {
            obs_dim: cfg.env.obs_dim(),
            n_z: if cfg.method.mode.uses_intentions() { cfg.method.n_z } else { 0 },
            id_slots: cfg.id_slots(),
        }
    }

    pub fn new<R: Rng>(cfg: &ExperimentConfig, rng: &mut R) -> Self {
        let obs = cfg.env.obs_dim();
        let nz = cfg.method.n_z;
        let (intention, posterior) = if cfg.method.mode.uses_intentions() {
            (Some(IntentionNet::new(obs, nz, rng)), Some(PosteriorNet::new(obs, nz, rng)))
        } else {
            (None, None)
        };
        let net = &cfg.network;
        Networks {
            intention,
            posterior,
            behavior: BehaviorNet::new(Self::layout(cfg), net.hidden, cfg.env.n_actions(), rng),
            mixer: QMixer::new(cfg.env.n_agents, cfg.env.state_dim(), net.mixer_embed, net.hyper_hidden, rng),
        }
    }

    pub fn zeros(cfg: &ExperimentConfig) -> Self {
        let obs = cfg.env.obs_dim();
        let nz = cfg.method.n_z;
        let (intention, posterior) = if cfg.method.mode.uses_intentions() {
            (Some(IntentionNet::zeros(obs, nz)), Some(PosteriorNet::zeros(obs, nz)))
        } else {
            (None, None)
        };
        let net = &cfg.network;
        Networks {
            intention,
            posterior,
            behavior: BehaviorNet::zeros(Self::layout(cfg), net.hidden, cfg.env.n_actions()),
            mixer: QMixer::zeros(cfg.env.n_agents, cfg.env.state_dim(), net.mixer_embed, net.hyper_hidden),
        }
    }

    pub fn uses_intentions(&self) -> bool {
        self.intention.is_some()
    }

    pub fn n_z(&self) -> usize {
        self.intention.as_ref().map_or(0, |n| n.n_z())
    }
}

impl Module for Networks {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        if let Some(n) = &self.intention {
            n.visit_params(f);
        }
        if let Some(n) = &self.posterior {
            n.visit_params(f);
        }
        self.behavior.visit_params(f);
        self.mixer.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        if let Some(n) = &mut self.intention {
            n.visit_params_mut(f);
        }
        if let Some(n) = &mut self.posterior {
            n.visit_params_mut(f);
        }
        self.behavior.visit_params_mut(f);
        self.mixer.visit_params_mut(f);
    }
}

/// Online networks with their target copies.
#[derive(Clone, Debug)]
pub struct NetworkBundle {
    pub online: Networks,
    pub target: Networks,
}

impl NetworkBundle {
    pub fn new<R: Rng>(cfg: &ExperimentConfig, rng: &mut R) -> Self {
        let online = Networks::new(cfg, rng);
        NetworkBundle {
            target: online.clone(),
            online,
        }
    }

    pub fn zeros(cfg: &ExperimentConfig) -> Self {
        let online = Networks::zeros(cfg);
        NetworkBundle {
            target: online.clone(),
            online,
        }
    }

    pub fn sync(&mut self) {
        self.target.copy_params_from(&self.online);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint { blocks: Vec::new() };
        c.push_module("online", &self.online);
        c.push_module("target", &self.target);
        c
    }

    pub fn load_checkpoint(&mut self, c: &Checkpoint) -> Result<()> {
        c.load_into(Some("online"), &mut self.online)?;
        c.load_into(Some("target"), &mut self.target)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Build the structure from `cfg` and fill it from a checkpoint file.
    pub fn load(cfg: &ExperimentConfig, path: &Path) -> Result<Self> {
        let mut b = NetworkBundle::zeros(cfg);
        let c = Checkpoint::load(path)?;
        b.load_checkpoint(&c).map_err(|e| match e {
            Error::Dimension(m) | Error::Format(m) => {
                Error::Format(format!("checkpoint {} does not match config: {m}", path.display()))
            }
            other => other,
        })?;
        Ok(b)
    }
}

/// Hard copy of online parameters into the targets every `period` episodes.
/// Returns whether a copy happened.
pub fn sync_targets(nets: &mut NetworkBundle, episodes_done: usize, period: usize) -> bool {
    if period > 0 && episodes_done > 0 && episodes_done % period == 0 {
        nets.sync();
        true
    } else {
        false
    }
}
