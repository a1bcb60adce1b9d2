use super::{EnvConfig, StepInfo, StepResult};
use crate::error::{Error, Result};

/// One-step two-player cooperative matrix game.
///
/// Each observation is `[is_initial] ⊕ one-hot(last action of every agent)`,
/// so the terminal observation reveals the joint action.
#[derive(Clone, Debug)]
pub struct MatrixGame {
    config: EnvConfig,
    last: Option<Vec<usize>>,
    step: usize,
    last_reward: f64,
}

impl MatrixGame {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(MatrixGame {
            config,
            last: None,
            step: 0,
            last_reward: 0.0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn best_payoff(&self) -> f64 {
        self.config
            .payoff_matrix
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn reset(&mut self, _seed: u64) -> Vec<Vec<f64>> {
        self.last = None;
        self.step = 0;
        self.last_reward = 0.0;
        self.observations()
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        let n = self.config.n_agents;
        let m = self.config.payoff_matrix.len();
        let mut o = vec![0.0; self.config.obs_dim()];
        match &self.last {
            None => o[0] = 1.0,
            Some(u) => {
                for (i, a) in u.iter().enumerate() {
                    o[1 + i * m + a] = 1.0;
                }
            }
        }
        vec![o; n]
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        let m = self.config.payoff_matrix.len();
        if actions.len() != self.config.n_agents {
            return Err(Error::Dimension(format!(
                "joint action has {} entries for {} agents",
                actions.len(),
                self.config.n_agents
            )));
        }
        if let Some(a) = actions.iter().find(|a| **a >= m) {
            return Err(Error::Parameter(format!("action id {a} out of range")));
        }
        if self.step >= 1 {
            return Err(Error::Invariant("step called on a finished episode".into()));
        }
        let reward = self.config.payoff_matrix[actions[0]][actions[1]];
        self.last = Some(actions.to_vec());
        self.step = 1;
        self.last_reward = reward;
        Ok(StepResult {
            obs: self.observations(),
            reward,
            done: true,
            info: StepInfo {
                terminated: true,
                ..StepInfo::default()
            },
        })
    }

    /// 1 when the last joint action earned the best payoff.
    pub fn success(&self) -> f64 {
        if self.last.is_some() && self.last_reward == self.best_payoff() {
            1.0
        } else {
            0.0
        }
    }
}
