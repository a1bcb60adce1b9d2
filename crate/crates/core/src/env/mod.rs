//! Predator-prey gridworlds and one-step matrix games.

pub mod dump;
pub mod grid;
pub mod matrix;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::VisibilityGraph;

pub use dump::{read_dump, DumpWriter, TeamRecord, TrajectoryRecord};
pub use grid::{Action, GridEnv, Pos, Prey};
pub use matrix::MatrixGame;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Pursuit,
    PursuitHard,
    Tiger,
    MatrixGame,
}

impl EnvKind {
    pub fn is_grid(self) -> bool {
        !matches!(self, EnvKind::MatrixGame)
    }

    /// Whether joint attacks damage prey instead of catching it outright.
    pub fn uses_hp(self) -> bool {
        matches!(self, EnvKind::Tiger)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub n_agents: usize,
    pub n_enemies: usize,
    pub map_w: usize,
    pub map_h: usize,
    pub n_walls: usize,
    pub view_radius: usize,
    pub attack_range: usize,
    pub episode_limit: usize,
    pub catch_reward: f64,
    pub solo_penalty: f64,
    pub per_hit_reward: f64,
    pub prey_hp: u32,
    pub prey_regen: u32,
    /// Probability that a prey takes its escape move on a given step.
    pub prey_move_prob: f64,
    pub payoff_matrix: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::preset("pursuit_small").expect("builtin preset")
    }
}

pub const PRESETS: &[&str] = &["pursuit", "pursuit_hard", "tiger", "pursuit_small", "matrix_game"];

pub fn default_payoff() -> Vec<Vec<f64>> {
    vec![
        vec![11.0, -30.0, 0.0],
        vec![-30.0, 7.0, 6.0],
        vec![0.0, 0.0, 5.0],
    ]
}

impl EnvConfig {
    fn grid(kind: EnvKind, n_agents: usize, n_enemies: usize, side: usize, n_walls: usize) -> Self {
        EnvConfig {
            kind,
            n_agents,
            n_enemies,
            map_w: side,
            map_h: side,
            n_walls,
            view_radius: 3,
            attack_range: 1,
            episode_limit: 350,
            catch_reward: 10.0,
            solo_penalty: -2.0,
            per_hit_reward: 1.0,
            prey_hp: 5,
            prey_regen: 1,
            prey_move_prob: 1.0,
            payoff_matrix: Vec::new(),
            seed: 0,
        }
    }

    /// Named preset. Unknown names are a config error.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "pursuit" => EnvConfig::grid(EnvKind::Pursuit, 6, 4, 60, 60),
            "pursuit_hard" => EnvConfig::grid(EnvKind::PursuitHard, 6, 6, 100, 300),
            "tiger" => EnvConfig::grid(EnvKind::Tiger, 6, 24, 40, 60),
            "pursuit_small" => EnvConfig {
                episode_limit: 50,
                ..EnvConfig::grid(EnvKind::Pursuit, 4, 2, 20, 10)
            },
            "matrix_game" => EnvConfig {
                kind: EnvKind::MatrixGame,
                n_agents: 2,
                n_enemies: 0,
                map_w: 0,
                map_h: 0,
                n_walls: 0,
                view_radius: 0,
                attack_range: 0,
                episode_limit: 1,
                payoff_matrix: default_payoff(),
                ..EnvConfig::grid(EnvKind::MatrixGame, 2, 0, 0, 0)
            },
            other => {
                return Err(Error::config(
                    "env.preset",
                    format!("unknown preset `{other}`; expected one of {PRESETS:?}"),
                ))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 1 {
            return Err(Error::config("env.n_agents", "must be at least 1"));
        }
        if self.episode_limit < 1 {
            return Err(Error::config("env.episode_limit", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.prey_move_prob) {
            return Err(Error::config("env.prey_move_prob", "must lie in [0, 1]"));
        }
        if self.kind.is_grid() {
            let min = 2 * self.view_radius + 1;
            if self.map_w < min || self.map_h < min {
                return Err(Error::config(
                    "env.map_w",
                    format!("map {}x{} smaller than view window {min}", self.map_w, self.map_h),
                ));
            }
            let cells = self.map_w * self.map_h;
            if self.n_walls + self.n_agents + self.n_enemies > cells {
                return Err(Error::config(
                    "env.n_walls",
                    format!(
                        "{} walls + {} agents + {} prey do not fit in {cells} cells",
                        self.n_walls, self.n_agents, self.n_enemies
                    ),
                ));
            }
            if self.kind.uses_hp() && self.prey_hp == 0 {
                return Err(Error::config("env.prey_hp", "must be positive"));
            }
        } else {
            let m = &self.payoff_matrix;
            if self.n_agents != 2 {
                return Err(Error::config("env.n_agents", "matrix games are two-player"));
            }
            if m.is_empty() || m.iter().any(|row| row.len() != m.len()) {
                return Err(Error::config("env.payoff_matrix", "must be a non-empty square matrix"));
            }
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::config("env.payoff_matrix", "entries must be finite"));
            }
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        if self.kind.is_grid() {
            grid::N_ACTIONS
        } else {
            self.payoff_matrix.len()
        }
    }

    pub fn obs_dim(&self) -> usize {
        if self.kind.is_grid() {
            let side = 2 * self.view_radius + 1;
            side * side * 3 + 2 + grid::N_ACTIONS
        } else {
            1 + self.n_agents * self.payoff_matrix.len()
        }
    }

    pub fn state_dim(&self) -> usize {
        if self.kind.is_grid() {
            grid::MINIMAP * grid::MINIMAP * 3
        } else {
            1
        }
    }
}

/// Per-step side information.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub caught: usize,
    pub killed: usize,
    pub hits: usize,
    pub solo_attacks: usize,
    pub prey_remaining: usize,
    /// All prey removed (or the matrix game resolved), as opposed to a time limit.
    pub terminated: bool,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub obs: Vec<Vec<f64>>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Either environment family behind one interface.
#[derive(Clone, Debug)]
pub enum Env {
    Grid(GridEnv),
    Matrix(MatrixGame),
}

pub fn make_env(config: &EnvConfig) -> Result<Env> {
    config.validate()?;
    Ok(if config.kind.is_grid() {
        Env::Grid(GridEnv::new(config.clone())?)
    } else {
        Env::Matrix(MatrixGame::new(config.clone())?)
    })
}

impl Env {
    pub fn config(&self) -> &EnvConfig {
        match self {
            Env::Grid(g) => g.config(),
            Env::Matrix(m) => m.config(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.config().n_agents
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<Vec<f64>>> {
        match self {
            Env::Grid(g) => g.reset(seed),
            Env::Matrix(m) => Ok(m.reset(seed)),
        }
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        match self {
            Env::Grid(g) => g.step(actions),
            Env::Matrix(m) => m.step(actions),
        }
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        match self {
            Env::Grid(g) => g.observations(),
            Env::Matrix(m) => m.observations(),
        }
    }

    pub fn global_state(&self) -> Vec<f64> {
        match self {
            Env::Grid(g) => g.global_state(),
            Env::Matrix(_) => vec![1.0],
        }
    }

    pub fn visibility(&self) -> VisibilityGraph {
        match self {
            Env::Grid(g) => g.visibility(),
            Env::Matrix(m) => VisibilityGraph::complete(m.config().n_agents),
        }
    }

    pub fn step_count(&self) -> usize {
        match self {
            Env::Grid(g) => g.step_count(),
            Env::Matrix(m) => m.step_count(),
        }
    }

    /// Agent positions for trajectory dumps; empty for matrix games.
    pub fn agent_positions(&self) -> Vec<[i64; 2]> {
        match self {
            Env::Grid(g) => g.agent_positions().iter().map(|p| [p.x as i64, p.y as i64]).collect(),
            Env::Matrix(_) => Vec::new(),
        }
    }

    pub fn prey_positions(&self) -> Vec<[i64; 2]> {
        match self {
            Env::Grid(g) => g
                .prey()
                .iter()
                .filter(|p| p.alive)
                .map(|p| [p.pos.x as i64, p.pos.y as i64])
                .collect(),
            Env::Matrix(_) => Vec::new(),
        }
    }

    /// Episode success in `[0, 1]`: fraction of prey removed, or whether the
    /// matrix game hit its best payoff.
    pub fn success(&self) -> f64 {
        match self {
            Env::Grid(g) => g.removed_fraction(),
            Env::Matrix(m) => m.success(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_presets() {
        let p = EnvConfig::preset("pursuit").unwrap();
        assert_eq!((p.n_agents, p.n_enemies, p.map_w, p.map_h, p.n_walls), (6, 4, 60, 60, 60));
        let t = EnvConfig::preset("tiger").unwrap();
        assert_eq!((t.n_agents, t.n_enemies, t.map_w, t.map_h, t.n_walls), (6, 24, 40, 40, 60));
        let h = EnvConfig::preset("pursuit_hard").unwrap();
        assert_eq!((h.n_agents, h.n_enemies, h.map_w, h.n_walls), (6, 6, 100, 300));
        assert_eq!(p.episode_limit, 350);
    }

    #[test]
    fn unknown_preset_is_config_error() {
        assert!(matches!(EnvConfig::preset("smac"), Err(Error::Config { .. })));
    }

    #[test]
    fn overfull_map_is_rejected() {
        let cfg = EnvConfig {
            n_walls: 400,
            ..EnvConfig::preset("pursuit_small").unwrap()
        };
        assert!(matches!(make_env(&cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn observation_length_formula() {
        let cfg = EnvConfig::preset("pursuit_small").unwrap();
        let r = cfg.view_radius;
        assert_eq!(cfg.obs_dim(), (2 * r + 1) * (2 * r + 1) * 3 + 2 + 6);
    }
}
