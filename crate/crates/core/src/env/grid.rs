use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvConfig, StepInfo, StepResult};
use crate::error::{Error, Result};
use crate::numeric::{rng_from_seed, Rng as EnvRng};
use crate::partition::VisibilityGraph;

pub const N_ACTIONS: usize = 6;
/// Side length of the downsampled global state.
pub const MINIMAP: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Stay = 0,
    Up = 1,
    Down = 2,
    Left = 3,
    Right = 4,
    Attack = 5,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [
        Action::Stay,
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Attack,
    ];

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay | Action::Attack => (0, 0),
        }
    }

    pub fn is_move(self) -> bool {
        !matches!(self, Action::Stay | Action::Attack)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub fn new(x: i32, y: i32) -> Self {
        Pos { x, y }
    }

    pub fn chebyshev(self, o: Pos) -> i32 {
        (self.x - o.x).abs().max((self.y - o.y).abs())
    }

    pub fn dist_sq(self, o: Pos) -> i32 {
        let (dx, dy) = (self.x - o.x, self.y - o.y);
        dx * dx + dy * dy
    }

    fn offset(self, (dx, dy): (i32, i32)) -> Pos {
        Pos::new(self.x + dx, self.y + dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Cell {
    Empty,
    Wall,
    Agent,
    Prey,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prey {
    pub pos: Pos,
    pub hp: u32,
    pub alive: bool,
}

/// MAgent-style predator-prey grid.
#[derive(Clone, Debug)]
pub struct GridEnv {
    config: EnvConfig,
    cells: Vec<Cell>,
    agents: Vec<Pos>,
    prey: Vec<Prey>,
    last_actions: Vec<usize>,
    step: usize,
    rng: EnvRng,
}

impl GridEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let mut env = GridEnv {
            cells: Vec::new(),
            agents: Vec::new(),
            prey: Vec::new(),
            last_actions: Vec::new(),
            step: 0,
            rng: rng_from_seed(seed),
            config,
        };
        env.reset(seed)?;
        Ok(env)
    }

    /// Build a grid with explicit entity positions; used by tests and probes.
    pub fn from_layout(config: EnvConfig, agents: &[Pos], prey: &[Pos], walls: &[Pos]) -> Result<Self> {
        let mut config = config;
        config.n_agents = agents.len();
        config.n_enemies = prey.len();
        config.n_walls = walls.len();
        config.validate()?;
        let mut env = GridEnv {
            cells: vec![Cell::Empty; config.map_w * config.map_h],
            agents: Vec::new(),
            prey: Vec::new(),
            last_actions: vec![0; agents.len()],
            step: 0,
            rng: rng_from_seed(config.seed),
            config,
        };
        for (list, cell) in [(walls, Cell::Wall), (agents, Cell::Agent), (prey, Cell::Prey)] {
            for p in list {
                if !env.in_bounds(*p) || env.cell(*p) != Cell::Empty {
                    return Err(Error::config("env.layout", format!("cell {p:?} is unusable")));
                }
                env.set(*p, cell);
            }
        }
        env.agents = agents.to_vec();
        let hp = env.config.prey_hp;
        env.prey = prey.iter().map(|p| Prey { pos: *p, hp, alive: true }).collect();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn agent_positions(&self) -> &[Pos] {
        &self.agents
    }

    pub fn prey(&self) -> &[Prey] {
        &self.prey
    }

    pub fn prey_remaining(&self) -> usize {
        self.prey.iter().filter(|p| p.alive).count()
    }

    pub fn removed_fraction(&self) -> f64 {
        if self.prey.is_empty() {
            return 0.0;
        }
        1.0 - self.prey_remaining() as f64 / self.prey.len() as f64
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        !self.in_bounds(p) || self.cell(p) == Cell::Wall
    }

    fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.config.map_w && (p.y as usize) < self.config.map_h
    }

    fn idx(&self, p: Pos) -> usize {
        p.y as usize * self.config.map_w + p.x as usize
    }

    fn cell(&self, p: Pos) -> Cell {
        self.cells[self.idx(p)]
    }

    fn set(&mut self, p: Pos, c: Cell) {
        let i = self.idx(p);
        self.cells[i] = c;
    }

    fn free(&self, p: Pos) -> bool {
        self.in_bounds(p) && self.cell(p) == Cell::Empty
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<Vec<f64>>> {
        let (w, h) = (self.config.map_w, self.config.map_h);
        self.rng = rng_from_seed(seed);
        self.cells = vec![Cell::Empty; w * h];
        let mut order: Vec<usize> = (0..w * h).collect();
        order.shuffle(&mut self.rng);
        let needed = self.config.n_walls + self.config.n_agents + self.config.n_enemies;
        if needed > order.len() {
            return Err(Error::config("env.n_walls", "entities do not fit on the map"));
        }
        let to_pos = |i: usize| Pos::new((i % w) as i32, (i / w) as i32);
        let mut it = order.into_iter();
        for _ in 0..self.config.n_walls {
            let p = to_pos(it.next().unwrap());
            self.set(p, Cell::Wall);
        }
        self.agents.clear();
        for _ in 0..self.config.n_agents {
            let p = to_pos(it.next().unwrap());
            self.set(p, Cell::Agent);
            self.agents.push(p);
        }
        self.prey.clear();
        for _ in 0..self.config.n_enemies {
            let p = to_pos(it.next().unwrap());
            self.set(p, Cell::Prey);
            self.prey.push(Prey {
                pos: p,
                hp: self.config.prey_hp,
                alive: true,
            });
        }
        self.last_actions = vec![0; self.config.n_agents];
        self.step = 0;
        Ok(self.observations())
    }

    /// Target prey of an attack: the nearest live prey within attack range,
    /// lowest index on ties.
    fn attack_target(&self, agent: usize) -> Option<usize> {
        let pos = self.agents[agent];
        let range = self.config.attack_range as i32;
        self.prey
            .iter()
            .enumerate()
            .filter(|(_, p)| p.alive && p.pos.chebyshev(pos) <= range)
            .min_by_key(|(i, p)| (p.pos.chebyshev(pos), *i))
            .map(|(i, _)| i)
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        let n = self.agents.len();
        if actions.len() != n {
            return Err(Error::Dimension(format!(
                "joint action has {} entries for {n} agents",
                actions.len()
            )));
        }
        let acts: Vec<Action> = actions
            .iter()
            .map(|&a| Action::from_index(a).ok_or_else(|| Error::Parameter(format!("action id {a} out of range"))))
            .collect::<Result<_>>()?;
        if self.step >= self.config.episode_limit || self.prey_remaining() == 0 {
            return Err(Error::Invariant("step called on a finished episode".into()));
        }

        let mut reward = 0.0;
        let mut info = StepInfo::default();

        // attacks resolve against pre-move positions
        let mut attackers = vec![0usize; self.prey.len()];
        let mut targets = vec![None; n];
        for i in 0..n {
            if acts[i] == Action::Attack {
                targets[i] = self.attack_target(i);
                if let Some(t) = targets[i] {
                    attackers[t] += 1;
                }
            }
        }
        for i in 0..n {
            if acts[i] != Action::Attack {
                continue;
            }
            if targets[i].map_or(false, |t| attackers[t] == 1) {
                reward += self.config.solo_penalty;
                info.solo_attacks += 1;
            }
        }
        for (t, &k) in attackers.iter().enumerate() {
            if k < 2 {
                continue;
            }
            if self.config.kind.uses_hp() {
                let hits = k as u32;
                reward += self.config.per_hit_reward * k as f64;
                info.hits += k;
                let prey = &mut self.prey[t];
                prey.hp = prey.hp.saturating_sub(hits);
                if prey.hp == 0 {
                    prey.alive = false;
                    info.killed += 1;
                    let p = prey.pos;
                    self.set(p, Cell::Empty);
                }
            } else {
                reward += self.config.catch_reward;
                info.caught += 1;
                self.prey[t].alive = false;
                let p = self.prey[t].pos;
                self.set(p, Cell::Empty);
            }
        }

        // simultaneous moves: a target cell must be free now and unclaimed by
        // a lower-index agent
        let mut claimed: Vec<Pos> = Vec::with_capacity(n);
        let mut dest = self.agents.clone();
        for i in 0..n {
            if !acts[i].is_move() {
                continue;
            }
            let to = self.agents[i].offset(acts[i].delta());
            if self.free(to) && !claimed.contains(&to) {
                claimed.push(to);
                dest[i] = to;
            }
        }
        for i in 0..n {
            if dest[i] != self.agents[i] {
                self.set(self.agents[i], Cell::Empty);
            }
        }
        for i in 0..n {
            self.set(dest[i], Cell::Agent);
        }
        self.agents = dest;

        self.prey_policy_step();

        if self.config.kind.uses_hp() {
            let (cap, regen) = (self.config.prey_hp, self.config.prey_regen);
            for p in self.prey.iter_mut().filter(|p| p.alive) {
                p.hp = (p.hp + regen).min(cap);
            }
        }

        self.last_actions = actions.to_vec();
        self.step += 1;
        info.prey_remaining = self.prey_remaining();
        info.terminated = info.prey_remaining == 0;
        let done = info.terminated || self.step >= self.config.episode_limit;
        Ok(StepResult {
            obs: self.observations(),
            reward,
            done,
            info,
        })
    }

    /// Scripted escape: each live prey steps to the free neighbour (or stays)
    /// that maximises squared distance to the nearest agent, ties by RNG. With
    /// no agent within twice the view radius it moves to a uniformly random
    /// free neighbour.
    pub fn prey_policy_step(&mut self) {
        let dirs = [(0, -1), (0, 1), (-1, 0), (1, 0)];
        let alert = 2 * self.config.view_radius as i32;
        for j in 0..self.prey.len() {
            if !self.prey[j].alive {
                continue;
            }
            if self.config.prey_move_prob < 1.0 && !self.rng.gen_bool(self.config.prey_move_prob) {
                continue;
            }
            let here = self.prey[j].pos;
            let free: Vec<Pos> = dirs.iter().map(|d| here.offset(*d)).filter(|p| self.free(*p)).collect();
            if free.is_empty() {
                continue;
            }
            let nearest = |p: Pos, agents: &[Pos]| agents.iter().map(|a| a.dist_sq(p)).min();
            let threatened = self.agents.iter().any(|a| a.chebyshev(here) <= alert);
            let to = if !threatened {
                free[self.rng.gen_range(0..free.len())]
            } else {
                let mut candidates = free.clone();
                candidates.push(here);
                let best = candidates
                    .iter()
                    .map(|p| nearest(*p, &self.agents).unwrap_or(0))
                    .max()
                    .unwrap();
                let top: Vec<Pos> = candidates
                    .into_iter()
                    .filter(|p| nearest(*p, &self.agents).unwrap_or(0) == best)
                    .collect();
                top[self.rng.gen_range(0..top.len())]
            };
            if to != here {
                self.set(here, Cell::Empty);
                self.set(to, Cell::Prey);
                self.prey[j].pos = to;
            }
        }
    }

    pub fn observation(&self, agent: usize) -> Vec<f64> {
        let r = self.config.view_radius as i32;
        let side = (2 * r + 1) as usize;
        let mut obs = vec![0.0; self.config.obs_dim()];
        let me = self.agents[agent];
        for dy in -r..=r {
            for dx in -r..=r {
                let p = Pos::new(me.x + dx, me.y + dy);
                let base = (((dy + r) as usize) * side + (dx + r) as usize) * 3;
                if !self.in_bounds(p) {
                    obs[base + 2] = 1.0;
                    continue;
                }
                match self.cell(p) {
                    Cell::Agent if p != me => obs[base] = 1.0,
                    Cell::Prey => obs[base + 1] = 1.0,
                    Cell::Wall => obs[base + 2] = 1.0,
                    _ => {}
                }
            }
        }
        let off = side * side * 3;
        obs[off] = me.x as f64 / (self.config.map_w - 1).max(1) as f64;
        obs[off + 1] = me.y as f64 / (self.config.map_h - 1).max(1) as f64;
        obs[off + 2 + self.last_actions[agent]] = 1.0;
        obs
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.agents.len()).map(|i| self.observation(i)).collect()
    }

    /// Bin side lengths of the minimap.
    pub fn bin_dims(&self) -> (usize, usize) {
        (
            self.config.map_w.div_ceil(MINIMAP),
            self.config.map_h.div_ceil(MINIMAP),
        )
    }

    /// `10 × 10 × {agent, prey, wall}` counts divided by the bin area.
    pub fn global_state(&self) -> Vec<f64> {
        let (bw, bh) = self.bin_dims();
        let norm = (bw * bh) as f64;
        let mut s = vec![0.0; MINIMAP * MINIMAP * 3];
        let mut add = |p: Pos, ch: usize| {
            let bx = (p.x as usize / bw).min(MINIMAP - 1);
            let by = (p.y as usize / bh).min(MINIMAP - 1);
            s[(by * MINIMAP + bx) * 3 + ch] += 1.0 / norm;
        };
        for a in &self.agents {
            add(*a, 0);
        }
        for p in self.prey.iter().filter(|p| p.alive) {
            add(p.pos, 1);
        }
        for y in 0..self.config.map_h {
            for x in 0..self.config.map_w {
                let p = Pos::new(x as i32, y as i32);
                if self.cell(p) == Cell::Wall {
                    add(p, 2);
                }
            }
        }
        s
    }

    /// Agent `j` is visible to `i` when within the view window.
    pub fn visibility(&self) -> VisibilityGraph {
        let r = self.config.view_radius as i32;
        let sees = self
            .agents
            .iter()
            .map(|a| {
                self.agents
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| a.chebyshev(**b) <= r)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        VisibilityGraph::new(sees).expect("self is always visible")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvKind;

    fn small(kind: EnvKind) -> EnvConfig {
        EnvConfig {
            kind,
            map_w: 9,
            map_h: 9,
            view_radius: 1,
            ..EnvConfig::preset("pursuit_small").unwrap()
        }
    }

    #[test]
    fn joint_attack_catches() {
        let cfg = small(EnvKind::Pursuit);
        let mut env = GridEnv::from_layout(cfg, &[Pos::new(3, 4), Pos::new(5, 4)], &[Pos::new(4, 4)], &[]).unwrap();
        let r = env.step(&[5, 5]).unwrap();
        assert_eq!(r.reward, 10.0);
        assert_eq!(r.info.caught, 1);
        assert!(r.done && r.info.terminated);
    }

    #[test]
    fn solo_attack_is_penalised() {
        let cfg = small(EnvKind::Pursuit);
        let mut env = GridEnv::from_layout(
            cfg,
            &[Pos::new(3, 4), Pos::new(0, 0)],
            &[Pos::new(4, 4)],
            &[],
        )
        .unwrap();
        let r = env.step(&[5, 0]).unwrap();
        assert_eq!(r.reward, -2.0);
        assert_eq!(r.info.solo_attacks, 1);
        assert_eq!(env.prey_remaining(), 1);
        // nothing in range: no target, no penalty
        let r = env.step(&[0, 5]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.info.solo_attacks, 0);
    }

    #[test]
    fn tiger_loses_hp_then_regenerates() {
        let cfg = small(EnvKind::Tiger);
        let mut env = GridEnv::from_layout(
            cfg,
            &[Pos::new(3, 4), Pos::new(5, 4)],
            &[Pos::new(4, 4), Pos::new(8, 8)],
            &[],
        )
        .unwrap();
        let r = env.step(&[5, 5]).unwrap();
        assert_eq!(r.reward, 2.0);
        // 5 - 2 hits + 1 regen
        assert_eq!(env.prey()[0].hp, 4);
        assert!(env.prey()[0].alive);
    }

    #[test]
    fn prey_flees_away_from_adjacent_agent() {
        let cfg = small(EnvKind::Pursuit);
        let mut env = GridEnv::from_layout(cfg, &[Pos::new(3, 4)], &[Pos::new(4, 4)], &[]).unwrap();
        env.prey_policy_step();
        assert_eq!(env.prey()[0].pos, Pos::new(5, 4));
    }

    #[test]
    fn walled_in_prey_stays() {
        let cfg = small(EnvKind::Pursuit);
        let walls = [Pos::new(3, 4), Pos::new(5, 4), Pos::new(4, 3), Pos::new(4, 5)];
        let mut env = GridEnv::from_layout(cfg, &[Pos::new(0, 0)], &[Pos::new(4, 4)], &walls).unwrap();
        env.prey_policy_step();
        assert_eq!(env.prey()[0].pos, Pos::new(4, 4));
    }

    #[test]
    fn lower_index_wins_contested_cell() {
        let cfg = small(EnvKind::Pursuit);
        let mut env = GridEnv::from_layout(
            cfg,
            &[Pos::new(3, 4), Pos::new(5, 4)],
            &[Pos::new(8, 0)],
            &[],
        )
        .unwrap();
        env.step(&[4, 3]).unwrap();
        assert_eq!(env.agent_positions(), &[Pos::new(4, 4), Pos::new(5, 4)]);
    }

    #[test]
    fn out_of_bounds_reads_as_wall() {
        let cfg = small(EnvKind::Pursuit);
        let env = GridEnv::from_layout(cfg, &[Pos::new(0, 0)], &[Pos::new(8, 8)], &[]).unwrap();
        let obs = env.observation(0);
        // top-left cell of the 3x3 window, wall channel
        assert_eq!(obs[2], 1.0);
        // centre cell holds self, which is not marked as ally
        assert_eq!(obs[4 * 3], 0.0);
    }

    #[test]
    fn minimap_bins_top_left_agent() {
        let cfg = EnvConfig {
            n_walls: 0,
            ..EnvConfig::preset("pursuit").unwrap()
        };
        let env = GridEnv::from_layout(cfg, &[Pos::new(0, 0)], &[], &[]).unwrap();
        let s = env.global_state();
        let (bw, bh) = env.bin_dims();
        assert_eq!((bw, bh), (6, 6));
        assert!((s[0] * 36.0 - 1.0).abs() < 1e-12);
        assert_eq!(s.iter().filter(|v| **v != 0.0).count(), 1);
    }
}
