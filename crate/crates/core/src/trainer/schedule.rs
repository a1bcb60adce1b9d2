use serde::{Deserialize, Serialize};

use crate::config::ScheduleConfig;

/// Linear ε annealing, clamped at the end value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub eps_start: f64,
    pub eps_end: f64,
    pub anneal_steps: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::from(&ScheduleConfig::default())
    }
}

impl From<&ScheduleConfig> for Schedule {
    fn from(c: &ScheduleConfig) -> Self {
        Schedule {
            eps_start: c.eps_start,
            eps_end: c.eps_end,
            anneal_steps: c.anneal_steps,
        }
    }
}

pub fn epsilon_at(step: usize, s: &Schedule) -> f64 {
    if s.anneal_steps == 0 || step >= s.anneal_steps {
        return s.eps_end;
    }
    let frac = step as f64 / s.anneal_steps as f64;
    s.eps_start + (s.eps_end - s.eps_start) * frac
}
