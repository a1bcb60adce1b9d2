use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use crate::partition::TeamPartition;

/// One stored episode. Observations and states keep `T + 1` entries, the
/// per-step records `T`.
///
/// Observations are held as `f32`; rollouts act on the same rounded values so
/// replay sees exactly what the policy saw.
#[derive(Clone, Debug)]
pub struct Episode {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    /// `[T + 1][n · obs_dim]`
    pub obs: Vec<Vec<f32>>,
    /// `[T + 1][state_dim]`
    pub states: Vec<Vec<f32>>,
    pub partitions: Vec<TeamPartition>,
    /// Intention of every team, aligned with `partitions[t].teams`.
    pub z: Vec<Vec<usize>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    pub terminal: Vec<bool>,
    pub seed: u64,
}

impl Episode {
    pub fn new(n_agents: usize, obs_dim: usize, state_dim: usize, seed: u64) -> Self {
        Episode {
            n_agents,
            obs_dim,
            state_dim,
            obs: Vec::new(),
            states: Vec::new(),
            partitions: Vec::new(),
            z: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminal: Vec::new(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn agent_obs(&self, t: usize, agent: usize) -> &[f32] {
        &self.obs[t][agent * self.obs_dim..(agent + 1) * self.obs_dim]
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Round to the stored precision.
pub fn quantize(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}

/// Ring buffer of whole episodes, sampled uniformly.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Arc<Episode>>,
}

/// Sampled episodes plus the validity mask of the padded time axis.
#[derive(Clone, Debug)]
pub struct EpisodeBatch {
    pub episodes: Vec<Arc<Episode>>,
    pub max_len: usize,
    /// `[batch][max_len]`, 1 for real steps.
    pub mask: Vec<Vec<f64>>,
}

impl EpisodeBatch {
    pub fn from_episodes(episodes: Vec<Arc<Episode>>) -> Self {
        let max_len = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
        let mask = episodes
            .iter()
            .map(|e| (0..max_len).map(|t| if t < e.len() { 1.0 } else { 0.0 }).collect())
            .collect();
        EpisodeBatch {
            episodes,
            max_len,
            mask,
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn valid_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.len()).sum()
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, e: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(Arc::new(e));
    }

    pub fn get(&self, i: usize) -> &Episode {
        &self.episodes[i]
    }

    /// `None` while fewer than `batch_size` episodes are stored.
    pub fn sample_batch<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Option<EpisodeBatch> {
        if self.episodes.len() < batch_size || batch_size == 0 {
            return None;
        }
        let picks = (0..batch_size)
            .map(|_| Arc::clone(&self.episodes[rng.gen_range(0..self.episodes.len())]))
            .collect();
        Some(EpisodeBatch::from_episodes(picks))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng_from_seed;

    fn episode(len: usize, seed: u64) -> Episode {
        let mut e = Episode::new(1, 1, 1, seed);
        for t in 0..len {
            e.obs.push(vec![t as f32]);
            e.states.push(vec![0.0]);
            e.partitions.push(TeamPartition::singletons(1));
            e.z.push(vec![0]);
            e.actions.push(vec![0]);
            e.rewards.push(0.0);
            e.terminal.push(t + 1 == len);
        }
        e.obs.push(vec![len as f32]);
        e.states.push(vec![0.0]);
        e
    }

    #[test]
    fn underfull_buffer_is_not_ready() {
        let mut b = ReplayBuffer::new(10);
        b.push(episode(3, 0));
        assert!(b.sample_batch(4, &mut rng_from_seed(0)).is_none());
    }

    #[test]
    fn padding_mask_tracks_lengths() {
        let batch = EpisodeBatch::from_episodes(vec![Arc::new(episode(2, 0)), Arc::new(episode(4, 1))]);
        assert_eq!(batch.max_len, 4);
        assert_eq!(batch.mask[0], vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(batch.mask[1], vec![1.0; 4]);
    }

    #[test]
    fn capacity_evicts_oldest() {
        let mut b = ReplayBuffer::new(2);
        for s in 0..3 {
            b.push(episode(1, s));
        }
        assert_eq!(b.len(), 2);
        assert_eq!(b.get(0).seed, 1);
    }

    #[test]
    fn sampling_is_seeded() {
        let mut b = ReplayBuffer::new(50);
        for s in 0..50 {
            b.push(episode(1, s));
        }
        let seeds = |seed| {
            b.sample_batch(4, &mut rng_from_seed(seed))
                .unwrap()
                .episodes
                .iter()
                .map(|e| e.seed)
                .collect::<Vec<_>>()
        };
        assert_eq!(seeds(7), seeds(7));
    }
}
