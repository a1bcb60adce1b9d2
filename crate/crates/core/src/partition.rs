//! Greedy commander-led team partitioning and its optimality gap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest agent count accepted by [`brute_force_partition`].
pub const BRUTE_FORCE_MAX_AGENTS: usize = 10;

/// Who sees whom. `sees[i]` is sorted and always contains `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityGraph {
    sees: Vec<Vec<usize>>,
}

impl VisibilityGraph {
    pub fn new(mut sees: Vec<Vec<usize>>) -> Result<Self> {
        let n = sees.len();
        if n == 0 {
            return Err(Error::Empty("visibility graph has no agents".into()));
        }
        for (i, s) in sees.iter_mut().enumerate() {
            s.sort_unstable();
            s.dedup();
            if let Some(j) = s.iter().find(|j| **j >= n) {
                return Err(Error::Parameter(format!("agent {i} sees unknown agent {j}")));
            }
            if s.binary_search(&i).is_err() {
                return Err(Error::Invariant(format!("agent {i} does not see itself")));
            }
        }
        Ok(VisibilityGraph { sees })
    }

    /// Every agent sees only itself.
    pub fn empty(n: usize) -> Self {
        VisibilityGraph {
            sees: (0..n).map(|i| vec![i]).collect(),
        }
    }

    pub fn complete(n: usize) -> Self {
        VisibilityGraph {
            sees: vec![(0..n).collect(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.sees.len()
    }

    pub fn sees(&self, i: usize) -> &[usize] {
        &self.sees[i]
    }

    pub fn can_see(&self, i: usize, j: usize) -> bool {
        self.sees[i].binary_search(&j).is_ok()
    }

    /// Random graph where each ordered pair is visible with probability `p`.
    pub fn random<R: Rng>(n: usize, p: f64, rng: &mut R) -> Self {
        let sees = (0..n)
            .map(|i| (0..n).filter(|&j| j == i || rng.gen_bool(p)).collect())
            .collect();
        VisibilityGraph { sees }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Team {
    pub commander: usize,
    /// Sorted, includes the commander.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamPartition {
    pub n: usize,
    pub teams: Vec<Team>,
}

impl TeamPartition {
    /// Number of teams, `M`.
    pub fn len(&self) -> usize {
        self.teams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teams.is_empty()
    }

    pub fn team_sizes(&self) -> Vec<usize> {
        self.teams.iter().map(|t| t.members.len()).collect()
    }

    /// Team index of every agent.
    pub fn assignment(&self) -> Vec<usize> {
        let mut a = vec![usize::MAX; self.n];
        for (j, t) in self.teams.iter().enumerate() {
            for &m in &t.members {
                a[m] = j;
            }
        }
        a
    }

    /// Every agent in its own team.
    pub fn singletons(n: usize) -> Self {
        TeamPartition {
            n,
            teams: (0..n)
                .map(|i| Team {
                    commander: i,
                    members: vec![i],
                })
                .collect(),
        }
    }

    /// Check exact cover and commander legality against `g`.
    pub fn validate(&self, g: &VisibilityGraph) -> Result<()> {
        if self.n != g.n() {
            return Err(Error::Dimension(format!("partition of {} agents for graph of {}", self.n, g.n())));
        }
        let mut seen = vec![false; self.n];
        for t in &self.teams {
            if t.members.binary_search(&t.commander).is_err() {
                return Err(Error::Invariant(format!("commander {} outside its team", t.commander)));
            }
            for &m in &t.members {
                if m >= self.n || seen[m] {
                    return Err(Error::Invariant(format!("agent {m} covered twice or out of range")));
                }
                seen[m] = true;
                if !g.can_see(t.commander, m) {
                    return Err(Error::Invariant(format!("commander {} cannot see member {m}", t.commander)));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Invariant(format!("agent {i} not covered")));
        }
        Ok(())
    }
}

/// Repeatedly promote the unassigned agent seeing the most unassigned agents
/// to commander of everyone it sees. Ties are broken uniformly by `rng`.
pub fn greedy_partition<R: Rng>(g: &VisibilityGraph, rng: &mut R) -> TeamPartition {
    let n = g.n();
    let mut unassigned = vec![true; n];
    let mut left = n;
    let mut teams = Vec::new();
    while left > 0 {
        let mut best = 0;
        let mut ties: Vec<usize> = Vec::new();
        for c in (0..n).filter(|&c| unassigned[c]) {
            let count = g.sees(c).iter().filter(|&&j| unassigned[j]).count();
            if count > best {
                best = count;
                ties.clear();
            }
            if count == best {
                ties.push(c);
            }
        }
        let commander = if ties.len() == 1 {
            ties[0]
        } else {
            ties[rng.gen_range(0..ties.len())]
        };
        let members: Vec<usize> = g.sees(commander).iter().copied().filter(|&j| unassigned[j]).collect();
        for &m in &members {
            unassigned[m] = false;
        }
        left -= members.len();
        teams.push(Team { commander, members });
    }
    TeamPartition { n, teams }
}

/// `Σ_i (2^(n − K_i) − 1)·eps` where `K_i` is the size of agent `i`'s team.
pub fn optimality_gap(p: &TeamPartition, n: usize, eps_gap: f64) -> Result<f64> {
    if eps_gap < 0.0 {
        return Err(Error::Parameter(format!("eps_gap must be non-negative, got {eps_gap}")));
    }
    let mut gap = 0.0;
    for t in &p.teams {
        let k = t.members.len();
        if k > n {
            return Err(Error::Invariant(format!("team of {k} agents exceeds n = {n}")));
        }
        gap += k as f64 * ((2f64).powi((n - k) as i32) - 1.0) * eps_gap;
    }
    Ok(gap)
}

/// Exhaustive search over commander-led exact covers for the minimum gap.
pub fn brute_force_partition(g: &VisibilityGraph, eps_gap: f64) -> Result<TeamPartition> {
    let n = g.n();
    if n > BRUTE_FORCE_MAX_AGENTS {
        return Err(Error::Guard(format!(
            "brute-force partition supports at most {BRUTE_FORCE_MAX_AGENTS} agents, got {n}"
        )));
    }
    if eps_gap < 0.0 {
        return Err(Error::Parameter(format!("eps_gap must be non-negative, got {eps_gap}")));
    }
    let sees: Vec<u32> = (0..n)
        .map(|i| g.sees(i).iter().fold(0u32, |m, &j| m | 1 << j))
        .collect();
    // lowest legal commander of every subset, if any
    let full = (1u32 << n) - 1;
    let commander: Vec<Option<usize>> = (0..=full)
        .map(|mask| (0..n).find(|&c| mask >> c & 1 == 1 && mask & !sees[c] == 0))
        .collect();
    let team_cost = |k: u32| -> u64 { k as u64 * ((1u64 << (n as u32 - k)) - 1) };

    struct Search<'a> {
        commander: &'a [Option<usize>],
        cost: &'a dyn Fn(u32) -> u64,
        best: u64,
        best_teams: Vec<u32>,
        stack: Vec<u32>,
    }

    fn go(s: &mut Search<'_>, left: u32, acc: u64) {
        if left == 0 {
            if acc < s.best || s.best_teams.is_empty() {
                s.best = acc;
                s.best_teams = s.stack.clone();
            }
            return;
        }
        let a = left.trailing_zeros();
        let rest = left & !(1 << a);
        // walk all submasks of `rest`, largest first
        let mut sub = rest;
        loop {
            let team = sub | 1 << a;
            if s.commander[team as usize].is_some() {
                let c = acc + (s.cost)(team.count_ones());
                if c < s.best || s.best_teams.is_empty() {
                    s.stack.push(team);
                    go(s, left & !team, c);
                    s.stack.pop();
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }

    let mut s = Search {
        commander: &commander,
        cost: &team_cost,
        best: u64::MAX,
        best_teams: Vec::new(),
        stack: Vec::new(),
    };
    go(&mut s, full, 0);
    let teams = s
        .best_teams
        .iter()
        .map(|&mask| Team {
            commander: commander[mask as usize].expect("legal team"),
            members: (0..n).filter(|&j| mask >> j & 1 == 1).collect(),
        })
        .collect();
    Ok(TeamPartition { n, teams })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng_from_seed;

    fn graph(sees: &[&[usize]]) -> VisibilityGraph {
        VisibilityGraph::new(sees.iter().map(|s| s.to_vec()).collect()).unwrap()
    }

    #[test]
    fn hand_traced_single_team() {
        let g = graph(&[&[0, 1, 2], &[1, 0], &[2]]);
        let p = greedy_partition(&g, &mut rng_from_seed(0));
        assert_eq!(p.teams, vec![Team { commander: 0, members: vec![0, 1, 2] }]);
    }

    #[test]
    fn empty_graph_gives_singletons() {
        let g = VisibilityGraph::empty(4);
        let p = greedy_partition(&g, &mut rng_from_seed(0));
        assert_eq!(p.len(), 4);
        assert!(p.teams.iter().all(|t| t.members.len() == 1));
    }

    #[test]
    fn complete_graph_commander_varies_with_rng() {
        let g = VisibilityGraph::complete(5);
        let mut commanders = std::collections::BTreeSet::new();
        for seed in 0..64 {
            let p = greedy_partition(&g, &mut rng_from_seed(seed));
            assert_eq!(p.len(), 1);
            assert_eq!(p.teams[0].members, vec![0, 1, 2, 3, 4]);
            commanders.insert(p.teams[0].commander);
        }
        assert_eq!(commanders.len(), 5);
    }

    #[test]
    fn gap_examples() {
        let full = TeamPartition {
            n: 4,
            teams: vec![Team { commander: 2, members: vec![0, 1, 2, 3] }],
        };
        assert_eq!(optimality_gap(&full, 4, 0.01).unwrap(), 0.0);
        let single = TeamPartition::singletons(3);
        assert!((optimality_gap(&single, 3, 0.01).unwrap() - 0.09).abs() < 1e-15);
        assert_eq!(optimality_gap(&single, 3, 0.0).unwrap(), 0.0);
        assert!(matches!(optimality_gap(&full, 3, 0.01), Err(Error::Invariant(_))));
    }

    #[test]
    fn chain_optimum_is_led_by_middle_agent() {
        let g = graph(&[&[0, 1], &[1, 0, 2], &[2, 1]]);
        let p = brute_force_partition(&g, 0.01).unwrap();
        assert_eq!(p.teams, vec![Team { commander: 1, members: vec![0, 1, 2] }]);
        assert_eq!(optimality_gap(&p, 3, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn brute_force_guard() {
        let g = VisibilityGraph::empty(11);
        assert!(matches!(brute_force_partition(&g, 0.01), Err(Error::Guard(_))));
    }

    #[test]
    fn brute_force_on_empty_graph_is_singletons() {
        let g = VisibilityGraph::empty(5);
        let p = brute_force_partition(&g, 0.01).unwrap();
        assert_eq!(p, TeamPartition::singletons(5));
    }

    #[test]
    fn graph_requires_self_visibility() {
        assert!(VisibilityGraph::new(vec![vec![1], vec![1]]).is_err());
    }
}
