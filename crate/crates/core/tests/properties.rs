use jim_core::env::{Action, GridEnv, Pos};
use jim_core::numeric::{categorical_kl, rng_from_seed, softmax, Distribution, Tensor};
use jim_core::partition::{brute_force_partition, optimality_gap};
use jim_core::{greedy_partition, make_env, EnvConfig, EnvKind, QMixer, VisibilityGraph};
use proptest::prelude::*;

const ATTACK: usize = 5;

fn graph() -> impl Strategy<Value = (usize, f64, u64)> {
    (1usize..=12, 0.0f64..=1.0, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn greedy_is_an_exact_legal_cover((n, p, seed) in graph()) {
        let g = VisibilityGraph::random(n, p, &mut rng_from_seed(seed));
        let part = greedy_partition(&g, &mut rng_from_seed(seed ^ 1));
        part.validate(&g).unwrap();
        let sizes: usize = part.team_sizes().iter().sum();
        prop_assert_eq!(sizes, n);
        let again = greedy_partition(&g, &mut rng_from_seed(seed ^ 1));
        prop_assert_eq!(part, again);
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_self(
        a in prop::collection::vec(-20.0f64..20.0, 2..12),
        shift in -5.0f64..5.0,
        t in 0.05f64..10.0,
    ) {
        let p = Distribution::from_logits(&a, t).unwrap();
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift * (i as f64).sin()).collect();
        let q = Distribution::from_logits(&b, 1.0).unwrap();
        prop_assert!(categorical_kl(&p, &q).unwrap() >= -1e-12);
        prop_assert!(categorical_kl(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn softmax_is_a_distribution(a in prop::collection::vec(-500.0f64..500.0, 1..20), t in 0.01f64..50.0) {
        let s = softmax(&a, t).unwrap();
        prop_assert!(s.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // order preserving and shift invariant
        let top = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let i = a.iter().position(|x| *x == top).unwrap();
        prop_assert!(s.iter().all(|x| *x <= s[i]));
        let shifted: Vec<f64> = a.iter().map(|x| x + 7.5).collect();
        let s2 = softmax(&shifted, t).unwrap();
        for (x, y) in s.iter().zip(&s2) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn brute_force_never_loses_to_greedy((n, p, seed) in (1usize..=8, 0.0f64..=1.0, any::<u64>())) {
        let g = VisibilityGraph::random(n, p, &mut rng_from_seed(seed));
        let greedy = greedy_partition(&g, &mut rng_from_seed(seed));
        let best = brute_force_partition(&g, 0.01).unwrap();
        best.validate(&g).unwrap();
        let gg = optimality_gap(&greedy, n, 0.01).unwrap();
        let gb = optimality_gap(&best, n, 0.01).unwrap();
        prop_assert!(gb <= gg + 1e-12, "brute {} greedy {}", gb, gg);
    }
}

#[test]
fn softmax_and_kl_over_ten_thousand_draws() {
    use rand::Rng;
    let mut rng = rng_from_seed(17);
    for _ in 0..10_000 {
        let n = rng.gen_range(2..10);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let t = rng.gen_range(0.1..5.0);
        let p = softmax(&a, t).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|x| *x >= 0.0));
        let kl = categorical_kl(&Distribution::new(p).unwrap(), &Distribution::from_logits(&b, 1.0).unwrap()).unwrap();
        assert!(kl >= 0.0 && kl.is_finite(), "{kl}");
    }
}

#[test]
fn mixer_is_monotone_in_every_agent_value() {
    use rand::Rng;
    let mut rng = rng_from_seed(23);
    let (n, sd) = (4, 6);
    let mixer = QMixer::new(n, sd, 8, 16, &mut rng);
    for _ in 0..1000 {
        let qs: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let st: Vec<f64> = (0..sd).map(|_| rng.gen_range(0.0..1.0)).collect();
        let i = rng.gen_range(0..n);
        let bump = rng.gen_range(1e-3..2.0);
        let mut up = qs.clone();
        up[i] += bump;
        let s = Tensor::matrix(1, sd, st);
        let base = mixer.forward(&Tensor::matrix(1, n, qs), &s).unwrap()[0];
        let raised = mixer.forward(&Tensor::matrix(1, n, up), &s).unwrap()[0];
        assert!(raised >= base, "{raised} < {base}");
    }
}

fn witness_config() -> EnvConfig {
    EnvConfig {
        kind: EnvKind::Pursuit,
        n_agents: 2,
        n_enemies: 1,
        map_w: 3,
        map_h: 3,
        n_walls: 0,
        view_radius: 1,
        ..EnvConfig::preset("pursuit_small").unwrap()
    }
}

/// Expected reward of our agent attacking, against a co-player that attacks
/// with probability `p` and otherwise picks uniformly among the other actions.
fn attack_value(p: f64) -> f64 {
    let n = Action::ALL.len();
    assert_eq!(Action::from_index(ATTACK), Some(Action::Attack));
    let mut ev = 0.0;
    for co in 0..n {
        let w = if co == ATTACK { p } else { (1.0 - p) / (n - 1) as f64 };
        let mut env = GridEnv::from_layout(witness_config(), &[Pos::new(0, 1), Pos::new(2, 1)], &[Pos::new(1, 1)], &[])
            .unwrap();
        let r = env.step(&[ATTACK, co]).unwrap();
        ev += w * r.reward;
    }
    ev
}

#[test]
fn attack_value_changes_sign_with_partner_commitment() {
    let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
    let values: Vec<f64> = grid.iter().map(|&p| attack_value(p)).collect();
    assert!(values[0] < 0.0 && values[20] > 0.0, "{values:?}");
    assert!(values.windows(2).all(|w| w[1] >= w[0]));
    // linear in p: solo penalty at 0, catch reward at 1
    for (p, v) in grid.iter().zip(&values) {
        assert!((v - (p * 10.0 + (1.0 - p) * -2.0)).abs() < 1e-12);
    }
}

#[test]
fn same_seed_and_actions_give_identical_trajectories() {
    use rand::Rng;
    let cfg = EnvConfig::preset("pursuit_small").unwrap();
    let run = |seed: u64| {
        let mut env = make_env(&cfg).unwrap();
        let mut rng = rng_from_seed(5);
        let mut trace = vec![env.reset(seed).unwrap().concat()];
        loop {
            let a: Vec<usize> = (0..4).map(|_| rng.gen_range(0..cfg.n_actions())).collect();
            let r = env.step(&a).unwrap();
            trace.push(r.obs.concat());
            trace.push(vec![r.reward]);
            trace.push(env.global_state());
            if r.done {
                break;
            }
        }
        trace
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
}

#[test]
fn entities_are_conserved() {
    use rand::Rng;
    let cfg = EnvConfig::preset("pursuit_small").unwrap();
    let mut env = make_env(&cfg).unwrap();
    let mut rng = rng_from_seed(2);
    for seed in 0..20 {
        env.reset(seed).unwrap();
        let mut prey = env.prey_positions().len();
        loop {
            let a: Vec<usize> = (0..4).map(|_| rng.gen_range(0..cfg.n_actions())).collect();
            let r = env.step(&a).unwrap();
            assert_eq!(env.agent_positions().len(), 4);
            let now = env.prey_positions().len();
            assert_eq!(prey - now, r.info.caught);
            prey = now;
            if r.done {
                break;
            }
        }
    }
}
