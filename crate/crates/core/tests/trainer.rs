use jim_core::config::{ExperimentConfig, Mode};
use jim_core::mixer::total_objective;
use jim_core::numeric::{rng_from_seed, Module, OptimizerState, RmsPropConfig};
use jim_core::trainer::{
    compute_gradients, epsilon_at, pure_objective_method, rollout, sync_targets, toy_batch, toy_networks, train_seed,
    train_step, NetworkBundle, RolloutSpec, Schedule, ToyDims,
};
use jim_core::{make_env, Networks};

fn bundle(seed: u64, intentions: bool) -> NetworkBundle {
    let mut rng = rng_from_seed(seed);
    let online = toy_networks(ToyDims::default(), intentions, &mut rng);
    NetworkBundle {
        target: online.clone(),
        online,
    }
}

fn params(n: &Networks) -> Vec<f64> {
    let mut v = Vec::new();
    n.visit_params(&mut |p| v.extend_from_slice(p.value.data()));
    v
}

#[test]
fn schedule_endpoints() {
    let s = Schedule::default();
    assert_eq!(epsilon_at(0, &s), 1.0);
    assert!((epsilon_at(35_000, &s) - 0.525).abs() < 1e-12);
    assert_eq!(epsilon_at(70_000, &s), 0.05);
    assert_eq!(epsilon_at(10_000_000, &s), 0.05);
}

#[test]
fn zero_networks_and_rewards_give_zero_td() {
    let cfg = ExperimentConfig::for_preset("pursuit_small").unwrap();
    let mut nets = NetworkBundle::zeros(&cfg);
    let mut env = make_env(&cfg.env).unwrap();
    let mut rng = rng_from_seed(3);
    let mut batch = Vec::new();
    for e in 0..2 {
        let mut ep = rollout(&nets.online, &cfg.method, &mut env, e, &RolloutSpec::greedy(e as usize), &mut rng)
            .unwrap()
            .episode;
        ep.rewards.iter_mut().for_each(|r| *r = 0.0);
        batch.push(std::sync::Arc::new(ep));
    }
    let batch = jim_core::trainer::EpisodeBatch::from_episodes(batch);
    let mut method = cfg.method.clone();
    method.beta = 0.0;
    let s = compute_gradients(&mut nets.online, &nets.target, &batch, &method).unwrap();
    assert_eq!(s.losses.td_low, 0.0);
    assert_eq!(s.losses.td_high, 0.0);
}

#[test]
fn total_is_the_weighted_sum_of_parts() {
    let mut nets = bundle(1, true);
    let batch = toy_batch(ToyDims::default(), &[4, 2, 3], &mut rng_from_seed(2));
    let m = pure_objective_method();
    let s = compute_gradients(&mut nets.online, &nets.target, &batch, &m).unwrap();
    let l = s.losses;
    let expect = total_objective(l.td_high, l.td_low, l.l_i, l.l_a, l.l_d, m.lambda1, m.lambda2);
    assert_eq!(l.total, expect);
    assert!(l.l_i >= 0.0 && l.l_a >= 0.0 && l.l_d <= 0.0);
}

#[test]
fn small_step_decreases_loss_on_frozen_batch() {
    for intentions in [true, false] {
        let mut nets = bundle(4, intentions);
        let batch = toy_batch(ToyDims::default(), &[5, 3], &mut rng_from_seed(5));
        let mut m = pure_objective_method();
        if !intentions {
            m.mode = Mode::FlatQmix;
        }
        let before = compute_gradients(&mut nets.online, &nets.target, &batch, &m).unwrap().losses.total;
        let mut opt = OptimizerState::new(RmsPropConfig {
            lr: 1e-4,
            ..RmsPropConfig::default()
        });
        train_step(&mut nets, &batch, &mut opt, &m, 0.0).unwrap();
        let after = compute_gradients(&mut nets.online, &nets.target, &batch, &m).unwrap().losses.total;
        assert!(after < before, "intentions={intentions}: {before} -> {after}");
    }
}

#[test]
fn padded_steps_contribute_nothing() {
    let d = ToyDims::default();
    let batch = toy_batch(d, &[4, 2], &mut rng_from_seed(9));
    let m = pure_objective_method();
    // the same two episodes, each alone, weighted by their step counts
    let mut nets = bundle(6, true);
    let joint = compute_gradients(&mut nets.online, &nets.target, &batch, &m).unwrap().losses.td_low;
    let mut parts = 0.0;
    for e in &batch.episodes {
        let single = jim_core::trainer::EpisodeBatch::from_episodes(vec![e.clone()]);
        let l = compute_gradients(&mut nets.online, &nets.target, &single, &m).unwrap().losses.td_low;
        parts += l * e.len() as f64;
    }
    assert!((joint - parts / 6.0).abs() < 1e-12, "{joint} vs {}", parts / 6.0);
}

#[test]
fn target_sync_period() {
    let mut nets = bundle(7, true);
    let batch = toy_batch(ToyDims::default(), &[3], &mut rng_from_seed(8));
    let mut opt = OptimizerState::new(RmsPropConfig::default());
    train_step(&mut nets, &batch, &mut opt, &pure_objective_method(), 10.0).unwrap();
    assert_ne!(params(&nets.online), params(&nets.target));
    assert!(!sync_targets(&mut nets, 199, 200));
    assert_ne!(params(&nets.online), params(&nets.target));
    assert!(sync_targets(&mut nets, 200, 200));
    assert_eq!(params(&nets.online), params(&nets.target));
}

#[test]
fn synced_targets_match_online_bootstrap() {
    let mut nets = bundle(10, true);
    let batch = toy_batch(ToyDims::default(), &[4, 4], &mut rng_from_seed(11));
    let m = pure_objective_method();
    let mut opt = OptimizerState::new(RmsPropConfig::default());
    train_step(&mut nets, &batch, &mut opt, &m, 10.0).unwrap();
    sync_targets(&mut nets, 400, 200);
    let a = compute_gradients(&mut nets.online, &nets.target, &batch, &m).unwrap();
    let online = nets.online.clone();
    let mut copy = nets.online.clone();
    let b = compute_gradients(&mut copy, &online, &batch, &m).unwrap();
    assert_eq!(a.losses, b.losses);
}

fn tiny_config(mode: Mode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_preset("pursuit_small").unwrap();
    cfg.method.mode = mode;
    cfg.env.episode_limit = 12;
    cfg.train.total_steps = 240;
    cfg.train.target_sync_episodes = 5;
    cfg.eval.interval_steps = 100;
    cfg.eval.episodes = 2;
    cfg.eval.final_episodes = 2;
    cfg
}

#[test]
fn identical_seed_gives_identical_log() {
    for mode in [Mode::FullMethod, Mode::FlatQmix, Mode::NoWeighting] {
        let cfg = tiny_config(mode);
        let a = train_seed(&cfg, 3, None).unwrap();
        let b = train_seed(&cfg, 3, None).unwrap();
        assert_eq!(a.log, b.log, "{mode:?}");
        assert!(a.log.losses.len() > 0);
        let steps: Vec<usize> = a.log.points.iter().map(|p| p.step).collect();
        assert!(steps.windows(2).all(|w| w[0] < w[1]), "{steps:?}");
        let c = train_seed(&cfg, 4, None).unwrap();
        assert_ne!(a.log.losses, c.log.losses);
    }
}

#[test]
fn no_weighting_log_has_the_full_schema() {
    let a = train_seed(&tiny_config(Mode::FullMethod), 1, None).unwrap().log;
    let b = train_seed(&tiny_config(Mode::NoWeighting), 1, None).unwrap().log;
    assert_eq!(a.points.len(), b.points.len());
    let header = |l: &jim_core::TrainingLog| {
        l.training_csv().lines().find(|r| !r.starts_with('#')).unwrap().to_string()
    };
    assert_eq!(header(&a), header(&b));
    assert!(b.points[1..].iter().all(|p| (p.losses.mean_alpha - 1.0).abs() < 1e-12));
}

#[test]
fn stored_actions_replay_to_stored_rewards() {
    let cfg = ExperimentConfig::for_preset("pursuit_small").unwrap();
    let nets = NetworkBundle::new(&cfg, &mut rng_from_seed(0));
    let mut env = make_env(&cfg.env).unwrap();
    let spec = RolloutSpec {
        epsilon: 0.5,
        ..RolloutSpec::greedy(0)
    };
    let ep = rollout(&nets.online, &cfg.method, &mut env, 77, &spec, &mut rng_from_seed(1)).unwrap().episode;
    let mut env2 = make_env(&cfg.env).unwrap();
    env2.reset(ep.seed).unwrap();
    for (t, a) in ep.actions.iter().enumerate() {
        let r = env2.step(a).unwrap();
        assert_eq!(r.reward, ep.rewards[t]);
        assert_eq!(r.done, ep.terminal[t]);
    }
}

#[test]
fn run_writes_artifacts_with_headers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(Mode::FullMethod);
    cfg.run.dump_trajectories = true;
    cfg.run.checkpoint_every = 10;
    let r = train_seed(&cfg, 2, Some(dir.path())).unwrap();
    let hash = cfg.hash();
    for f in ["config.toml", "training_log.csv", "losses.csv", "trajectories.jsonl"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.starts_with("# seed=2\n"), "{f}");
        assert!(text.contains(&format!("config_hash={hash}")), "{f}");
    }
    let echo = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert_eq!(ExperimentConfig::from_toml_str(&echo).unwrap(), cfg);
    let losses = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
    assert!(losses.contains("step,td_low,td_high,l_I,l_A,l_D,total,mean_alpha,mean_mi"));
    assert!(dir.path().join("summary.json").exists());
    assert!(dir.path().join("episode_10.ckpt").exists());
    let loaded = NetworkBundle::load(&cfg, &dir.path().join("final.ckpt")).unwrap();
    assert_eq!(params(&loaded.online), params(&r.nets.online));
    assert_eq!(params(&loaded.target), params(&r.nets.target));
}
