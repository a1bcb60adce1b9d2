use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use jim_core::env::read_dump;
use jim_core::eval::{ablate, Ablation, AblationResult};
use jim_core::numeric::rng_from_seed;
use jim_core::partition::{brute_force_partition, optimality_gap};
use jim_core::trainer::{gradcheck_suite, train_seed, write_log_files};
use jim_core::{
    adhoc_evaluate, evaluate, greedy_partition, intention_stats, EvalMetrics, ExperimentConfig, Mode, NetworkBundle,
    VisibilityGraph,
};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "jim", version, about = "Joint-intention value decomposition experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one run per seed and write logs and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        seeds: SeedArgs,
        /// Parallel runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Greedy evaluation of a checkpoint.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a checkpoint with agent counts drawn around the trained size.
    Adhoc {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        delta: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Constant-intention evaluation or training without α weighting.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        kind: AblationArg,
        /// Required for zero-intention.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Intention statistics from trajectory dumps.
    Analyze {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// A dump file, or a directory searched recursively for trajectories.jsonl.
        #[arg(long)]
        dumps: PathBuf,
    },
    /// Finite-difference check of every trainable block.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
    /// Greedy partition against the exhaustive optimum on random graphs.
    PartitionBench {
        #[arg(long, default_value_t = 200)]
        graphs: usize,
        #[arg(long, default_value_t = 8)]
        max_agents: usize,
        #[arg(long, default_value_t = 0.5)]
        edge_prob: f64,
        #[arg(long, default_value_t = 0.01)]
        eps_gap: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset, used when no config file is given.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Override `method.mode`.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SeedArgs {
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    FullMethod,
    FlatQmix,
    NoWeighting,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    ZeroIntention,
    NoWeighting,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    body: serde_json::Value,
}

impl From<jim_core::Error> for Failure {
    fn from(e: jim_core::Error) -> Self {
        let mut body = json!({ "error": e.kind(), "message": e.to_string() });
        let code = match &e {
            jim_core::Error::Config { path, message } => {
                body["path"] = json!(path);
                body["message"] = json!(message);
                2
            }
            _ => 1,
        };
        Failure { code, body }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        if let Some(core) = e.downcast_ref::<jim_core::Error>() {
            if let jim_core::Error::Config { path, message } = core {
                return Failure {
                    code: 2,
                    body: json!({ "error": "config", "path": path, "message": message }),
                };
            }
        }
        Failure {
            code: 1,
            body: json!({ "error": "runtime", "message": format!("{e:#}") }),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

impl ConfigArgs {
    fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::from_file(path).map_err(|e| match e {
                jim_core::Error::Io(io) => jim_core::Error::config("--config", format!("{}: {io}", path.display())),
                other => other,
            })?,
            (None, Some(name)) => ExperimentConfig::for_preset(name)?,
            (None, None) => ExperimentConfig::for_preset("pursuit_small")?,
        };
        if let Some(m) = self.mode {
            cfg.method.mode = match m {
                ModeArg::FullMethod => Mode::FullMethod,
                ModeArg::FlatQmix => Mode::FlatQmix,
                ModeArg::NoWeighting => Mode::NoWeighting,
            };
        }
        if let Some(out) = &self.out {
            cfg.run.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

fn load_nets(cfg: &ExperimentConfig, path: &Path) -> CliResult<NetworkBundle> {
    Ok(NetworkBundle::load(cfg, path)?)
}

#[derive(Serialize)]
struct EvalReport<'a> {
    kind: &'a str,
    seed: u64,
    config_hash: String,
    checkpoint: String,
    metrics: EvalMetrics,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Train { cfg, seeds, jobs } => {
            let cfg = cfg.load()?;
            let seeds = match (seeds.seed, seeds.seeds) {
                (Some(s), _) => vec![s],
                (None, Some(list)) => list,
                (None, None) => cfg.run.seeds.clone(),
            };
            if seeds.is_empty() {
                return Err(jim_core::Error::config("run.seeds", "no seeds to run").into());
            }
            let root = cfg.output_dir();
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .context("building thread pool")?;
            let results: Vec<_> = pool.install(|| {
                use rayon::prelude::*;
                seeds
                    .par_iter()
                    .map(|&s| {
                        let dir = root.join(format!("seed_{s}"));
                        train_seed(&cfg, s, Some(&dir)).map(|r| (s, r.log))
                    })
                    .collect()
            });
            let mut finals = Vec::new();
            for r in results {
                let (s, log) = r?;
                println!(
                    "{}",
                    json!({
                        "seed": s,
                        "mode": log.mode,
                        "steps": log.total_steps,
                        "episodes": log.total_episodes,
                        "mean_return_per_agent": log.final_eval.mean_return_per_agent,
                        "success_rate": log.final_eval.success_rate,
                        "dir": root.join(format!("seed_{s}")),
                    })
                );
                finals.push((s, log.final_eval));
            }
            let agg = EvalMetrics::aggregate(&finals)?;
            write_json(
                &root.join("aggregate.json"),
                &json!({ "config_hash": cfg.hash(), "seeds": seeds, "final_eval": agg }),
            )?;
        }
        Cmd::Evaluate {
            cfg,
            checkpoint,
            episodes,
            seed,
        } => {
            let cfg = cfg.load()?;
            let nets = load_nets(&cfg, &checkpoint)?;
            let m = evaluate(&nets.online, &cfg, episodes.unwrap_or(cfg.eval.final_episodes), seed)?;
            let report = EvalReport {
                kind: "evaluate",
                seed,
                config_hash: cfg.hash(),
                checkpoint: checkpoint.display().to_string(),
                metrics: m,
            };
            write_json(&cfg.output_dir().join("evaluate.json"), &report)?;
            print_json(&report);
        }
        Cmd::Adhoc {
            cfg,
            checkpoint,
            delta,
            episodes,
            seed,
        } => {
            let cfg = cfg.load()?;
            let nets = load_nets(&cfg, &checkpoint)?;
            let delta = delta.unwrap_or(cfg.eval.adhoc_delta);
            let episodes = episodes.unwrap_or(cfg.eval.final_episodes);
            let fixed = evaluate(&nets.online, &cfg, episodes, seed)?;
            let mut rng = rng_from_seed(seed);
            let m = adhoc_evaluate(&nets.online, &cfg, delta, &mut rng, episodes, seed)?;
            let retention = if fixed.mean_return_per_agent.abs() > 0.0 {
                Some(m.mean_return_per_agent / fixed.mean_return_per_agent)
            } else {
                None
            };
            let report = json!({
                "kind": "adhoc",
                "seed": seed,
                "config_hash": cfg.hash(),
                "delta": delta,
                "fixed": fixed,
                "adhoc": m,
                "retention": retention,
            });
            write_json(&cfg.output_dir().join("adhoc.json"), &report)?;
            print_json(&report);
        }
        Cmd::Ablate {
            cfg,
            kind,
            checkpoint,
            seed,
        } => {
            let cfg = cfg.load()?;
            match kind {
                AblationArg::ZeroIntention => {
                    let path = checkpoint.ok_or_else(|| {
                        jim_core::Error::config("--checkpoint", "zero-intention needs a trained checkpoint")
                    })?;
                    let nets = load_nets(&cfg, &path)?;
                    let full = evaluate(&nets.online, &cfg, cfg.eval.final_episodes, seed)?;
                    let AblationResult::Eval(m) = ablate(&nets.online, &cfg, Ablation::ZeroIntention, seed)? else {
                        unreachable!("zero intention evaluates");
                    };
                    let report = json!({
                        "kind": "zero_intention",
                        "seed": seed,
                        "config_hash": cfg.hash(),
                        "z": cfg.eval.zero_intention,
                        "full": full,
                        "ablated": m,
                    });
                    write_json(&cfg.output_dir().join("ablate_zero_intention.json"), &report)?;
                    print_json(&report);
                }
                AblationArg::NoWeighting => {
                    let nets = NetworkBundle::zeros(&cfg);
                    let AblationResult::Training(log) = ablate(&nets.online, &cfg, Ablation::NoWeighting, seed)? else {
                        unreachable!("no weighting trains");
                    };
                    let mut c = cfg.clone();
                    c.method.mode = Mode::NoWeighting;
                    let dir = cfg.output_dir().join(format!("no_weighting_seed_{seed}"));
                    write_log_files(&dir, &c, &log)?;
                    print_json(&json!({
                        "kind": "no_weighting",
                        "seed": seed,
                        "config_hash": c.hash(),
                        "final_eval": log.final_eval,
                        "dir": dir,
                    }));
                }
            }
        }
        Cmd::Analyze { cfg, dumps } => {
            let cfg = cfg.load()?;
            let files = find_dumps(&dumps)?;
            if files.is_empty() {
                return Err(jim_core::Error::Format(format!("no trajectories.jsonl under {}", dumps.display())).into());
            }
            let mut records = Vec::new();
            for f in &files {
                records.extend(read_dump(f)?);
            }
            let report = intention_stats(&records, cfg.method.n_z)?;
            let out = cfg.output_dir().join("analysis");
            let header = format!("config_hash={}\nsources={}", cfg.hash(), files.len());
            report.write_csvs(&out, &header)?;
            print_json(&json!({
                "files": files,
                "records": records.len(),
                "runs": report.runs(),
                "mean_run_length": report.mean_run_length(),
                "tv_distance": report.tv_distance(),
                "agreement": report.agreement,
                "out": out,
            }));
        }
        Cmd::Gradcheck { tol, seed } => {
            let report = gradcheck_suite(tol, seed)?;
            print!("{report}");
            if !report.passed() {
                return Err(Failure {
                    code: 1,
                    body: json!({ "error": "gradcheck", "max_rel_err": report.max_rel_err(), "tol": tol }),
                });
            }
        }
        Cmd::PartitionBench {
            graphs,
            max_agents,
            edge_prob,
            eps_gap,
            seed,
        } => {
            if !(1..=jim_core::partition::BRUTE_FORCE_MAX_AGENTS).contains(&max_agents) {
                return Err(jim_core::Error::config(
                    "--max-agents",
                    format!("must lie in 1..={}", jim_core::partition::BRUTE_FORCE_MAX_AGENTS),
                )
                .into());
            }
            let mut rng = rng_from_seed(seed);
            let (mut ratio_sum, mut ratio_n, mut violations) = (0.0, 0usize, 0usize);
            for k in 0..graphs {
                let n = 1 + k % max_agents;
                let g = VisibilityGraph::random(n, edge_prob, &mut rng);
                let greedy = greedy_partition(&g, &mut rng);
                let best = brute_force_partition(&g, eps_gap)?;
                let (gg, gb) = (optimality_gap(&greedy, n, eps_gap)?, optimality_gap(&best, n, eps_gap)?);
                if gb > gg + 1e-12 {
                    violations += 1;
                }
                if gb > 0.0 {
                    ratio_sum += gg / gb;
                    ratio_n += 1;
                }
            }
            print_json(&json!({
                "graphs": graphs,
                "max_agents": max_agents,
                "violations": violations,
                "mean_greedy_over_optimal": if ratio_n > 0 { Some(ratio_sum / ratio_n as f64) } else { None },
                "graphs_with_positive_optimum": ratio_n,
            }));
            if violations > 0 {
                return Err(Failure {
                    code: 1,
                    body: json!({ "error": "partition", "violations": violations }),
                });
            }
        }
    }
    Ok(())
}

fn find_dumps(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(jim_core::Error::from)?;
        for e in entries {
            let p = e.map_err(jim_core::Error::from)?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "trajectories.jsonl") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.body);
            ExitCode::from(f.code)
        }
    }
}
