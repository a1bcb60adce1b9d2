pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod mixer;
pub mod numeric;
pub mod partition;
pub mod policy;
pub mod trainer;

pub use config::{ExperimentConfig, Mode};
pub use env::{make_env, Env, EnvConfig, EnvKind};
pub use error::{Error, Result};
pub use eval::{adhoc_evaluate, evaluate, intention_stats, EvalMetrics, IntentionReport};
pub use mixer::{LossBundle, QMixer};
pub use numeric::{Distribution, Tensor};
pub use partition::{greedy_partition, TeamPartition, VisibilityGraph};
pub use trainer::{run_training, train_seed, NetworkBundle, Networks, RunResult, TrainingLog};
