//! Experiment orchestration: configs, training loops for both domains,
//! evaluation protocols, metrics and sweeps.

pub mod config;
pub mod fruit;
pub mod maze;
pub mod metrics;
pub mod sweep;

pub use config::{mix_seed, Domain, ExperimentConfig, Method, ProtocolKind, RuleKind};
pub use fruit::{evaluate_fruit, fruit_optimal_steps, train_fruit, FruitAgent};
pub use maze::{
    build_world, evaluate_maze, greedy_episode_log, train_maze, EvalProtocol, EvalSummary,
    MazeAgent, MazeCheckpoint,
};
pub use metrics::{plot_csv, smooth, MetricsLog, MetricsRow};
pub use sweep::{run_sweep, sweep_csv, SweepGrid, SweepRow};
