//! Command-line front end: training runs, checkpoint evaluation, exact
//! verification checks, grid sweeps and plot-ready CSV export.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hra::envs::maze::builtin_maps;
use hra::harness::config::{Domain, ExperimentConfig};
use hra::harness::maze::{build_world, evaluate_maze, train_maze, EvalProtocol, MazeCheckpoint};
use hra::harness::metrics::plot_csv;
use hra::harness::sweep::{run_sweep, sweep_csv, SweepGrid};
use hra::harness::train_fruit;
use hra::harness::MetricsLog;
use hra::heads::{TrainItem, UpdateMode, UpdateTarget};
use hra::mdp::{ActionId, EpisodeLog};
use hra::oracle::{greedy_actions, q_sup_distance, EnumeratedMdp, StatePolicy};
use hra::{HraError, Result};

#[derive(Parser)]
#[command(name = "hra", about = "Decomposed-reward RL toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Fixed,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration for one seed and write the metrics CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Metrics CSV destination; falls back to the config's output path,
        /// then stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Save the trained maze agent here (maze runs only).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a saved maze agent under a start protocol.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        protocol: Protocol,
        /// Reference trajectory (JSON episode log); required for random starts.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the exact-solution identity checks and print a pass/fail table.
    Verify,
    /// Expand a grid file into (config, seed) cells and run them all.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smooth a metrics CSV into a plot-ready CSV.
    Plot {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 100)]
        smooth: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, seed, out, checkpoint } => {
            let cfg = ExperimentConfig::from_json(&fs::read_to_string(&config)?)?;
            let log = match cfg.domain {
                Domain::Fruit => {
                    if checkpoint.is_some() {
                        return Err(HraError::Config(
                            "checkpoints cover maze agents only".into(),
                        ));
                    }
                    train_fruit(&cfg, seed)?.0
                }
                Domain::Maze => {
                    let (log, agent) = train_maze(&cfg, seed)?;
                    if let Some(path) = &checkpoint {
                        MazeCheckpoint { config: cfg.clone(), seed, agent }.save(path)?;
                        println!("checkpoint written to {}", path.display());
                    }
                    log
                }
            };
            let dest = out.or_else(|| cfg.output.clone());
            match dest {
                Some(path) => {
                    log.write_csv(&path)?;
                    println!("metrics written to {} ({} episodes)", path.display(), log.len());
                }
                None => print!("{}", log.to_csv()),
            }
            println!(
                "final eval score (last 100 evaluated episodes): {:.2}",
                log.tail_mean(100, |r| r.eval_score)
            );
            Ok(true)
        }
        Command::Eval { checkpoint, protocol, reference, episodes, seed } => {
            let ckpt = MazeCheckpoint::load(&checkpoint)?;
            let protocol = match protocol {
                Protocol::Fixed => EvalProtocol::fixed_start(),
                Protocol::Random => {
                    let path = reference.ok_or_else(|| {
                        HraError::Config("--reference is required for the random protocol".into())
                    })?;
                    let log: EpisodeLog =
                        serde_json::from_str(&fs::read_to_string(&path)?)
                            .map_err(|e| HraError::Config(e.to_string()))?;
                    EvalProtocol::random_start(log)
                }
            };
            let mut world = build_world(&ckpt.config)?;
            let summary = evaluate_maze(
                &ckpt.agent,
                &mut world,
                &protocol,
                episodes,
                ckpt.config.eval_cap(),
                seed,
            )?;
            println!(
                "episodes={} mean_score={:.1} min={:.1} max={:.1} mean_levels={:.2} mean_deaths={:.2}",
                summary.episodes,
                summary.mean_score,
                summary.min_score,
                summary.max_score,
                summary.mean_levels,
                summary.mean_deaths,
            );
            Ok(true)
        }
        Command::Verify => verify(),
        Command::Sweep { grid, jobs, out } => {
            let grid = SweepGrid::from_json(&fs::read_to_string(&grid)?)?;
            let rows = run_sweep(&grid, jobs)?;
            let csv = sweep_csv(&rows);
            match out {
                Some(path) => {
                    fs::write(&path, &csv)?;
                    println!("sweep results written to {} ({} cells)", path.display(), rows.len());
                }
                None => print!("{csv}"),
            }
            Ok(rows.iter().all(|r| r.status == "ok"))
        }
        Command::Plot { log, smooth, out } => {
            let metrics = MetricsLog::from_csv(&fs::read_to_string(&log)?)?;
            let csv = plot_csv(&metrics, smooth);
            match out {
                Some(path) => {
                    fs::write(&path, &csv)?;
                    println!("plot data written to {}", path.display());
                }
                None => print!("{csv}"),
            }
            Ok(true)
        }
    }
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

/// The identity checks: exact linear-algebra solutions against the learning
/// components and against each other.
#[allow(clippy::needless_range_loop)] // (s, a) loops mirror the math
fn verify() -> Result<bool> {
    let mut checks = Vec::new();

    // Summed per-component evaluations of the uniform policy equal the
    // environment-reward evaluation, on many random decomposed MDPs.
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mdp = EnumeratedMdp::random_decomposed(seed);
        worst = worst.max(mdp.verify_upsilon_identity(0.9)?);
    }
    checks.push(Check {
        name: "uniform-policy component-sum identity (50 random MDPs)",
        pass: worst < 1e-8,
        detail: format!("max deviation {worst:.2e}"),
    });

    // Summing per-component optimal Q functions is not the optimal Q of the
    // summed reward: the constructed conflict MDP shows the gap.
    let conflict = EnumeratedMdp::two_component_conflict();
    let q_star = conflict.value_iteration(0.9, 1e-12, None)?;
    let q_sum = conflict.sum_of_component_optima(0.9, 1e-12)?;
    let gap = q_sup_distance(&q_star, &q_sum);
    let greedy_differs = greedy_actions(&q_star) != greedy_actions(&q_sum);
    checks.push(Check {
        name: "conflict MDP: summed per-component optima are inconsistent",
        pass: gap > 0.1 && greedy_differs,
        detail: format!("sup gap {gap:.3}, greedy policies differ: {greedy_differs}"),
    });

    // Exact and iterative policy evaluation agree.
    let mut solver_gap: f64 = 0.0;
    for seed in 50..60 {
        let mdp = EnumeratedMdp::random_decomposed(seed);
        let policy = StatePolicy::uniform(mdp.n_states, mdp.n_actions);
        let exact = mdp.policy_eval_exact(&policy, 0.9, None)?;
        let iterative = mdp.policy_eval_iterative(&policy, 0.9, None, 1e-13, 2_000_000)?;
        solver_gap = solver_gap.max(q_sup_distance(&exact, &iterative));
    }
    checks.push(Check {
        name: "linear-solve vs fixed-point policy evaluation (10 MDPs)",
        pass: solver_gap < 1e-10,
        detail: format!("max disagreement {solver_gap:.2e}"),
    });

    // Location-GVF sweeps converge to the oracle uniform-policy values of
    // the single-target sub-MDP, and stay within [0, 1].
    let maze = &builtin_maps()[0];
    let target = maze.fruit_spawn;
    let sub = maze.gvf_sub_mdp(target)?;
    let rule = hra::heads::TargetRule::uniform_mean(0.99)?;
    let key = hra::gvf::GvfKey { map_id: 0, target };
    let mut gvf = hra::gvf::Gvf::new(key, sub.n_states, rule, 1.0);
    for _ in 0..100_000 {
        if gvf.sweep_on_mdp(&sub)? < 1e-12 {
            break;
        }
    }
    let oracle_q = sub.policy_eval_exact(&StatePolicy::uniform(sub.n_states, sub.n_actions), 0.99, None)?;
    let mut gvf_gap: f64 = 0.0;
    for s in 0..sub.n_states {
        if sub.terminal[s] {
            continue;
        }
        for a in 0..sub.n_actions {
            gvf_gap = gvf_gap.max((gvf.value(s, a) - oracle_q[s][a]).abs());
        }
    }
    let (lo, hi) = gvf.min_max();
    checks.push(Check {
        name: "location-GVF sweeps match oracle sub-MDP evaluation",
        pass: gvf_gap < 1e-6 && lo >= 0.0 && hi <= 1.0,
        detail: format!("max deviation {gvf_gap:.2e}, value range [{lo:.3}, {hi:.3}]"),
    });

    // Analytic network gradients match central finite differences, and the
    // fixed aggregation weights never move.
    let (grad_gap, agg_fixed) = gradient_check()?;
    checks.push(Check {
        name: "shared-trunk analytic gradients vs finite differences",
        pass: grad_gap < 1e-4 && agg_fixed,
        detail: format!("max relative error {grad_gap:.2e}, aggregation weights fixed: {agg_fixed}"),
    });

    let mut all_pass = true;
    for c in &checks {
        let status = if c.pass { "PASS" } else { "FAIL" };
        println!("[{status}] {} — {}", c.name, c.detail);
        all_pass &= c.pass;
    }
    Ok(all_pass)
}

fn gradient_check() -> Result<(f64, bool)> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut agg_fixed = true;
    for net_seed in 0..5 {
        let mut net = hra::heads::SharedTrunkNet::new(12, 8, 3, 4, net_seed);
        let mut batch = Vec::new();
        for mode in [UpdateMode::MultiHead, UpdateMode::SingleHead] {
            batch = (0..4)
                .map(|_| {
                    let features: Vec<f64> =
                        (0..12).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
                    let target = match mode {
                        UpdateMode::MultiHead => UpdateTarget::PerHead(
                            (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        ),
                        UpdateMode::SingleHead => UpdateTarget::Summed(rng.gen_range(-1.0..1.0)),
                    };
                    TrainItem { features, action: ActionId(rng.gen_range(0..4)), target }
                })
                .collect();
            let analytic = net.grad_dense(&batch, mode)?;
            let params = net.params();
            let eps = 1e-5;
            for i in (0..params.len()).step_by(7) {
                let mut p = params.clone();
                p[i] += eps;
                net.set_params(&p)?;
                let up = net.loss(&batch, mode)?;
                p[i] -= 2.0 * eps;
                net.set_params(&p)?;
                let down = net.loss(&batch, mode)?;
                net.set_params(&params)?;
                let numeric = (up - down) / (2.0 * eps);
                let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1e-3);
                worst = worst.max(rel);
            }
        }
        let before = net.agg_weights().to_vec();
        net.update_batch(&batch, UpdateMode::SingleHead, 0.01)?;
        agg_fixed &= net.agg_weights() == before.as_slice();
    }
    Ok((worst, agg_fixed))
}
