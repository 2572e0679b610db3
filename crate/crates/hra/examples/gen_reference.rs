//! Regenerates the bundled reference trajectory: trains the full maze agent
//! briefly, logs one greedy fixed-start episode, and writes it as JSON.
//!
//! Usage: cargo run --release --example gen_reference [episodes] [seed]

use hra::harness::config::{Domain, ExperimentConfig, Method};
use hra::harness::maze::{build_world, greedy_episode_log, train_maze};

fn main() {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(400);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    let mut cfg = ExperimentConfig::minimal(Domain::Maze, Method::FullMazeHra, episodes);
    cfg.eval_every = episodes.max(1);
    // Matches configs/maze_full.json.
    cfg.maze.ghost_release_interval = Some(150);
    let (log, agent) = train_maze(&cfg, seed).expect("training failed");
    let final_eval = log.tail_mean(20, |r| r.eval_score);
    eprintln!("trained {episodes} episodes, final eval score {final_eval:.1}");
    let mut world = build_world(&cfg).expect("world");
    let episode = greedy_episode_log(&agent, &mut world, cfg.eval_cap()).expect("episode");
    eprintln!("reference episode: {} steps, score {}", episode.steps, episode.total_score);
    let json = serde_json::to_string(&episode).expect("serialize");
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/reference_trajectory.json");
    std::fs::create_dir_all(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures")).expect("mkdir");
    std::fs::write(path, json).expect("write");
    eprintln!("wrote {path}");
}
