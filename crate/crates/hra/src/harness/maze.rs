//! Maze training: per-step GVF discovery and updates, head aggregation,
//! exploration heads and the executive memory, plus the two evaluation
//! protocols and agent checkpoints.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    aggregate, diversification_values, head_values, select_action, AggregatorSpec,
    ExecutiveMemory, VisitCounts, FORCE,
};
use crate::envs::maze::{builtin_maps, Maze, MazeConfig, MazeWorld, MAZE_ACTIONS, NOOP_ACTION};
use crate::error::{HraError, Result};
use crate::gvf::GvfBank;
use crate::harness::config::{mix_seed, Domain, ExperimentConfig, Method, ProtocolKind};
use crate::harness::metrics::{MetricsLog, MetricsRow};
use crate::heads::TargetRule;
use crate::mdp::{ActionId, Environment, EpisodeLog, EventTag};

/// Everything the maze agent learns, plus its decision-time configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MazeAgent {
    pub score_bank: GvfBank,
    pub ghost_bank: GvfBank,
    pub counts: VisitCounts,
    pub memory: ExecutiveMemory,
    pub aggregator: AggregatorSpec,
    pub diversification: bool,
    pub targeted_exploration: bool,
    pub use_memory: bool,
    /// The game seed used for every episode, so starts are reproducible and
    /// remembered action sequences stay valid.
    pub game_seed: u64,
}

impl MazeAgent {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        Ok(MazeAgent {
            score_bank: GvfBank::with_rule(TargetRule::uniform_mean(cfg.gamma_score)?),
            ghost_bank: GvfBank::with_rule(TargetRule::uniform_mean(cfg.gamma_ghosts)?),
            counts: VisitCounts::new(cfg.kappa),
            memory: ExecutiveMemory::new(),
            aggregator: cfg.aggregator.to_spec(),
            diversification: cfg.diversification,
            targeted_exploration: cfg.targeted_exploration,
            use_memory: cfg.executive_memory,
            game_seed: seed,
        })
    }

    /// Greedy action values (no exploration heads, no memory).
    pub fn greedy_values(&self, world: &MazeWorld) -> Vec<f64> {
        aggregate(
            &head_values(world, &self.score_bank, &self.ghost_bank),
            &self.aggregator,
        )
    }

    pub fn gvf_count(&self) -> usize {
        self.score_bank.len() + self.ghost_bank.len()
    }
}

/// Build the world described by a config.
pub fn build_world(cfg: &ExperimentConfig) -> Result<MazeWorld> {
    let maps = match &cfg.maze.maps {
        Some(paths) => {
            let mut maps = Vec::with_capacity(paths.len());
            for p in paths {
                let text = fs::read_to_string(p).map_err(HraError::Io)?;
                maps.push(Maze::parse(&text)?);
            }
            maps
        }
        None => builtin_maps(),
    };
    if maps.is_empty() {
        return Err(HraError::Config("at least one map required".into()));
    }
    Ok(MazeWorld::new(maps, cfg.maze.apply(MazeConfig::default())))
}

/// Register score GVFs for every object location of the current level.
fn register_level_gvfs(agent: &mut MazeAgent, world: &MazeWorld) {
    let map_id = world.map_index();
    let maze = world.maze();
    for cell in world.pellet_cells_remaining() {
        let _ = agent.score_bank.ensure(maze, map_id, cell);
    }
    for cell in world.power_pellet_cells_remaining() {
        let _ = agent.score_bank.ensure(maze, map_id, cell);
    }
    let _ = agent.score_bank.ensure(maze, map_id, maze.fruit_spawn);
}

/// Actions taken during the inactive intro have no effect; the memory
/// records them as no-ops so evaluation no-op prefixes stay aligned.
fn memory_action(world: &MazeWorld, action: usize) -> usize {
    if world.step_count < world.cfg.intro_steps {
        NOOP_ACTION
    } else {
        action
    }
}

/// Train the full maze agent. Every episode replays the same game seed, so
/// the domain behaves like a deterministic arcade title.
pub fn train_maze(cfg: &ExperimentConfig, seed: u64) -> Result<(MetricsLog, MazeAgent)> {
    cfg.validate()?;
    if cfg.domain != Domain::Maze || cfg.method != Method::FullMazeHra {
        return Err(HraError::Config("train_maze requires domain maze and full-maze-hra".into()));
    }
    let mut world = build_world(cfg)?;
    let mut agent = MazeAgent::new(cfg, seed)?;
    let mut log = MetricsLog::new();
    let cap = cfg.train_cap();
    for ep in 0..cfg.episodes {
        let started = Instant::now();
        world.reset(agent.game_seed);
        agent.memory.begin_episode();
        let mut div_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xD100 + ep as u64));
        let mut train_score = 0.0;
        let mut steps = 0usize;
        let mut head_count = 0usize;
        let mut last_level = 0u32;
        let mut levels_completed_this_episode = 0u32;
        while !world.is_terminal() && steps < cap {
            if world.level != last_level {
                register_level_gvfs(&mut agent, &world);
                last_level = world.level;
            }
            let map_id = world.map_index();
            for g in 0..world.ghosts.len() {
                if world.step_count >= world.ghosts[g].release_at {
                    let cell = world.ghosts[g].cell;
                    let _ = agent.ghost_bank.ensure(&world.maps[map_id], map_id, cell);
                }
            }
            let state = world.player_state_index();
            let prev_cell = world.player;
            let level = world.level;
            let level_step = world.level_step;

            let heads = head_values(&world, &agent.score_bank, &agent.ghost_bank);
            head_count = heads.len();
            let q = aggregate(&heads, &agent.aggregator);
            let mut rows: Vec<Vec<f64>> = vec![q];
            if agent.diversification {
                rows.push(diversification_values(&mut div_rng, world.step_count, MAZE_ACTIONS));
            }
            if agent.targeted_exploration {
                rows.push(agent.counts.bonus(state, MAZE_ACTIONS));
            }
            if agent.use_memory {
                let mut force_row = vec![0.0; MAZE_ACTIONS];
                if let Some(a) = agent.memory.forced_action(level, level_step) {
                    force_row[a] = FORCE;
                }
                rows.push(force_row);
            }
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let a = select_action(&refs)?;
            let recorded = memory_action(&world, a);
            let t = world.step(ActionId(a))?;
            agent.counts.visit(state, a);
            let died = t.events.iter().any(|e| matches!(e, EventTag::GhostContact { .. }));
            let completed =
                t.events.iter().any(|e| matches!(e, EventTag::LevelComplete { .. }));
            if !died && !completed {
                // Deaths teleport the player and level changes swap maps;
                // neither transition is player movement the GVFs should
                // learn from.
                let next_state = world.player_state_index();
                agent
                    .score_bank
                    .update_all(map_id, prev_cell, state, a, world.player, next_state);
                agent
                    .ghost_bank
                    .update_all(map_id, prev_cell, state, a, world.player, next_state);
            }
            if agent.use_memory {
                agent.memory.observe(level, level_step, recorded, died, completed);
            }
            if completed {
                levels_completed_this_episode += 1;
            }
            train_score += t.r_env;
            steps += 1;
        }
        let (eval_score, eval_steps) = if ep % cfg.eval_every == 0 {
            let summary = evaluate_maze(
                &agent,
                &mut world,
                &EvalProtocol::fixed_start(),
                1,
                cfg.eval_cap(),
                mix_seed(seed, 0xE7A1 + ep as u64),
            )?;
            (summary.mean_score, summary.mean_steps as usize)
        } else {
            (f64::NAN, 0)
        };
        log.push(MetricsRow {
            episode: ep,
            train_score,
            eval_score,
            steps,
            eval_steps,
            levels_completed: levels_completed_this_episode,
            head_count,
            gvf_count: agent.gvf_count(),
            wall_time_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok((log, agent))
}

/// How evaluation episodes start.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub kind: ProtocolKind,
    /// Required for random starts: the trajectory whose states are sampled.
    pub reference: Option<EpisodeLog>,
}

impl EvalProtocol {
    pub fn fixed_start() -> Self {
        EvalProtocol { kind: ProtocolKind::FixedStart, reference: None }
    }

    pub fn random_start(reference: EpisodeLog) -> Self {
        EvalProtocol { kind: ProtocolKind::RandomStart, reference: Some(reference) }
    }
}

/// Per-episode evaluation record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub score: f64,
    pub steps: usize,
    pub levels: u32,
    pub deaths: u32,
    /// Ghost deaths before the first level was completed (or all deaths if
    /// no level was completed).
    pub deaths_before_first_level: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_score: f64,
    pub min_score: f64,
    pub max_score: f64,
    pub mean_steps: f64,
    pub mean_levels: f64,
    /// Ghost deaths per episode, averaged.
    pub mean_deaths: f64,
    pub detail: Vec<EpisodeStats>,
}

/// Run greedy evaluation episodes; the agent is never mutated (its memory
/// is consulted through a per-episode clone).
pub fn evaluate_maze(
    agent: &MazeAgent,
    world: &mut MazeWorld,
    protocol: &EvalProtocol,
    episodes: usize,
    cap: usize,
    eval_seed: u64,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(HraError::InvalidArgument("episodes must be positive".into()));
    }
    if protocol.kind == ProtocolKind::RandomStart && protocol.reference.is_none() {
        return Err(HraError::Config("random-start evaluation requires a reference trajectory".into()));
    }
    let mut scores = Vec::with_capacity(episodes);
    let mut steps_total = 0usize;
    let mut levels_total = 0u64;
    let mut deaths_total = 0u64;
    let mut detail = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(eval_seed, e as u64));
        let mut memory = agent.memory.clone();
        memory.begin_episode();
        let mut score = 0.0;
        let mut steps = 0usize;
        match protocol.kind {
            ProtocolKind::FixedStart => {
                world.reset(agent.game_seed);
                // Seeded no-op prefix; shorter than the inactive intro, so
                // the start state is effectively fixed.
                let prefix = rng.gen_range(0..=30);
                for _ in 0..prefix {
                    if world.is_terminal() {
                        break;
                    }
                    let lv = world.level;
                    let ls = world.level_step;
                    let recorded = memory_action(world, NOOP_ACTION);
                    let t = world.step(ActionId(NOOP_ACTION))?;
                    let died =
                        t.events.iter().any(|e| matches!(e, EventTag::GhostContact { .. }));
                    let completed =
                        t.events.iter().any(|e| matches!(e, EventTag::LevelComplete { .. }));
                    if agent.use_memory {
                        memory.observe(lv, ls, recorded, died, completed);
                    }
                }
            }
            ProtocolKind::RandomStart => {
                let reference = protocol.reference.as_ref().unwrap();
                world.reset(reference.seed);
                let actions = reference.actions();
                let idx = if actions.is_empty() { 0 } else { rng.gen_range(0..actions.len()) };
                for &a in &actions[..idx] {
                    if world.is_terminal() {
                        break;
                    }
                    let lv = world.level;
                    let ls = world.level_step;
                    let recorded = memory_action(world, a.0);
                    let t = world.step(a)?;
                    let died =
                        t.events.iter().any(|e| matches!(e, EventTag::GhostContact { .. }));
                    let completed =
                        t.events.iter().any(|e| matches!(e, EventTag::LevelComplete { .. }));
                    if agent.use_memory {
                        memory.observe(lv, ls, recorded, died, completed);
                    }
                }
            }
        }
        let level_at_start = world.level;
        let mut deaths = 0u32;
        let mut deaths_before_first_level = 0u32;
        let mut first_level_done = false;
        while !world.is_terminal() && steps < cap {
            let q = agent.greedy_values(world);
            let mut rows: Vec<&[f64]> = vec![&q];
            let mut force_row = vec![0.0; MAZE_ACTIONS];
            if agent.use_memory {
                if let Some(a) = memory.forced_action(world.level, world.level_step) {
                    force_row[a] = FORCE;
                }
                rows.push(&force_row);
            }
            let a = select_action(&rows)?;
            let lv = world.level;
            let ls = world.level_step;
            let recorded = memory_action(world, a);
            let t = world.step(ActionId(a))?;
            let died = t.events.iter().any(|e| matches!(e, EventTag::GhostContact { .. }));
            let completed =
                t.events.iter().any(|e| matches!(e, EventTag::LevelComplete { .. }));
            if agent.use_memory {
                memory.observe(lv, ls, recorded, died, completed);
            }
            if died {
                deaths_total += 1;
                deaths += 1;
                if !first_level_done {
                    deaths_before_first_level += 1;
                }
            }
            if completed {
                first_level_done = true;
            }
            score += t.r_env;
            steps += 1;
        }
        scores.push(score);
        steps_total += steps;
        levels_total += (world.level - level_at_start) as u64;
        detail.push(EpisodeStats {
            score,
            steps,
            levels: world.level - level_at_start,
            deaths,
            deaths_before_first_level,
        });
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(EvalSummary {
        episodes,
        mean_score: mean,
        min_score: scores.iter().cloned().fold(f64::INFINITY, f64::min),
        max_score: scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mean_steps: steps_total as f64 / episodes as f64,
        mean_levels: levels_total as f64 / episodes as f64,
        mean_deaths: deaths_total as f64 / episodes as f64,
        detail,
    })
}

/// One greedy fixed-start episode of the agent, fully logged so it can be
/// replayed later (e.g. as the reference trajectory of random-start
/// evaluation). The agent is not mutated.
pub fn greedy_episode_log(
    agent: &MazeAgent,
    world: &mut MazeWorld,
    cap: usize,
) -> Result<EpisodeLog> {
    world.reset(agent.game_seed);
    let mut memory = agent.memory.clone();
    memory.begin_episode();
    let mut transitions = Vec::new();
    let mut total_score = 0.0;
    while !world.is_terminal() && transitions.len() < cap {
        let q = agent.greedy_values(world);
        let mut rows: Vec<&[f64]> = vec![&q];
        let mut force_row = vec![0.0; MAZE_ACTIONS];
        if agent.use_memory {
            if let Some(a) = memory.forced_action(world.level, world.level_step) {
                force_row[a] = FORCE;
            }
            rows.push(&force_row);
        }
        let a = select_action(&rows)?;
        let lv = world.level;
        let ls = world.level_step;
        let recorded = memory_action(world, a);
        let t = world.step(ActionId(a))?;
        let died = t.events.iter().any(|e| matches!(e, EventTag::GhostContact { .. }));
        let completed = t.events.iter().any(|e| matches!(e, EventTag::LevelComplete { .. }));
        if agent.use_memory {
            memory.observe(lv, ls, recorded, died, completed);
        }
        total_score += t.r_env;
        transitions.push(t);
    }
    Ok(EpisodeLog {
        steps: transitions.len(),
        total_score,
        seed: agent.game_seed,
        component_names: world.component_names(),
        transitions,
    })
}

/// A saved agent plus the config that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MazeCheckpoint {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub agent: MazeAgent,
}

impl MazeCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| HraError::Config(e.to_string()))?;
        fs::write(path, json).map_err(HraError::Io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(HraError::Io)?;
        serde_json::from_str(&text).map_err(|e| HraError::Config(e.to_string()))
    }
}
