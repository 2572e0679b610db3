//! The maze agent's decision layer: object heads built from location GVFs,
//! the aggregator that combines them, exploration heads, and the executive
//! memory that replays solved levels.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::maze::{GhostMode, MazeWorld, MAZE_ACTIONS};
use crate::error::{HraError, Result};
use crate::gvf::{GvfBank, GvfKey};
use crate::mdp::argmax_lowest;

/// Score multipliers applied to the raw GVF predictions of each object kind.
pub const PELLET_MULTIPLIER: f64 = 10.0;
pub const POWER_PELLET_MULTIPLIER: f64 = 50.0;
pub const FRUIT_MULTIPLIER: f64 = 200.0;
pub const BLUE_GHOST_MULTIPLIER: f64 = 1000.0;
pub const GHOST_MULTIPLIER: f64 = -1000.0;

/// Additive value that makes a remembered action win every argmax.
pub const FORCE: f64 = 1e6;

/// How the object heads are combined into one action-value row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AggregatorSpec {
    /// Plain weighted sum; ghost heads enter at -1000.
    Linear,
    /// Score heads are min-max normalized across actions first, then ghost
    /// heads enter with a small negative weight.
    Normalized { ghost_weight: f64 },
}

impl AggregatorSpec {
    pub fn normalized() -> Self {
        AggregatorSpec::Normalized { ghost_weight: -10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Contributes to the score sum (already multiplier-scaled).
    Score,
    /// Raw ghost-position GVF row; weighting happens in the aggregator.
    Ghost,
}

#[derive(Debug, Clone)]
pub struct HeadRow {
    pub kind: HeadKind,
    pub row: Vec<f64>,
}

/// Build one head per live object from the GVF banks: score objects read
/// the score bank, ghosts the ghost bank (the two may discount differently).
/// Objects that are gone simply produce no head, so their contribution is
/// zero; so do objects whose GVF has not been created yet.
pub fn head_values(world: &MazeWorld, score_bank: &GvfBank, ghost_bank: &GvfBank) -> Vec<HeadRow> {
    let state = world.player_state_index();
    let map_id = world.map_index();
    let mut heads = Vec::new();
    let push = |bank: &GvfBank, target, multiplier: f64, kind, heads: &mut Vec<HeadRow>| {
        let row = match bank.get(&GvfKey { map_id, target }) {
            Some(gvf) => gvf.row(state).iter().map(|&v| multiplier * v).collect(),
            None => vec![0.0; MAZE_ACTIONS],
        };
        heads.push(HeadRow { kind, row });
    };
    let score = |target, m, heads: &mut Vec<HeadRow>| {
        push(score_bank, target, m, HeadKind::Score, heads)
    };
    for cell in world.pellet_cells_remaining() {
        score(cell, PELLET_MULTIPLIER, &mut heads);
    }
    for cell in world.power_pellet_cells_remaining() {
        score(cell, POWER_PELLET_MULTIPLIER, &mut heads);
    }
    if let Some((cell, _, _)) = world.fruit {
        score(cell, FRUIT_MULTIPLIER, &mut heads);
    }
    for ghost in &world.ghosts {
        if world.step_count < ghost.release_at {
            continue;
        }
        match ghost.mode {
            GhostMode::Blue(_) => score(ghost.cell, BLUE_GHOST_MULTIPLIER, &mut heads),
            GhostMode::Normal => {
                push(ghost_bank, ghost.cell, 1.0, HeadKind::Ghost, &mut heads)
            }
        }
    }
    heads
}

/// Min-max normalize a row to [0, 1]; constant rows collapse to all zeros.
pub fn min_max_normalize(row: &[f64]) -> Vec<f64> {
    let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.0; row.len()];
    }
    row.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Combine the head rows into a single action-value row.
pub fn aggregate(heads: &[HeadRow], spec: &AggregatorSpec) -> Vec<f64> {
    let mut score = vec![0.0; MAZE_ACTIONS];
    let mut ghost = vec![0.0; MAZE_ACTIONS];
    for head in heads {
        let sum = match head.kind {
            HeadKind::Score => &mut score,
            HeadKind::Ghost => &mut ghost,
        };
        for (acc, &v) in sum.iter_mut().zip(&head.row) {
            *acc += v;
        }
    }
    match spec {
        AggregatorSpec::Linear => score
            .iter()
            .zip(&ghost)
            .map(|(&s, &g)| s + GHOST_MULTIPLIER * g)
            .collect(),
        AggregatorSpec::Normalized { ghost_weight } => min_max_normalize(&score)
            .iter()
            .zip(&ghost)
            .map(|(&s, &g)| s + ghost_weight * g)
            .collect(),
    }
}

/// Diversification head: uniform noise on [0, 20) for the first 50 steps of
/// an episode, zero afterwards.
pub fn diversification_values(rng: &mut ChaCha8Rng, step: usize, n_actions: usize) -> Vec<f64> {
    if step < 50 {
        (0..n_actions).map(|_| rng.gen_range(0.0..20.0)).collect()
    } else {
        vec![0.0; n_actions]
    }
}

/// Count-based targeted-exploration head. Counts start at 1 so the bonus is
/// always finite; rarely tried actions in often-visited regions score high.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "VisitCountsData", into = "VisitCountsData")]
pub struct VisitCounts {
    total: u64,
    counts: HashMap<(usize, usize), u64>,
    pub kappa: f64,
}

/// Serialized form: tuple keys flattened to rows.
#[derive(Serialize, Deserialize)]
struct VisitCountsData {
    total: u64,
    counts: Vec<(usize, usize, u64)>,
    kappa: f64,
}

impl From<VisitCountsData> for VisitCounts {
    fn from(d: VisitCountsData) -> Self {
        VisitCounts {
            total: d.total,
            counts: d.counts.into_iter().map(|(s, a, n)| ((s, a), n)).collect(),
            kappa: d.kappa,
        }
    }
}

impl From<VisitCounts> for VisitCountsData {
    fn from(c: VisitCounts) -> Self {
        let mut counts: Vec<(usize, usize, u64)> =
            c.counts.into_iter().map(|((s, a), n)| (s, a, n)).collect();
        counts.sort_unstable();
        VisitCountsData { total: c.total, counts, kappa: c.kappa }
    }
}

impl VisitCounts {
    pub fn new(kappa: f64) -> Self {
        VisitCounts { total: 0, counts: HashMap::new(), kappa }
    }

    pub fn count(&self, state: usize, action: usize) -> u64 {
        self.counts.get(&(state, action)).copied().unwrap_or(1)
    }

    pub fn visit(&mut self, state: usize, action: usize) {
        self.total += 1;
        *self.counts.entry((state, action)).or_insert(1) += 1;
    }

    /// Bonus row for every action in `state`.
    pub fn bonus(&self, state: usize, n_actions: usize) -> Vec<f64> {
        let total = self.total.max(1) as f64;
        (0..n_actions)
            .map(|a| {
                let n = self.count(state, a) as f64;
                self.kappa * (total.powf(0.25) / n).sqrt()
            })
            .collect()
    }
}

/// Replays action sequences of already-solved levels. A level is committed
/// only when it was completed without dying and every earlier level of the
/// episode was itself played back from memory (or committed on the spot), so
/// a committed sequence always starts from a reproducible world state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutiveMemory {
    committed: HashMap<u32, Vec<usize>>,
    #[serde(skip)]
    current: Vec<usize>,
    #[serde(skip)]
    current_level: u32,
    #[serde(skip)]
    died_this_level: bool,
    #[serde(skip, default = "default_true")]
    chain_intact: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ExecutiveMemory {
    fn default() -> Self {
        ExecutiveMemory {
            committed: HashMap::new(),
            current: Vec::new(),
            current_level: 1,
            died_this_level: false,
            chain_intact: true,
        }
    }
}

impl ExecutiveMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_episode(&mut self) {
        self.current.clear();
        self.current_level = 1;
        self.died_this_level = false;
        self.chain_intact = true;
    }

    pub fn committed_levels(&self) -> usize {
        self.committed.len()
    }

    pub fn committed_sequence(&self, level: u32) -> Option<&[usize]> {
        self.committed.get(&level).map(|v| v.as_slice())
    }

    /// The action to force at this step, if the level is committed and the
    /// episode still tracks memory exactly.
    pub fn forced_action(&self, level: u32, level_step: usize) -> Option<usize> {
        if !self.chain_intact || self.died_this_level {
            return None;
        }
        self.committed.get(&level)?.get(level_step).copied()
    }

    /// Record the action actually taken and the step's outcome. `level` and
    /// `level_step` are the values before the step was applied.
    pub fn observe(
        &mut self,
        level: u32,
        level_step: usize,
        action: usize,
        died: bool,
        level_complete: bool,
    ) {
        if level != self.current_level {
            self.current_level = level;
            self.current.clear();
            self.died_this_level = false;
        }
        debug_assert_eq!(self.current.len(), level_step);
        // Deviating from a committed sequence (e.g. an evaluation restart
        // mid-trajectory) invalidates the memory's preconditions for the
        // rest of the episode.
        if self.chain_intact {
            if let Some(seq) = self.committed.get(&level) {
                if seq.get(level_step) != Some(&action) {
                    self.chain_intact = false;
                }
            }
        }
        self.current.push(action);
        if died {
            self.died_this_level = true;
        }
        if level_complete {
            let eligible = self.chain_intact && !self.died_this_level;
            if eligible {
                // The freshly played sequence becomes (or replaces) the
                // memory, so memory and trajectory agree by construction.
                self.committed.insert(level, self.current.clone());
            }
            self.chain_intact = eligible;
            self.current.clear();
            self.current_level = level + 1;
            self.died_this_level = false;
        }
    }
}

/// Elementwise-sum the value rows and pick the argmax (lowest index wins).
pub fn select_action(rows: &[&[f64]]) -> Result<usize> {
    let first = rows
        .first()
        .ok_or_else(|| HraError::InvalidArgument("no value rows given".into()))?;
    let n = first.len();
    let mut total = vec![0.0; n];
    for row in rows {
        if row.len() != n {
            return Err(HraError::InvalidArgument(format!(
                "value row length {} does not match {}",
                row.len(),
                n
            )));
        }
        for (acc, &v) in total.iter_mut().zip(*row) {
            *acc += v;
        }
    }
    if total.is_empty() {
        return Err(HraError::InvalidArgument("empty value rows".into()));
    }
    Ok(argmax_lowest(&total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::maze::NOOP_ACTION;
    use crate::mdp::{ActionId, Environment};
    use rand::SeedableRng;

    fn score(row: Vec<f64>) -> HeadRow {
        HeadRow { kind: HeadKind::Score, row }
    }

    fn ghost(row: Vec<f64>) -> HeadRow {
        HeadRow { kind: HeadKind::Ghost, row }
    }

    #[test]
    fn select_action_sums_rows_and_breaks_ties_low() {
        let a = [1.0, 3.0, 3.0, 0.0, 0.0];
        let b = [2.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(select_action(&[&a, &b]).unwrap(), 0);
        let tie = [1.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(select_action(&[&tie]).unwrap(), 0);
        assert!(select_action(&[&a, &tie[..3]]).is_err());
        assert!(select_action(&[]).is_err());
    }

    #[test]
    fn linear_aggregation_is_a_weighted_sum() {
        let heads = vec![
            score(vec![1.0, 2.0, 0.0, 0.0, 0.0]),
            score(vec![0.5, 0.0, 0.0, 0.0, 0.0]),
            ghost(vec![0.0, 0.001, 0.0, 0.0, 0.0]),
        ];
        let q = aggregate(&heads, &AggregatorSpec::Linear);
        assert_eq!(q[0], 1.5);
        assert_eq!(q[1], 2.0 + GHOST_MULTIPLIER * 0.001);
    }

    #[test]
    fn normalized_aggregation_bounds_the_score_part() {
        let heads = vec![
            score(vec![10.0, 30.0, 20.0, 10.0, 10.0]),
            ghost(vec![0.2, 0.0, 0.0, 0.0, 0.0]),
        ];
        let q = aggregate(&heads, &AggregatorSpec::normalized());
        assert_eq!(q[1], 1.0);
        assert_eq!(q[2], 0.5);
        assert_eq!(q[0], 0.0 + -10.0 * 0.2);
    }

    #[test]
    fn constant_score_column_normalizes_to_zero() {
        let heads = vec![score(vec![7.0; 5])];
        let q = aggregate(&heads, &AggregatorSpec::normalized());
        assert_eq!(q, vec![0.0; 5]);
    }

    #[test]
    fn diversification_fades_after_fifty_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for step in [0, 49] {
            let v = diversification_values(&mut rng, step, 5);
            assert!(v.iter().all(|&x| (0.0..20.0).contains(&x)));
            assert!(v.iter().any(|&x| x != 0.0));
        }
        assert_eq!(diversification_values(&mut rng, 50, 5), vec![0.0; 5]);
    }

    #[test]
    fn exploration_bonus_decays_with_visits() {
        let mut counts = VisitCounts::new(1.0);
        for _ in 0..100 {
            counts.visit(7, 2);
        }
        let bonus = counts.bonus(7, 5);
        assert!(bonus[2] < bonus[0], "visited action should score lower");
        assert!(bonus.iter().all(|&b| b.is_finite() && b > 0.0));
        // Untried actions gain bonus as the total count grows.
        let early = VisitCounts::new(1.0).bonus(7, 5);
        assert!(bonus[0] > early[0]);
    }

    #[test]
    fn memory_commits_clean_levels_and_replays_them() {
        let mut mem = ExecutiveMemory::new();
        mem.begin_episode();
        mem.observe(1, 0, 2, false, false);
        mem.observe(1, 1, 3, false, true);
        assert_eq!(mem.committed_levels(), 1);
        assert_eq!(mem.committed_sequence(1).unwrap(), &[2, 3]);
        mem.begin_episode();
        assert_eq!(mem.forced_action(1, 0), Some(2));
        assert_eq!(mem.forced_action(1, 1), Some(3));
        assert_eq!(mem.forced_action(1, 2), None);
        assert_eq!(mem.forced_action(2, 0), None);
    }

    #[test]
    fn memory_rejects_levels_with_deaths() {
        let mut mem = ExecutiveMemory::new();
        mem.begin_episode();
        mem.observe(1, 0, 2, true, false);
        mem.observe(1, 1, 3, false, true);
        assert_eq!(mem.committed_levels(), 0);
        // The broken chain also blocks committing the following level.
        mem.observe(2, 0, 1, false, true);
        assert_eq!(mem.committed_levels(), 0);
        // A fresh episode restores eligibility for level 1.
        mem.begin_episode();
        mem.observe(1, 0, 2, false, true);
        assert_eq!(mem.committed_levels(), 1);
    }

    #[test]
    fn death_during_replay_stops_forcing() {
        let mut mem = ExecutiveMemory::new();
        mem.begin_episode();
        mem.observe(1, 0, 2, false, true);
        mem.begin_episode();
        assert!(mem.forced_action(1, 0).is_some());
        mem.observe(1, 0, 2, true, false);
        assert_eq!(mem.forced_action(1, 1), None);
    }

    #[test]
    fn head_values_cover_live_objects_with_multipliers() {
        let mut world = MazeWorld::with_builtin_maps();
        world.reset(2);
        for _ in 0..world.cfg.intro_steps {
            world.step(ActionId(NOOP_ACTION)).unwrap();
        }
        let mut bank = GvfBank::new();
        let maze = world.maze().clone();
        let map_id = world.map_index();
        let pellet = world.pellet_cells_remaining()[0];
        let gvf = bank.ensure(&maze, map_id, pellet).unwrap();
        // Plant a known prediction for the current player state.
        let state = world.player_state_index();
        gvf.update(state, 1, state, true);
        let heads = head_values(&world, &bank, &bank);
        let live = world.pellet_cells_remaining().len()
            + world.power_pellet_cells_remaining().len()
            + world
                .ghosts
                .iter()
                .filter(|g| world.step_count >= g.release_at)
                .count();
        assert_eq!(heads.len(), live);
        let planted: Vec<&HeadRow> = heads
            .iter()
            .filter(|h| h.kind == HeadKind::Score && h.row[1] != 0.0)
            .collect();
        assert_eq!(planted.len(), 1);
        assert_eq!(planted[0].row[1], PELLET_MULTIPLIER * 1.0);
    }

    #[test]
    fn eaten_pellet_head_disappears() {
        let mut world = MazeWorld::with_builtin_maps();
        world.reset(2);
        let bank = GvfBank::new();
        let before = head_values(&world, &bank, &bank).len();
        // No ghosts are out yet during the intro, so heads are all pellets.
        let expected =
            world.pellet_cells_remaining().len() + world.power_pellet_cells_remaining().len();
        assert_eq!(before, expected);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalized_scores_stay_in_unit_interval(
                rows in prop::collection::vec(
                    prop::collection::vec(-100.0f64..100.0, 5),
                    1..6,
                )
            ) {
                let heads: Vec<HeadRow> = rows.into_iter().map(score).collect();
                let q = aggregate(&heads, &AggregatorSpec::Normalized { ghost_weight: 0.0 });
                for v in q {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }

            #[test]
            fn linear_aggregation_is_additive_over_heads(
                a in prop::collection::vec(-50.0f64..50.0, 5),
                b in prop::collection::vec(-50.0f64..50.0, 5),
            ) {
                let joint = aggregate(
                    &[score(a.clone()), score(b.clone())],
                    &AggregatorSpec::Linear,
                );
                let qa = aggregate(&[score(a)], &AggregatorSpec::Linear);
                let qb = aggregate(&[score(b)], &AggregatorSpec::Linear);
                for i in 0..5 {
                    prop_assert!((joint[i] - (qa[i] + qb[i])).abs() < 1e-9);
                }
            }
        }
    }
}
