//! General value functions over maze locations: each GVF predicts
//! discounted arrival at one target cell (cumulant 1 on entry, pseudo-
//! terminal there) and is learned tabularly over player states.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::envs::maze::{Maze, MAZE_ACTIONS};
use crate::error::{HraError, Result};
use crate::heads::{td_target, TargetRule};
use crate::mdp::Cell;
use crate::oracle::EnumeratedMdp;

pub const GVF_GAMMA: f64 = 0.99;
pub const GVF_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GvfKey {
    pub map_id: usize,
    pub target: Cell,
}

/// One location GVF: a dense table over (player state, action).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gvf {
    pub key: GvfKey,
    pub rule: TargetRule,
    pub alpha: f64,
    n_states: usize,
    n_actions: usize,
    q: Vec<f64>,
}

impl Gvf {
    pub fn new(key: GvfKey, n_states: usize, rule: TargetRule, alpha: f64) -> Self {
        Gvf {
            key,
            rule,
            alpha,
            n_states,
            n_actions: MAZE_ACTIONS,
            q: vec![0.0; n_states * MAZE_ACTIONS],
        }
    }

    pub fn value(&self, state: usize, action: usize) -> f64 {
        self.q[state * self.n_actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.q[state * self.n_actions..(state + 1) * self.n_actions]
    }

    /// TD update from one transition of experience. `reached` marks arrival
    /// at the target, which is pseudo-terminal: the prediction there is cut
    /// off, so the tables stay within [0, 1].
    pub fn update(&mut self, state: usize, action: usize, next_state: usize, reached: bool) {
        let cumulant = if reached { 1.0 } else { 0.0 };
        let next_row: Vec<f64> = self.row(next_state).to_vec();
        let target = td_target(&self.rule, cumulant, &next_row, reached)
            .expect("action rows are non-empty");
        let slot = &mut self.q[state * self.n_actions + action];
        *slot += self.alpha * (target - *slot);
    }

    /// One synchronous sweep over every state-action pair of a deterministic
    /// single-target sub-MDP. Returns the largest absolute change.
    pub fn sweep_on_mdp(&mut self, mdp: &EnumeratedMdp) -> Result<f64> {
        if mdp.n_states != self.n_states || mdp.n_actions != self.n_actions {
            return Err(HraError::InvalidArgument(
                "sub-MDP shape does not match the GVF table".into(),
            ));
        }
        let mut max_delta: f64 = 0.0;
        for s in 0..mdp.n_states {
            if mdp.terminal[s] {
                continue;
            }
            for a in 0..mdp.n_actions {
                let ts = &mdp.transitions[s][a];
                if ts.len() != 1 || ts[0].prob != 1.0 {
                    return Err(HraError::InvalidArgument(
                        "sub-MDP must be deterministic".into(),
                    ));
                }
                let next = ts[0].next;
                let before = self.value(s, a);
                self.update(s, a, next, mdp.terminal[next]);
                max_delta = max_delta.max((self.value(s, a) - before).abs());
            }
        }
        Ok(max_delta)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.q
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// The set of GVFs discovered so far, keyed by map and target cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "GvfBankData", into = "GvfBankData")]
pub struct GvfBank {
    rule: TargetRule,
    gvfs: Vec<Gvf>,
    index: HashMap<GvfKey, usize>,
}

/// Serialized form; the lookup index is rebuilt on load.
#[derive(Serialize, Deserialize)]
struct GvfBankData {
    rule: TargetRule,
    gvfs: Vec<Gvf>,
}

impl From<GvfBankData> for GvfBank {
    fn from(data: GvfBankData) -> Self {
        let index = data.gvfs.iter().enumerate().map(|(i, g)| (g.key, i)).collect();
        GvfBank { rule: data.rule, gvfs: data.gvfs, index }
    }
}

impl From<GvfBank> for GvfBankData {
    fn from(bank: GvfBank) -> Self {
        GvfBankData { rule: bank.rule, gvfs: bank.gvfs }
    }
}

impl Default for GvfBank {
    fn default() -> Self {
        Self::new()
    }
}

impl GvfBank {
    pub fn new() -> Self {
        Self::with_rule(TargetRule::uniform_mean(GVF_GAMMA).expect("valid default"))
    }

    /// A bank whose GVFs all learn under the given rule (e.g. a different
    /// discount for ghost-position predictions).
    pub fn with_rule(rule: TargetRule) -> Self {
        GvfBank { rule, gvfs: Vec::new(), index: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.gvfs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gvfs.is_empty()
    }

    pub fn get(&self, key: &GvfKey) -> Option<&Gvf> {
        self.index.get(key).map(|&i| &self.gvfs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Gvf> {
        self.gvfs.iter()
    }

    /// Register a GVF for a target cell, creating its table on first sight.
    /// Re-registering an existing target is a no-op that keeps the learned
    /// table. Wall cells are rejected.
    pub fn ensure(&mut self, maze: &Maze, map_id: usize, target: Cell) -> Result<&mut Gvf> {
        if maze.is_wall(target) {
            return Err(HraError::InvalidArgument(format!(
                "GVF target ({}, {}) is a wall",
                target.x, target.y
            )));
        }
        let key = GvfKey { map_id, target };
        let idx = match self.index.get(&key) {
            Some(&i) => i,
            None => {
                let gvf = Gvf::new(key, maze.player_state_count(), self.rule, GVF_ALPHA);
                self.gvfs.push(gvf);
                self.index.insert(key, self.gvfs.len() - 1);
                self.gvfs.len() - 1
            }
        };
        Ok(&mut self.gvfs[idx])
    }

    /// Predicted discounted arrival value; unknown targets read as 0.
    pub fn value(&self, key: &GvfKey, state: usize, action: usize) -> f64 {
        self.get(key).map_or(0.0, |g| g.value(state, action))
    }

    /// Feed one transition of real experience to every GVF of the map the
    /// player is on. Updates are skipped when the player starts on a GVF's
    /// own target (pseudo-terminal states have no outgoing prediction).
    pub fn update_all(
        &mut self,
        map_id: usize,
        prev_cell: Cell,
        prev_state: usize,
        action: usize,
        next_cell: Cell,
        next_state: usize,
    ) {
        for gvf in self.gvfs.iter_mut() {
            if gvf.key.map_id != map_id || gvf.key.target == prev_cell {
                continue;
            }
            gvf.update(prev_state, action, next_state, next_cell == gvf.key.target);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::maze::{builtin_maps, MazeWorld, NOOP_ACTION};
    use crate::mdp::{ActionId, Environment};
    use crate::oracle::StatePolicy;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SMALL_MAP: &str = "#######\n#P...G#\n#.###.#\n#..F..#\n#######\n";

    #[test]
    fn ensure_rejects_walls_and_is_idempotent() {
        let maze = Maze::parse(SMALL_MAP).unwrap();
        let mut bank = GvfBank::new();
        assert!(bank.ensure(&maze, 0, Cell::new(0, 0)).is_err());
        let target = Cell::new(3, 1);
        bank.ensure(&maze, 0, target).unwrap();
        let state = maze.player_state_index(Cell::new(1, 1), 0).unwrap();
        // Touch a value, then re-register: learned content must survive.
        let key = GvfKey { map_id: 0, target };
        let next = maze.player_state_index(Cell::new(2, 1), 1).unwrap();
        let tgt_state = maze.player_state_index(target, 1).unwrap();
        let _ = (state, next, tgt_state);
        bank.gvfs[0].update(next, 1, tgt_state, true);
        let learned = bank.value(&key, next, 1);
        assert_eq!(learned, 1.0);
        bank.ensure(&maze, 0, target).unwrap();
        assert_eq!(bank.len(), 1);
        assert_eq!(bank.value(&key, next, 1), learned);
    }

    #[test]
    fn unknown_target_reads_zero() {
        let bank = GvfBank::new();
        let key = GvfKey { map_id: 0, target: Cell::new(1, 1) };
        assert_eq!(bank.value(&key, 0, 0), 0.0);
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // (s, a) loops mirror the math
    fn sweeps_converge_to_uniform_policy_evaluation() {
        let maze = Maze::parse(SMALL_MAP).unwrap();
        let target = Cell::new(3, 3);
        let mdp = maze.gvf_sub_mdp(target).unwrap();
        let expected = mdp
            .policy_eval_exact(
                &StatePolicy::uniform(mdp.n_states, mdp.n_actions),
                GVF_GAMMA,
                None,
            )
            .unwrap();
        let key = GvfKey { map_id: 0, target };
        let mut gvf = Gvf::new(
            key,
            maze.player_state_count(),
            TargetRule::uniform_mean(GVF_GAMMA).unwrap(),
            GVF_ALPHA,
        );
        for _ in 0..3000 {
            if gvf.sweep_on_mdp(&mdp).unwrap() < 1e-12 {
                break;
            }
        }
        for s in 0..mdp.n_states {
            if mdp.terminal[s] {
                continue;
            }
            for a in 0..mdp.n_actions {
                assert!(
                    (gvf.value(s, a) - expected[s][a]).abs() < 1e-6,
                    "state {s} action {a}: {} vs {}",
                    gvf.value(s, a),
                    expected[s][a]
                );
            }
        }
        let (lo, hi) = gvf.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn online_experience_stays_in_unit_interval() {
        let mut world = MazeWorld::with_builtin_maps();
        world.reset(5);
        let maze_clone = world.maze().clone();
        let mut bank = GvfBank::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..world.cfg.intro_steps {
            world.step(ActionId(NOOP_ACTION)).unwrap();
        }
        for _ in 0..4000 {
            if world.is_terminal() {
                world.reset(5);
                for _ in 0..world.cfg.intro_steps {
                    world.step(ActionId(NOOP_ACTION)).unwrap();
                }
            }
            let map_id = world.map_index();
            let prev_cell = world.player;
            let prev_state = world.player_state_index();
            bank.ensure(&maze_clone, map_id, prev_cell).unwrap();
            let a = rng.gen_range(0..MAZE_ACTIONS);
            world.step(ActionId(a)).unwrap();
            bank.update_all(
                map_id,
                prev_cell,
                prev_state,
                a,
                world.player,
                world.player_state_index(),
            );
        }
        assert!(bank.len() > 10);
        for gvf in bank.iter() {
            let (lo, hi) = gvf.min_max();
            assert!(lo >= 0.0 && hi <= 1.0, "GVF out of [0,1]: [{lo}, {hi}]");
        }
    }

    #[test]
    fn bank_serialization_roundtrip() {
        let maps = builtin_maps();
        let mut bank = GvfBank::new();
        let target = maps[0].pellet_cells[0];
        bank.ensure(&maps[0], 0, target).unwrap();
        bank.gvfs[0].update(3, 1, 7, true);
        let json = serde_json::to_string(&bank).unwrap();
        let back: GvfBank = serde_json::from_str(&json).unwrap();
        let key = GvfKey { map_id: 0, target };
        assert_eq!(back.value(&key, 3, 1), bank.value(&key, 3, 1));
        assert_eq!(back.len(), 1);
    }
}
