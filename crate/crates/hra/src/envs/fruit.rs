//! The fruit-collection grid: a 10x10 world with 10 fixed fruit slots, 5 of
//! which hold a fruit at reset. Reward is +1 per fruit eaten; an episode ends
//! when all fruits are gone or after 300 steps.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HraError, Result};
use crate::mdp::{ActionId, Cell, DecomposedTransition, Environment, EventTag, StateId};
use crate::oracle::{EnumeratedMdp, MdpTransition};

pub const GRID_WIDTH: usize = 10;
pub const GRID_HEIGHT: usize = 10;
pub const SLOT_COUNT: usize = 10;
pub const FRUITS_PER_EPISODE: usize = 5;
pub const MAX_EPISODE_STEPS: usize = 300;
pub const FRUIT_ACTIONS: usize = 4;

/// Fixed, symmetric slot layout; configurable through the experiment config.
pub const DEFAULT_FRUIT_SLOTS: [(usize, usize); SLOT_COUNT] = [
    (0, 2),
    (0, 7),
    (2, 0),
    (2, 9),
    (4, 4),
    (5, 5),
    (7, 0),
    (7, 9),
    (9, 2),
    (9, 7),
];

/// Which feature encoding the value network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureProjection {
    /// 100 position bits + 10 fruit-presence bits.
    Full110,
    /// 100 position bits + the one fruit bit owned by the head.
    PerHeadReduced,
    /// Length-100 one-hot over the agent position (tabular pathway).
    OneHotJoint,
}

#[derive(Debug, Clone)]
pub struct FruitGrid {
    pub slots: [Cell; SLOT_COUNT],
    /// Presence flag per slot.
    pub active: [bool; SLOT_COUNT],
    /// The 5 slot indices drawn at the last reset.
    pub episode_slots: Vec<usize>,
    pub agent: Cell,
    pub step_count: usize,
    pub terminal: bool,
}

impl FruitGrid {
    pub fn new() -> Self {
        Self::with_slots(DEFAULT_FRUIT_SLOTS.map(|(x, y)| Cell::new(x, y)))
    }

    pub fn with_slots(slots: [Cell; SLOT_COUNT]) -> Self {
        FruitGrid {
            slots,
            active: [false; SLOT_COUNT],
            episode_slots: Vec::new(),
            agent: Cell::new(0, 0),
            step_count: 0,
            terminal: true,
        }
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    fn cell_index(cell: Cell) -> usize {
        cell.y * GRID_WIDTH + cell.x
    }

    fn slot_at(&self, cell: Cell) -> Option<usize> {
        self.slots.iter().position(|&s| s == cell)
    }

    fn moved(cell: Cell, a: ActionId) -> Cell {
        // 0 = N, 1 = E, 2 = S, 3 = W; border moves are no-ops.
        let (x, y) = (cell.x, cell.y);
        match a.0 {
            0 if y > 0 => Cell::new(x, y - 1),
            1 if x < GRID_WIDTH - 1 => Cell::new(x + 1, y),
            2 if y < GRID_HEIGHT - 1 => Cell::new(x, y + 1),
            3 if x > 0 => Cell::new(x - 1, y),
            _ => cell,
        }
    }

    /// Binary feature encoding for the given projection. `head` must be
    /// given exactly for the per-head-reduced projection.
    pub fn features(&self, projection: FeatureProjection, head: Option<usize>) -> Result<Vec<f64>> {
        if let Some(k) = head {
            if k >= SLOT_COUNT {
                return Err(HraError::InvalidArgument(format!("head index {k} out of range")));
            }
        }
        match projection {
            FeatureProjection::Full110 => {
                if head.is_some() {
                    return Err(HraError::InvalidArgument(
                        "head index only valid for the per-head-reduced projection".into(),
                    ));
                }
                let mut f = vec![0.0; 110];
                f[Self::cell_index(self.agent)] = 1.0;
                for (i, &a) in self.active.iter().enumerate() {
                    if a {
                        f[100 + i] = 1.0;
                    }
                }
                Ok(f)
            }
            FeatureProjection::PerHeadReduced => {
                let k = head.ok_or_else(|| {
                    HraError::InvalidArgument(
                        "per-head-reduced projection requires a head index".into(),
                    )
                })?;
                let mut f = vec![0.0; 101];
                f[Self::cell_index(self.agent)] = 1.0;
                if self.active[k] {
                    f[100] = 1.0;
                }
                Ok(f)
            }
            FeatureProjection::OneHotJoint => {
                if head.is_some() {
                    return Err(HraError::InvalidArgument(
                        "head index only valid for the per-head-reduced projection".into(),
                    ));
                }
                let mut f = vec![0.0; 100];
                f[Self::cell_index(self.agent)] = 1.0;
                Ok(f)
            }
        }
    }

    pub fn agent_cell_index(&self) -> usize {
        Self::cell_index(self.agent)
    }

    /// Index of the current state in the joint MDP exported by
    /// [`FruitGrid::joint_mdp`]: agent position x remaining subset of this
    /// episode's 5 fruit slots.
    pub fn joint_state_index(&self) -> usize {
        let mut mask = 0usize;
        for (bit, &slot) in self.episode_slots.iter().enumerate() {
            if self.active[slot] {
                mask |= 1 << bit;
            }
        }
        Self::cell_index(self.agent) * (1 << FRUITS_PER_EPISODE) + mask
    }

    /// Export the joint (position x fruit-subset) MDP for the current
    /// episode's fruit configuration. `Points` keeps the decomposed +1
    /// rewards (10 components, one per slot); `StepCost` charges -1 per step
    /// with a single component, so the optimal Q encodes negated minimal
    /// collection-tour lengths and supports gamma = 1.
    #[allow(clippy::needless_range_loop)] // (s, a) index loops mirror the math
    pub fn joint_mdp(&self, reward: JointReward) -> EnumeratedMdp {
        let subsets = 1usize << FRUITS_PER_EPISODE;
        let n_states = GRID_WIDTH * GRID_HEIGHT * subsets;
        let n_components = match reward {
            JointReward::Points => SLOT_COUNT,
            JointReward::StepCost => 1,
        };
        let mut transitions = Vec::with_capacity(n_states);
        // States with no fruit left are terminal.
        let terminal: Vec<bool> = (0..n_states).map(|s| s % subsets == 0).collect();
        for s in 0..n_states {
            let pos = s / subsets;
            let mask = s % subsets;
            let cell = Cell::new(pos % GRID_WIDTH, pos / GRID_WIDTH);
            let mut per_action = Vec::with_capacity(FRUIT_ACTIONS);
            for a in 0..FRUIT_ACTIONS {
                if terminal[s] {
                    per_action.push(Vec::new());
                    continue;
                }
                let next_cell = Self::moved(cell, ActionId(a));
                let mut next_mask = mask;
                let mut eaten_slot = None;
                if let Some(slot) = self.slot_at(next_cell) {
                    if let Some(bit) = self.episode_slots.iter().position(|&e| e == slot) {
                        if mask & (1 << bit) != 0 {
                            next_mask &= !(1 << bit);
                            eaten_slot = Some(slot);
                        }
                    }
                }
                let next = Self::cell_index(next_cell) * subsets + next_mask;
                let rewards = match reward {
                    JointReward::Points => {
                        let mut r = vec![0.0; SLOT_COUNT];
                        if let Some(slot) = eaten_slot {
                            r[slot] = 1.0;
                        }
                        r
                    }
                    JointReward::StepCost => vec![-1.0],
                };
                per_action.push(vec![MdpTransition { next, prob: 1.0, rewards }]);
            }
            transitions.push(per_action);
        }
        EnumeratedMdp {
            n_states,
            n_actions: FRUIT_ACTIONS,
            n_components,
            transitions,
            terminal,
        }
    }
}

impl Default for FruitGrid {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointReward {
    Points,
    StepCost,
}

impl Environment for FruitGrid {
    fn action_count(&self) -> usize {
        FRUIT_ACTIONS
    }

    fn reset(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Draw 5 of the 10 slots uniformly without replacement.
        let mut indices: Vec<usize> = (0..SLOT_COUNT).collect();
        for i in 0..FRUITS_PER_EPISODE {
            let j = rng.gen_range(i..SLOT_COUNT);
            indices.swap(i, j);
        }
        self.episode_slots = indices[..FRUITS_PER_EPISODE].to_vec();
        self.episode_slots.sort_unstable();
        self.active = [false; SLOT_COUNT];
        for &slot in &self.episode_slots {
            self.active[slot] = true;
        }
        // Agent on a uniformly random cell, redrawn while on an active fruit.
        loop {
            let x = rng.gen_range(0..GRID_WIDTH);
            let y = rng.gen_range(0..GRID_HEIGHT);
            let cell = Cell::new(x, y);
            if self.slot_at(cell).is_none_or(|slot| !self.active[slot]) {
                self.agent = cell;
                break;
            }
        }
        self.step_count = 0;
        self.terminal = false;
    }

    fn step(&mut self, a: ActionId) -> Result<DecomposedTransition> {
        if self.terminal {
            return Err(HraError::InvalidState("episode already finished".into()));
        }
        if a.0 >= FRUIT_ACTIONS {
            return Err(HraError::InvalidArgument(format!("action {} out of range", a.0)));
        }
        let s = self.state_id();
        let next_cell = Self::moved(self.agent, a);
        self.agent = next_cell;
        self.step_count += 1;
        let mut r_components = vec![0.0; SLOT_COUNT];
        let mut r_env = 0.0;
        let mut events = Vec::new();
        if let Some(slot) = self.slot_at(next_cell) {
            if self.active[slot] {
                self.active[slot] = false;
                r_components[slot] = 1.0;
                r_env = 1.0;
                events.push(EventTag::FruitEaten { slot });
            }
        }
        if self.active_count() == 0 || self.step_count >= MAX_EPISODE_STEPS {
            self.terminal = true;
        }
        Ok(DecomposedTransition {
            s,
            a,
            s_next: self.state_id(),
            r_env,
            shaping: 0.0,
            r_components,
            terminal: self.terminal,
            events,
        })
    }

    fn is_terminal(&self) -> bool {
        self.terminal
    }

    fn state_id(&self) -> StateId {
        let mut mask = 0usize;
        for (i, &a) in self.active.iter().enumerate() {
            if a {
                mask |= 1 << i;
            }
        }
        StateId(Self::cell_index(self.agent) * (1 << SLOT_COUNT) + mask)
    }

    fn component_names(&self) -> Vec<String> {
        (0..SLOT_COUNT).map(|i| format!("slot{i}")).collect()
    }
}
