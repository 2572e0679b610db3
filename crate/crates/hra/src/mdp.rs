//! Discrete-MDP abstractions shared by every other module: states, actions,
//! transitions with decomposed rewards, policies and episode rollout.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HraError, Result};

/// Index into an environment's enumerable state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

/// Index into an environment's action set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

/// A grid cell. Both built-in environments are grid worlds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

/// Things that happened during one environment step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventTag {
    /// Fruit-grid: the fruit in the given slot was eaten.
    FruitEaten { slot: usize },
    PelletEaten { cell: Cell },
    PowerPelletEaten { cell: Cell },
    /// Maze bonus fruit; `points` is the type-dependent value.
    BonusFruitEaten { cell: Cell, points: i64 },
    /// Contact with a ghost in normal mode (costs a life).
    GhostContact { ghost: usize },
    /// A blue ghost was eaten; `chain` is its 0-based index in the current
    /// power-pellet window.
    BlueGhostEaten { ghost: usize, chain: usize },
    LevelComplete { level: u32 },
}

/// One environment step carrying the full reward plus its component rewards.
///
/// The invariant `sum(r_components) == r_env + shaping` holds exactly:
/// components are constructed from integer game points, never fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedTransition {
    pub s: StateId,
    pub a: ActionId,
    pub s_next: StateId,
    /// Environment reward in unshaped game points.
    pub r_env: f64,
    /// Shaping amount folded into the components (e.g. -1000 per ghost
    /// contact). Recorded separately so the game score can be recovered.
    pub shaping: f64,
    pub r_components: Vec<f64>,
    pub terminal: bool,
    pub events: Vec<EventTag>,
}

impl DecomposedTransition {
    /// Exactness check for the reward decomposition.
    pub fn decomposition_holds(&self) -> bool {
        let sum: f64 = self.r_components.iter().sum();
        sum == self.r_env + self.shaping
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    UniformRandom,
    GreedyOverValues,
    EpsilonGreedy(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieBreak {
    LowestIndex,
    SeededRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub tie_break: TieBreak,
}

impl PolicySpec {
    pub fn uniform_random() -> Self {
        PolicySpec { kind: PolicyKind::UniformRandom, tie_break: TieBreak::LowestIndex }
    }

    pub fn greedy() -> Self {
        PolicySpec { kind: PolicyKind::GreedyOverValues, tie_break: TieBreak::LowestIndex }
    }

    pub fn epsilon_greedy(epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(HraError::InvalidArgument(format!(
                "epsilon must be in [0,1], got {epsilon}"
            )));
        }
        Ok(PolicySpec { kind: PolicyKind::EpsilonGreedy(epsilon), tie_break: TieBreak::LowestIndex })
    }
}

/// Argmax with lowest-index tie-breaking.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Select an action from a policy, given the per-action values (required for
/// greedy and epsilon-greedy).
pub fn policy_select(
    policy: &PolicySpec,
    values: Option<&[f64]>,
    action_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ActionId> {
    let pick_greedy = |values: &[f64], rng: &mut ChaCha8Rng| -> usize {
        match policy.tie_break {
            TieBreak::LowestIndex => argmax_lowest(values),
            TieBreak::SeededRandom => {
                let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ties: Vec<usize> = values
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v == best)
                    .map(|(i, _)| i)
                    .collect();
                ties[rng.gen_range(0..ties.len())]
            }
        }
    };
    let idx = match policy.kind {
        PolicyKind::UniformRandom => rng.gen_range(0..action_count),
        PolicyKind::GreedyOverValues => {
            let values = values.ok_or_else(|| {
                HraError::InvalidArgument("greedy policy requires action values".into())
            })?;
            pick_greedy(values, rng)
        }
        PolicyKind::EpsilonGreedy(eps) => {
            if rng.gen::<f64>() < eps {
                rng.gen_range(0..action_count)
            } else {
                let values = values.ok_or_else(|| {
                    HraError::InvalidArgument("epsilon-greedy policy requires action values".into())
                })?;
                pick_greedy(values, rng)
            }
        }
    };
    Ok(ActionId(idx))
}

/// A discrete environment that can be rolled out.
pub trait Environment {
    fn action_count(&self) -> usize;
    fn reset(&mut self, seed: u64);
    fn step(&mut self, a: ActionId) -> Result<DecomposedTransition>;
    fn is_terminal(&self) -> bool;
    /// Enumerable encoding of the current state, used for logging and for
    /// value lookups on tabular state spaces.
    fn state_id(&self) -> StateId;
    /// Names for the component reward columns of the serialized log.
    fn component_names(&self) -> Vec<String>;
}

/// Source of per-action values for greedy rollouts.
pub trait ValueSource<E: ?Sized> {
    fn action_values(&self, env: &E) -> Vec<f64>;
}

impl<E: ?Sized, F: Fn(&E) -> Vec<f64>> ValueSource<E> for F {
    fn action_values(&self, env: &E) -> Vec<f64> {
        self(env)
    }
}

/// A completed episode: the transition log plus summary fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub transitions: Vec<DecomposedTransition>,
    /// Unshaped game points.
    pub total_score: f64,
    pub steps: usize,
    pub seed: u64,
    pub component_names: Vec<String>,
}

impl EpisodeLog {
    /// Line-oriented text serialization: a comment line with the summary
    /// fields, a header naming the component reward columns, then one
    /// comma-separated transition per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# seed={} steps={} total_score={}\n",
            self.seed, self.steps, self.total_score
        ));
        out.push_str("s,a,s_next,r_env,shaping");
        for name in &self.component_names {
            out.push_str(&format!(",r_{name}"));
        }
        out.push_str(",terminal,events\n");
        for t in &self.transitions {
            out.push_str(&format!(
                "{},{},{},{},{}",
                t.s.0, t.a.0, t.s_next.0, t.r_env, t.shaping
            ));
            for c in &t.r_components {
                out.push_str(&format!(",{c}"));
            }
            let events: Vec<String> = t.events.iter().map(|e| format!("{e:?}")).collect();
            out.push_str(&format!(",{},{}\n", t.terminal, events.join(";").replace(',', " ")));
        }
        out
    }

    /// The action sequence of the episode, for replay.
    pub fn actions(&self) -> Vec<ActionId> {
        self.transitions.iter().map(|t| t.a).collect()
    }
}

/// Roll out one episode. The environment is reset with `seed`; the policy's
/// random draws come from a stream derived from the same seed, so identical
/// inputs yield identical logs.
pub fn rollout<E: Environment + ?Sized>(
    env: &mut E,
    policy: &PolicySpec,
    value_source: Option<&dyn ValueSource<E>>,
    max_steps: usize,
    seed: u64,
) -> Result<EpisodeLog> {
    if max_steps == 0 {
        return Err(HraError::InvalidArgument("max_steps must be positive".into()));
    }
    env.reset(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut transitions = Vec::new();
    let mut total_score = 0.0;
    while !env.is_terminal() && transitions.len() < max_steps {
        let values = match policy.kind {
            PolicyKind::UniformRandom => None,
            _ => {
                let vs = value_source.ok_or_else(|| {
                    HraError::InvalidArgument("greedy rollout requires a value source".into())
                })?;
                Some(vs.action_values(env))
            }
        };
        let a = policy_select(policy, values.as_deref(), env.action_count(), &mut rng)?;
        let t = env.step(a)?;
        total_score += t.r_env;
        let terminal = t.terminal;
        transitions.push(t);
        if terminal {
            break;
        }
    }
    let steps = transitions.len();
    Ok(EpisodeLog {
        transitions,
        total_score,
        steps,
        seed,
        component_names: env.component_names(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Single-state env that is terminal at reset.
    struct DegenerateEnv;

    impl Environment for DegenerateEnv {
        fn action_count(&self) -> usize {
            1
        }
        fn reset(&mut self, _seed: u64) {}
        fn step(&mut self, _a: ActionId) -> Result<DecomposedTransition> {
            Err(HraError::InvalidState("episode finished".into()))
        }
        fn is_terminal(&self) -> bool {
            true
        }
        fn state_id(&self) -> StateId {
            StateId(0)
        }
        fn component_names(&self) -> Vec<String> {
            vec!["only".into()]
        }
    }

    #[test]
    fn rollout_zero_max_steps_is_invalid() {
        let mut env = DegenerateEnv;
        let policy = PolicySpec::uniform_random();
        assert!(matches!(
            rollout(&mut env, &policy, None, 0, 1),
            Err(HraError::InvalidArgument(_))
        ));
    }

    #[test]
    fn rollout_terminal_at_reset_yields_empty_log() {
        let mut env = DegenerateEnv;
        let policy = PolicySpec::uniform_random();
        let log = rollout(&mut env, &policy, None, 10, 1).unwrap();
        assert_eq!(log.steps, 0);
        assert_eq!(log.total_score, 0.0);
    }

    #[test]
    fn epsilon_out_of_range_rejected() {
        assert!(PolicySpec::epsilon_greedy(1.5).is_err());
        assert!(PolicySpec::epsilon_greedy(-0.1).is_err());
        assert!(PolicySpec::epsilon_greedy(0.3).is_ok());
    }

    #[test]
    fn argmax_ties_break_to_lowest_index() {
        assert_eq!(argmax_lowest(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(argmax_lowest(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn episode_log_text_has_header_and_rows() {
        let log = EpisodeLog {
            transitions: vec![DecomposedTransition {
                s: StateId(0),
                a: ActionId(1),
                s_next: StateId(2),
                r_env: 1.0,
                shaping: 0.0,
                r_components: vec![1.0, 0.0],
                terminal: false,
                events: vec![EventTag::FruitEaten { slot: 3 }],
            }],
            total_score: 1.0,
            steps: 1,
            seed: 7,
            component_names: vec!["slot0".into(), "slot1".into()],
        };
        let text = log.to_text();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# seed=7"));
        assert_eq!(lines.next().unwrap(), "s,a,s_next,r_env,shaping,r_slot0,r_slot1,terminal,events");
        assert!(lines.next().unwrap().starts_with("0,1,2,1,0,1,0,false,"));
    }
}
