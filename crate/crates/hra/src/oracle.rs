//! Exact ground-truth solvers on small enumerable MDPs: policy evaluation
//! (linear solve and fixed-point iteration), value iteration, and the
//! decomposition-identity verifier.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HraError, Result};
use crate::mdp::argmax_lowest;

/// One outcome of taking an action: next state, probability, and the
/// per-component rewards attached to the transition.
#[derive(Debug, Clone)]
pub struct MdpTransition {
    pub next: usize,
    pub prob: f64,
    pub rewards: Vec<f64>,
}

impl MdpTransition {
    pub fn r_env(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// A fully enumerated MDP with a decomposed reward function. The
/// decomposition holds by construction: the environment reward of a
/// transition is the sum of its component rewards.
#[derive(Debug, Clone)]
pub struct EnumeratedMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_components: usize,
    /// transitions[s][a] lists the possible outcomes.
    pub transitions: Vec<Vec<Vec<MdpTransition>>>,
    pub terminal: Vec<bool>,
}

/// Per-state action distribution, row-stochastic.
#[derive(Debug, Clone)]
pub struct StatePolicy {
    pub probs: Vec<Vec<f64>>,
}

impl StatePolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        StatePolicy { probs: vec![vec![p; n_actions]; n_states] }
    }

    /// Deterministic greedy policy over a Q table, lowest-index ties.
    pub fn greedy(q: &[Vec<f64>]) -> Self {
        let probs = q
            .iter()
            .map(|row| {
                let mut p = vec![0.0; row.len()];
                p[argmax_lowest(row)] = 1.0;
                p
            })
            .collect();
        StatePolicy { probs }
    }
}

impl EnumeratedMdp {
    /// Check row-stochasticity of the transition tensor for non-terminal
    /// states (tolerance 1e-12).
    pub fn validate(&self) -> Result<()> {
        for s in 0..self.n_states {
            if self.terminal[s] {
                continue;
            }
            for a in 0..self.n_actions {
                let total: f64 = self.transitions[s][a].iter().map(|t| t.prob).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(HraError::InvalidArgument(format!(
                        "transition row (s={s}, a={a}) sums to {total}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    fn reward_of(&self, t: &MdpTransition, component: Option<usize>) -> f64 {
        match component {
            Some(k) => t.rewards[k],
            None => t.r_env(),
        }
    }

    /// Solve the Bellman evaluation equations for `policy` exactly via a
    /// linear system over state values, then read off the Q table.
    ///
    /// Terminal states have value 0 and their Q rows are 0.
    #[allow(clippy::needless_range_loop)] // (s, a) loops mirror the math
    pub fn policy_eval_exact(
        &self,
        policy: &StatePolicy,
        gamma: f64,
        component: Option<usize>,
    ) -> Result<Vec<Vec<f64>>> {
        let n = self.n_states;
        // (I - gamma * P_pi) V = r_pi, with terminal rows pinned to V = 0.
        let mut a_mat = DMatrix::<f64>::identity(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for s in 0..n {
            if self.terminal[s] {
                continue;
            }
            for a in 0..self.n_actions {
                let pa = policy.probs[s][a];
                if pa == 0.0 {
                    continue;
                }
                for t in &self.transitions[s][a] {
                    b[s] += pa * t.prob * self.reward_of(t, component);
                    if !self.terminal[t.next] {
                        a_mat[(s, t.next)] -= gamma * pa * t.prob;
                    }
                }
            }
        }
        let lu = a_mat.clone().lu();
        let v = lu.solve(&b).ok_or_else(|| {
            HraError::NoFixedPoint("Bellman evaluation system is singular".into())
        })?;
        let residual = (&a_mat * &v - &b).amax();
        if residual > 1e-9 {
            return Err(HraError::NoFixedPoint(format!(
                "Bellman evaluation residual {residual} too large"
            )));
        }
        let mut q = vec![vec![0.0; self.n_actions]; n];
        for s in 0..n {
            if self.terminal[s] {
                continue;
            }
            for a in 0..self.n_actions {
                let mut total = 0.0;
                for t in &self.transitions[s][a] {
                    total += t.prob * self.reward_of(t, component);
                    if !self.terminal[t.next] {
                        total += gamma * t.prob * v[t.next];
                    }
                }
                q[s][a] = total;
            }
        }
        Ok(q)
    }

    /// Fixed-point iteration on the Q evaluation equations; the independent
    /// cross-check for the linear solve.
    pub fn policy_eval_iterative(
        &self,
        policy: &StatePolicy,
        gamma: f64,
        component: Option<usize>,
        tol: f64,
        max_iters: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let mut q = vec![vec![0.0; self.n_actions]; self.n_states];
        for _ in 0..max_iters {
            let mut delta: f64 = 0.0;
            let prev = q.clone();
            for s in 0..self.n_states {
                if self.terminal[s] {
                    continue;
                }
                for a in 0..self.n_actions {
                    let mut total = 0.0;
                    for t in &self.transitions[s][a] {
                        total += t.prob * self.reward_of(t, component);
                        if !self.terminal[t.next] {
                            let cont: f64 = (0..self.n_actions)
                                .map(|a2| policy.probs[t.next][a2] * prev[t.next][a2])
                                .sum();
                            total += gamma * t.prob * cont;
                        }
                    }
                    delta = delta.max((total - prev[s][a]).abs());
                    q[s][a] = total;
                }
            }
            if delta < tol {
                return Ok(q);
            }
        }
        Err(HraError::NoFixedPoint(format!(
            "policy evaluation did not converge within {max_iters} iterations"
        )))
    }

    /// Value iteration to sup-norm Bellman residual < tol.
    pub fn value_iteration(
        &self,
        gamma: f64,
        tol: f64,
        component: Option<usize>,
    ) -> Result<Vec<Vec<f64>>> {
        if tol <= 0.0 {
            return Err(HraError::InvalidArgument("tol must be positive".into()));
        }
        let mut q = vec![vec![0.0; self.n_actions]; self.n_states];
        // Generous cap; geometric convergence makes this ample for gamma < 1,
        // and shortest-path instances settle after at most S*A sweeps.
        let max_iters = 1_000_000;
        for _ in 0..max_iters {
            let mut delta: f64 = 0.0;
            let prev = q.clone();
            for s in 0..self.n_states {
                if self.terminal[s] {
                    continue;
                }
                for a in 0..self.n_actions {
                    let mut total = 0.0;
                    for t in &self.transitions[s][a] {
                        total += t.prob * self.reward_of(t, component);
                        if !self.terminal[t.next] {
                            let best =
                                prev[t.next].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            total += gamma * t.prob * best;
                        }
                    }
                    delta = delta.max((total - prev[s][a]).abs());
                    q[s][a] = total;
                }
            }
            if delta < tol {
                return Ok(q);
            }
        }
        Err(HraError::NoFixedPoint("value iteration did not converge".into()))
    }

    /// Evaluate the uniformly random policy per component, sum the component
    /// Q tables, evaluate the whole reward directly, and return the maximum
    /// absolute deviation between the two routes.
    pub fn verify_upsilon_identity(&self, gamma: f64) -> Result<f64> {
        let policy = StatePolicy::uniform(self.n_states, self.n_actions);
        let q_env = self.policy_eval_exact(&policy, gamma, None)?;
        let mut q_sum = vec![vec![0.0; self.n_actions]; self.n_states];
        for k in 0..self.n_components {
            let qk = self.policy_eval_exact(&policy, gamma, Some(k))?;
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    q_sum[s][a] += qk[s][a];
                }
            }
        }
        let mut max_dev: f64 = 0.0;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                max_dev = max_dev.max((q_sum[s][a] - q_env[s][a]).abs());
            }
        }
        Ok(max_dev)
    }

    /// Sum of per-component optimal Q tables (the training target the
    /// multi-head max rule approximates), for comparison against the optimal
    /// Q of the full reward.
    pub fn sum_of_component_optima(&self, gamma: f64, tol: f64) -> Result<Vec<Vec<f64>>> {
        let mut q_sum = vec![vec![0.0; self.n_actions]; self.n_states];
        for k in 0..self.n_components {
            let qk = self.value_iteration(gamma, tol, Some(k))?;
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    q_sum[s][a] += qk[s][a];
                }
            }
        }
        Ok(q_sum)
    }

    /// Seeded random decomposed MDP: S <= 20 states, A <= 4 actions,
    /// n <= 5 components, dense normalized transition rows, environment
    /// rewards uniform in [-1, 1] split randomly across components.
    pub fn random_decomposed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_states = rng.gen_range(3..=20);
        let n_actions = rng.gen_range(2..=4);
        let n_components = rng.gen_range(2..=5);
        let mut terminal = vec![false; n_states];
        // Occasionally mark a couple of states terminal.
        for t in terminal.iter_mut() {
            if rng.gen::<f64>() < 0.1 {
                *t = true;
            }
        }
        let mut transitions = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let mut per_action = Vec::with_capacity(n_actions);
            for _ in 0..n_actions {
                let weights: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let total: f64 = weights.iter().sum();
                let mut outcomes = Vec::with_capacity(n_states);
                for (next, w) in weights.iter().enumerate() {
                    let r_env = rng.gen_range(-1.0..1.0);
                    let split: Vec<f64> =
                        (0..n_components).map(|_| rng.gen::<f64>() + 1e-6).collect();
                    let split_total: f64 = split.iter().sum();
                    let mut rewards: Vec<f64> =
                        split.iter().map(|w| r_env * w / split_total).collect();
                    // Force exactness of the decomposition against rounding.
                    let drift: f64 = r_env - rewards.iter().sum::<f64>();
                    rewards[0] += drift;
                    outcomes.push(MdpTransition { next, prob: w / total, rewards });
                }
                per_action.push(outcomes);
            }
            transitions.push(per_action);
        }
        EnumeratedMdp { n_states, n_actions, n_components, transitions, terminal }
    }

    /// A 2-component MDP on which the sum of the per-component optimal Q
    /// functions disagrees with the optimal Q of the full reward, and the
    /// greedy policies differ: the two components prefer different actions
    /// in the middle state, so their individual optima cannot be realized by
    /// one behaviour.
    pub fn two_component_conflict() -> Self {
        let det = |next: usize, r1: f64, r2: f64| {
            vec![MdpTransition { next, prob: 1.0, rewards: vec![r1, r2] }]
        };
        // States: 0 = start, 1 = conflicted branch, 2 = safe branch, 3 = terminal.
        let transitions = vec![
            vec![det(1, 0.0, 0.0), det(2, 0.0, 0.0)],
            vec![det(3, 1.0, 0.0), det(3, 0.0, 1.0)],
            vec![det(3, 1.5, 0.0), det(3, 1.5, 0.0)],
            vec![det(3, 0.0, 0.0), det(3, 0.0, 0.0)],
        ];
        EnumeratedMdp {
            n_states: 4,
            n_actions: 2,
            n_components: 2,
            transitions,
            terminal: vec![false, false, false, true],
        }
    }
}

/// Greedy action per state, lowest-index ties.
pub fn greedy_actions(q: &[Vec<f64>]) -> Vec<usize> {
    q.iter().map(|row| argmax_lowest(row)).collect()
}

/// Elementwise sup-norm distance between two Q tables.
pub fn q_sup_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            d = d.max((x - y).abs());
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn self_loop_mdp() -> EnumeratedMdp {
        EnumeratedMdp {
            n_states: 1,
            n_actions: 1,
            n_components: 1,
            transitions: vec![vec![vec![MdpTransition {
                next: 0,
                prob: 1.0,
                rewards: vec![1.0],
            }]]],
            terminal: vec![false],
        }
    }

    #[test]
    fn self_loop_geometric_series() {
        let mdp = self_loop_mdp();
        let policy = StatePolicy::uniform(1, 1);
        let q = mdp.policy_eval_exact(&policy, 0.5, None).unwrap();
        assert!((q[0][0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let mut mdp = EnumeratedMdp::random_decomposed(3);
        for row in mdp.transitions.iter_mut() {
            for outcomes in row.iter_mut() {
                for t in outcomes.iter_mut() {
                    t.rewards.iter_mut().for_each(|r| *r = 0.0);
                }
            }
        }
        let policy = StatePolicy::uniform(mdp.n_states, mdp.n_actions);
        let q = mdp.policy_eval_exact(&policy, 0.9, None).unwrap();
        for row in q {
            for v in row {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn gamma_one_recurrent_loop_has_no_fixed_point() {
        let mdp = self_loop_mdp();
        let policy = StatePolicy::uniform(1, 1);
        assert!(matches!(
            mdp.policy_eval_exact(&policy, 1.0, None),
            Err(HraError::NoFixedPoint(_))
        ));
    }

    #[test]
    fn linear_solve_matches_iterative_on_random_mdp() {
        for seed in [11, 12, 13] {
            let mdp = EnumeratedMdp::random_decomposed(seed);
            mdp.validate().unwrap();
            let policy = StatePolicy::uniform(mdp.n_states, mdp.n_actions);
            let exact = mdp.policy_eval_exact(&policy, 0.9, None).unwrap();
            let iter =
                mdp.policy_eval_iterative(&policy, 0.9, None, 1e-14, 2_000_000).unwrap();
            assert!(q_sup_distance(&exact, &iter) < 1e-10);
        }
    }

    #[test]
    fn two_step_chain_discounts_once() {
        // 0 -> 1 (r=0), 1 -> terminal (r=1); gamma = 0.9.
        let det = |next: usize, r: f64| vec![MdpTransition { next, prob: 1.0, rewards: vec![r] }];
        let mdp = EnumeratedMdp {
            n_states: 3,
            n_actions: 1,
            n_components: 1,
            transitions: vec![vec![det(1, 0.0)], vec![det(2, 1.0)], vec![det(2, 0.0)]],
            terminal: vec![false, false, true],
        };
        let q = mdp.value_iteration(0.9, 1e-12, None).unwrap();
        assert!((q[0][0] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn tolerance_does_not_change_greedy_policy() {
        for seed in [21, 22, 23, 24] {
            let mdp = EnumeratedMdp::random_decomposed(seed);
            let coarse = mdp.value_iteration(0.9, 1e-2, None).unwrap();
            let fine = mdp.value_iteration(0.9, 1e-10, None).unwrap();
            assert_eq!(greedy_actions(&coarse), greedy_actions(&fine));
        }
    }

    #[test]
    fn upsilon_identity_holds_on_random_mdps() {
        for seed in 0..10 {
            let mdp = EnumeratedMdp::random_decomposed(seed);
            let dev = mdp.verify_upsilon_identity(0.9).unwrap();
            assert!(dev < 1e-10, "seed {seed}: deviation {dev}");
        }
    }

    #[test]
    fn upsilon_identity_exact_for_single_component() {
        let mut mdp = EnumeratedMdp::random_decomposed(5);
        for row in mdp.transitions.iter_mut() {
            for outcomes in row.iter_mut() {
                for t in outcomes.iter_mut() {
                    let r = t.r_env();
                    t.rewards = vec![r];
                }
            }
        }
        mdp.n_components = 1;
        let dev = mdp.verify_upsilon_identity(0.9).unwrap();
        assert_eq!(dev, 0.0);
    }

    #[test]
    fn component_optima_sum_disagrees_on_conflict_mdp() {
        let mdp = EnumeratedMdp::two_component_conflict();
        let gamma = 0.9;
        let q_env = mdp.value_iteration(gamma, 1e-12, None).unwrap();
        let q_sum = mdp.sum_of_component_optima(gamma, 1e-12).unwrap();
        let dev = q_sup_distance(&q_env, &q_sum);
        assert!(dev > 0.1, "deviation {dev} not large enough");
        assert_ne!(greedy_actions(&q_env), greedy_actions(&q_sum));
    }

    #[test]
    fn optimal_q_dominates_any_policy_evaluation() {
        for seed in [31, 32] {
            let mdp = EnumeratedMdp::random_decomposed(seed);
            let q_star = mdp.value_iteration(0.9, 1e-12, None).unwrap();
            let policy = StatePolicy::uniform(mdp.n_states, mdp.n_actions);
            let q_pi = mdp.policy_eval_exact(&policy, 0.9, None).unwrap();
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    assert!(q_star[s][a] >= q_pi[s][a] - 1e-10);
                }
            }
        }
    }
}
