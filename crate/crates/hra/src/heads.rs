//! Per-component value functions and their TD targets: tabular heads and the
//! shared-trunk feed-forward approximator with a single-head update mode
//! (gradient enters at the summed output) and a multi-head mode (gradient
//! enters at the per-component outputs).

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HraError, Result};
use crate::mdp::{ActionId, DecomposedTransition, StateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TargetKind {
    /// Bootstrap on the best next action.
    Max,
    /// Expected-Sarsa bootstrap on the uniform-policy mean of next actions.
    UniformMean,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TargetRule {
    pub kind: TargetKind,
    pub gamma: f64,
}

impl TargetRule {
    pub fn new(kind: TargetKind, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(HraError::InvalidArgument(format!("gamma must be in [0,1], got {gamma}")));
        }
        Ok(TargetRule { kind, gamma })
    }

    pub fn max(gamma: f64) -> Result<Self> {
        Self::new(TargetKind::Max, gamma)
    }

    pub fn uniform_mean(gamma: f64) -> Result<Self> {
        Self::new(TargetKind::UniformMean, gamma)
    }
}

/// One-step TD target. Terminal transitions never read next-state values.
pub fn td_target(rule: &TargetRule, r_k: f64, next_values: &[f64], terminal: bool) -> Result<f64> {
    if next_values.is_empty() {
        return Err(HraError::InvalidArgument("next_values must be non-empty".into()));
    }
    if terminal {
        return Ok(r_k);
    }
    let continuation = match rule.kind {
        TargetKind::Max => next_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        TargetKind::UniformMean => {
            next_values.iter().sum::<f64>() / next_values.len() as f64
        }
    };
    Ok(r_k + rule.gamma * continuation)
}

/// Tabular action-value head. Unvisited entries read as 0.
#[derive(Debug, Clone)]
pub struct TabularHead {
    table: HashMap<(usize, usize), f64>,
    pub alpha: f64,
    pub rule: TargetRule,
    pub action_count: usize,
}

impl TabularHead {
    pub fn new(alpha: f64, rule: TargetRule, action_count: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(HraError::InvalidArgument(format!("alpha must be in (0,1], got {alpha}")));
        }
        Ok(TabularHead { table: HashMap::new(), alpha, rule, action_count })
    }

    pub fn value(&self, s: StateId, a: ActionId) -> f64 {
        *self.table.get(&(s.0, a.0)).unwrap_or(&0.0)
    }

    pub fn row(&self, s: StateId) -> Vec<f64> {
        (0..self.action_count).map(|a| self.value(s, ActionId(a))).collect()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Core update on explicit indices; the component reward and terminal
    /// flag are supplied by the caller.
    pub fn update_indexed(
        &mut self,
        s: usize,
        a: usize,
        r: f64,
        s_next: usize,
        terminal: bool,
    ) -> Result<()> {
        let next_row = self.row(StateId(s_next));
        let target = td_target(&self.rule, r, &next_row, terminal)?;
        let entry = self.table.entry((s, a)).or_insert(0.0);
        *entry = (1.0 - self.alpha) * *entry + self.alpha * target;
        Ok(())
    }

    /// Update on component `k` of a decomposed transition.
    pub fn update(&mut self, t: &DecomposedTransition, k: usize) -> Result<()> {
        if k >= t.r_components.len() {
            return Err(HraError::InvalidArgument(format!(
                "component {k} out of range for {} components",
                t.r_components.len()
            )));
        }
        self.update_indexed(t.s.0, t.a.0, t.r_components[k], t.s_next.0, t.terminal)
    }
}

/// Which layer the gradient enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// Loss on the aggregated output (fourth layer).
    SingleHead,
    /// Per-head loss on the component outputs (third layer).
    MultiHead,
}

/// Per-item training target, always tied to the taken action.
#[derive(Debug, Clone)]
pub enum UpdateTarget {
    PerHead(Vec<f64>),
    Summed(f64),
}

#[derive(Debug, Clone)]
pub struct TrainItem {
    pub features: Vec<f64>,
    pub action: ActionId,
    pub target: UpdateTarget,
}

/// Feed-forward net: binary input layer, one rectifier hidden layer, n head
/// groups of linear action outputs, and a fixed weight-1 aggregation layer
/// summing corresponding action nodes across heads.
#[derive(Debug, Clone)]
pub struct SharedTrunkNet {
    pub input_size: usize,
    pub hidden_size: usize,
    pub n_heads: usize,
    pub n_actions: usize,
    /// Column-major: w1[i * hidden + h].
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// Row-major per output unit: w2[(k * n_actions + a) * hidden + h].
    w2: Vec<f64>,
    b2: Vec<f64>,
    /// Aggregation weights, one per head. Fixed at 1 and never updated.
    agg_weights: Vec<f64>,
}

/// Forward-pass results: per-head action values and the aggregated values.
#[derive(Debug, Clone)]
pub struct NetOutput {
    pub hidden: Vec<f64>,
    /// Flattened n_heads x n_actions.
    pub heads: Vec<f64>,
    pub aggregated: Vec<f64>,
}

impl NetOutput {
    pub fn head_value(&self, k: usize, a: usize, n_actions: usize) -> f64 {
        self.heads[k * n_actions + a]
    }
}

impl SharedTrunkNet {
    /// Uniform fan-in-scaled initialization.
    pub fn new(
        input_size: usize,
        hidden_size: usize,
        n_heads: usize,
        n_actions: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound1 = 1.0 / (input_size as f64).sqrt();
        let bound2 = 1.0 / (hidden_size as f64).sqrt();
        let units = n_heads * n_actions;
        let w1 = (0..input_size * hidden_size).map(|_| rng.gen_range(-bound1..bound1)).collect();
        let w2 = (0..units * hidden_size).map(|_| rng.gen_range(-bound2..bound2)).collect();
        // Biases share the fan-in scaling; a non-zero bias also keeps hidden
        // units off the rectifier kink when no input bit is set.
        let b1 = (0..hidden_size).map(|_| rng.gen_range(-bound1..bound1)).collect();
        let b2 = (0..units).map(|_| rng.gen_range(-bound2..bound2)).collect();
        SharedTrunkNet {
            input_size,
            hidden_size,
            n_heads,
            n_actions,
            w1,
            b1,
            w2,
            b2,
            agg_weights: vec![1.0; n_heads],
        }
    }

    pub fn agg_weights(&self) -> &[f64] {
        &self.agg_weights
    }

    #[allow(clippy::needless_range_loop)] // slice-chunk indexing by unit
    pub fn forward(&self, features: &[f64]) -> Result<NetOutput> {
        if features.len() != self.input_size {
            return Err(HraError::InvalidArgument(format!(
                "feature length {} != input size {}",
                features.len(),
                self.input_size
            )));
        }
        let mut hidden = self.b1.clone();
        for (i, &x) in features.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let col = &self.w1[i * self.hidden_size..(i + 1) * self.hidden_size];
            for (h, &w) in hidden.iter_mut().zip(col) {
                *h += w * x;
            }
        }
        for h in hidden.iter_mut() {
            if *h < 0.0 {
                *h = 0.0;
            }
        }
        let units = self.n_heads * self.n_actions;
        let mut heads = vec![0.0; units];
        for u in 0..units {
            let row = &self.w2[u * self.hidden_size..(u + 1) * self.hidden_size];
            let mut acc = self.b2[u];
            for (&w, &h) in row.iter().zip(&hidden) {
                acc += w * h;
            }
            heads[u] = acc;
        }
        let mut aggregated = vec![0.0; self.n_actions];
        for k in 0..self.n_heads {
            let wk = self.agg_weights[k];
            for a in 0..self.n_actions {
                aggregated[a] += wk * heads[k * self.n_actions + a];
            }
        }
        Ok(NetOutput { hidden, heads, aggregated })
    }

    /// Per-output-unit error signals for one item, given its forward pass.
    /// Only units belonging to the taken action are non-zero.
    fn unit_deltas(&self, out: &NetOutput, item: &TrainItem, mode: UpdateMode) -> Result<Vec<(usize, f64)>> {
        let a = item.action.0;
        if a >= self.n_actions {
            return Err(HraError::InvalidArgument(format!("action {a} out of range")));
        }
        match (&item.target, mode) {
            (UpdateTarget::Summed(y), UpdateMode::SingleHead) => {
                let d = 2.0 * (out.aggregated[a] - y);
                Ok((0..self.n_heads)
                    .map(|k| (k * self.n_actions + a, d * self.agg_weights[k]))
                    .collect())
            }
            (UpdateTarget::PerHead(ys), UpdateMode::MultiHead) => {
                if ys.len() != self.n_heads {
                    return Err(HraError::InvalidArgument(format!(
                        "expected {} per-head targets, got {}",
                        self.n_heads,
                        ys.len()
                    )));
                }
                Ok(ys
                    .iter()
                    .enumerate()
                    .map(|(k, y)| {
                        let u = k * self.n_actions + a;
                        (u, 2.0 * (out.heads[u] - y))
                    })
                    .collect())
            }
            _ => Err(HraError::InvalidArgument(
                "target shape does not match update mode".into(),
            )),
        }
    }

    /// One gradient step on the mean squared error of the batch. The fixed
    /// aggregation layer receives no update in either mode.
    pub fn update_batch(&mut self, batch: &[TrainItem], mode: UpdateMode, step_size: f64) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let scale = step_size / batch.len() as f64;
        // Forward passes and deltas against the pre-update weights.
        let mut prepared = Vec::with_capacity(batch.len());
        for item in batch {
            let out = self.forward(&item.features)?;
            let deltas = self.unit_deltas(&out, item, mode)?;
            prepared.push((out, deltas));
        }
        // For multi-item batches, backpropagate through the pre-update second
        // layer; the single-transition online path skips the snapshot.
        let w2_snapshot = if batch.len() > 1 { Some(self.w2.clone()) } else { None };
        let mut dhidden = vec![0.0; self.hidden_size];
        for (item, (out, deltas)) in batch.iter().zip(&prepared) {
            for d in dhidden.iter_mut() {
                *d = 0.0;
            }
            for &(u, delta) in deltas {
                let g = scale * delta;
                let span = u * self.hidden_size..(u + 1) * self.hidden_size;
                let back = w2_snapshot.as_ref().map(|w| &w[span.clone()]);
                let row = &mut self.w2[span];
                for (((w, dh), &h), idx) in
                    row.iter_mut().zip(dhidden.iter_mut()).zip(&out.hidden).zip(0..)
                {
                    *dh += delta * back.map_or(*w, |b| b[idx]);
                    *w -= g * h;
                }
                self.b2[u] -= g;
            }
            // Rectifier mask.
            for (dh, &h) in dhidden.iter_mut().zip(&out.hidden) {
                if h <= 0.0 {
                    *dh = 0.0;
                }
            }
            for (i, &x) in item.features.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let col = &mut self.w1[i * self.hidden_size..(i + 1) * self.hidden_size];
                for (w, &dh) in col.iter_mut().zip(&dhidden) {
                    *w -= scale * dh * x;
                }
            }
            for (b, &dh) in self.b1.iter_mut().zip(&dhidden) {
                *b -= scale * dh;
            }
        }
        Ok(())
    }

    /// Batch mean squared error under the given mode (no update).
    pub fn loss(&self, batch: &[TrainItem], mode: UpdateMode) -> Result<f64> {
        let mut total = 0.0;
        for item in batch {
            let out = self.forward(&item.features)?;
            let a = item.action.0;
            match (&item.target, mode) {
                (UpdateTarget::Summed(y), UpdateMode::SingleHead) => {
                    total += (out.aggregated[a] - y).powi(2);
                }
                (UpdateTarget::PerHead(ys), UpdateMode::MultiHead) => {
                    for (k, y) in ys.iter().enumerate() {
                        total += (out.heads[k * self.n_actions + a] - y).powi(2);
                    }
                }
                _ => {
                    return Err(HraError::InvalidArgument(
                        "target shape does not match update mode".into(),
                    ))
                }
            }
        }
        Ok(total / batch.len() as f64)
    }

    /// Trainable parameters flattened as [w1, b1, w2, b2]. The fixed
    /// aggregation weights are excluded on purpose.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.w1.clone();
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.extend_from_slice(&self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let expected = self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len();
        if p.len() != expected {
            return Err(HraError::InvalidArgument(format!(
                "expected {expected} params, got {}",
                p.len()
            )));
        }
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
        Ok(())
    }

    /// Dense analytic gradient of the batch loss in [`Self::params`] order.
    /// Test and verification path; the training path applies updates
    /// in place without materializing this vector.
    pub fn grad_dense(&self, batch: &[TrainItem], mode: UpdateMode) -> Result<Vec<f64>> {
        let mut gw1 = vec![0.0; self.w1.len()];
        let mut gb1 = vec![0.0; self.b1.len()];
        let mut gw2 = vec![0.0; self.w2.len()];
        let mut gb2 = vec![0.0; self.b2.len()];
        let inv = 1.0 / batch.len() as f64;
        for item in batch {
            let out = self.forward(&item.features)?;
            let deltas = self.unit_deltas(&out, item, mode)?;
            let mut dhidden = vec![0.0; self.hidden_size];
            for &(u, delta) in &deltas {
                for h in 0..self.hidden_size {
                    gw2[u * self.hidden_size + h] += inv * delta * out.hidden[h];
                    dhidden[h] += delta * self.w2[u * self.hidden_size + h];
                }
                gb2[u] += inv * delta;
            }
            for (dh, &h) in dhidden.iter_mut().zip(&out.hidden) {
                if h <= 0.0 {
                    *dh = 0.0;
                }
            }
            for (i, &x) in item.features.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for h in 0..self.hidden_size {
                    gw1[i * self.hidden_size + h] += inv * dhidden[h] * x;
                }
            }
            for (g, &dh) in gb1.iter_mut().zip(&dhidden) {
                *g += inv * dh;
            }
        }
        let mut g = gw1;
        g.extend_from_slice(&gb1);
        g.extend_from_slice(&gw2);
        g.extend_from_slice(&gb2);
        Ok(g)
    }

    /// Serialize to a flat little-endian binary stream: a u64 header with the
    /// four layer sizes, then w1, b1, w2, b2 and the aggregation weights as
    /// row-major f64 arrays.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        for dim in [self.input_size, self.hidden_size, self.n_heads, self.n_actions] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for arr in [&self.w1, &self.b1, &self.w2, &self.b2, &self.agg_weights] {
            for v in arr.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Self> {
        let mut u64buf = [0u8; 8];
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            r.read_exact(&mut u64buf)?;
            *d = u64::from_le_bytes(u64buf) as usize;
        }
        let [input_size, hidden_size, n_heads, n_actions] = dims;
        let mut net = SharedTrunkNet {
            input_size,
            hidden_size,
            n_heads,
            n_actions,
            w1: vec![0.0; input_size * hidden_size],
            b1: vec![0.0; hidden_size],
            w2: vec![0.0; n_heads * n_actions * hidden_size],
            b2: vec![0.0; n_heads * n_actions],
            agg_weights: vec![0.0; n_heads],
        };
        let net_ptrs: [&mut Vec<f64>; 5] =
            [&mut net.w1, &mut net.b1, &mut net.w2, &mut net.b2, &mut net.agg_weights];
        for arr in net_ptrs {
            for v in arr.iter_mut() {
                r.read_exact(&mut u64buf)?;
                *v = f64::from_le_bytes(u64buf);
            }
        }
        Ok(net)
    }

    pub fn zero_weights(&mut self) {
        self.w1.iter_mut().for_each(|w| *w = 0.0);
        self.b1.iter_mut().for_each(|w| *w = 0.0);
        self.w2.iter_mut().for_each(|w| *w = 0.0);
        self.b2.iter_mut().for_each(|w| *w = 0.0);
    }
}

/// A live network paired with a frozen copy used for bootstrap targets.
/// A sync period of 1 degenerates to no target network.
#[derive(Debug, Clone)]
pub struct WithTarget<N: Clone> {
    pub live: N,
    pub frozen: N,
    pub sync_period: usize,
    updates: usize,
}

impl<N: Clone> WithTarget<N> {
    pub fn new(net: N, sync_period: usize) -> Result<Self> {
        if sync_period == 0 {
            return Err(HraError::InvalidArgument("sync period must be >= 1".into()));
        }
        let frozen = net.clone();
        Ok(WithTarget { live: net, frozen, sync_period, updates: 0 })
    }

    /// Replace the frozen copy with the live weights.
    pub fn sync(&mut self) {
        self.frozen = self.live.clone();
    }

    /// Bump the update counter, syncing when the period elapses.
    pub fn after_update(&mut self) {
        self.updates += 1;
        if self.updates.is_multiple_of(self.sync_period) {
            self.sync();
        }
    }
}

/// One independent sub-network per head, each seeing its own (reduced)
/// feature vector; the aggregate is the sum of the per-net outputs. Supports
/// the same two update modes as the shared-trunk net.
#[derive(Debug, Clone)]
pub struct PerHeadNet {
    pub nets: Vec<SharedTrunkNet>,
    pub n_actions: usize,
}

#[derive(Debug, Clone)]
pub struct PerHeadItem {
    /// One feature vector per head.
    pub features: Vec<Vec<f64>>,
    pub action: ActionId,
    pub target: UpdateTarget,
}

impl PerHeadNet {
    pub fn new(
        input_sizes: &[usize],
        hidden_size: usize,
        n_actions: usize,
        seed: u64,
    ) -> Self {
        let nets = input_sizes
            .iter()
            .enumerate()
            .map(|(k, &input)| {
                SharedTrunkNet::new(input, hidden_size, 1, n_actions, seed.wrapping_add(k as u64))
            })
            .collect();
        PerHeadNet { nets, n_actions }
    }

    pub fn n_heads(&self) -> usize {
        self.nets.len()
    }

    /// Per-head rows and their sum.
    pub fn forward(&self, features: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        if features.len() != self.nets.len() {
            return Err(HraError::InvalidArgument(format!(
                "expected {} feature vectors, got {}",
                self.nets.len(),
                features.len()
            )));
        }
        let mut rows = Vec::with_capacity(self.nets.len());
        let mut agg = vec![0.0; self.n_actions];
        for (net, f) in self.nets.iter().zip(features) {
            let out = net.forward(f)?;
            for (t, &v) in agg.iter_mut().zip(&out.aggregated) {
                *t += v;
            }
            rows.push(out.aggregated);
        }
        Ok((rows, agg))
    }

    pub fn update(&mut self, item: &PerHeadItem, mode: UpdateMode, step_size: f64) -> Result<()> {
        match (&item.target, mode) {
            (UpdateTarget::PerHead(ys), UpdateMode::MultiHead) => {
                if ys.len() != self.nets.len() {
                    return Err(HraError::InvalidArgument("per-head target count mismatch".into()));
                }
                for ((net, f), &y) in self.nets.iter_mut().zip(&item.features).zip(ys) {
                    let sub = TrainItem {
                        features: f.clone(),
                        action: item.action,
                        target: UpdateTarget::PerHead(vec![y]),
                    };
                    net.update_batch(&[sub], UpdateMode::MultiHead, step_size)?;
                }
                Ok(())
            }
            (UpdateTarget::Summed(y), UpdateMode::SingleHead) => {
                // Gradient of (sum_k out_k[a] - y)^2 w.r.t. each sub-net's
                // output is the same scalar; feed it to every sub-net as a
                // per-head pseudo-target shifted by half the residual.
                let (_, agg) = self.forward(&item.features)?;
                let residual = agg[item.action.0] - y;
                for (net, f) in self.nets.iter_mut().zip(&item.features) {
                    let out = net.forward(f)?;
                    let own = out.aggregated[item.action.0];
                    // (own - target) must equal residual so the unit delta
                    // matches the aggregated loss gradient.
                    let sub = TrainItem {
                        features: f.clone(),
                        action: item.action,
                        target: UpdateTarget::PerHead(vec![own - residual]),
                    };
                    net.update_batch(&[sub], UpdateMode::MultiHead, step_size)?;
                }
                Ok(())
            }
            _ => Err(HraError::InvalidArgument("target shape does not match update mode".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn td_target_max_rule() {
        let rule = TargetRule::max(0.5).unwrap();
        let y = td_target(&rule, 1.0, &[0.2, 0.8], false).unwrap();
        assert!((y - 1.4).abs() < 1e-15);
    }

    #[test]
    fn td_target_mean_rule() {
        let rule = TargetRule::uniform_mean(0.99).unwrap();
        let y = td_target(&rule, 0.0, &[1.0, 1.0, 1.0, 1.0], false).unwrap();
        assert!((y - 0.99).abs() < 1e-15);
    }

    #[test]
    fn td_target_terminal_ignores_next_values() {
        for rule in [TargetRule::max(0.9).unwrap(), TargetRule::uniform_mean(0.9).unwrap()] {
            let y = td_target(&rule, 5.0, &[9.0, 9.0], true).unwrap();
            assert_eq!(y, 5.0);
        }
    }

    #[test]
    fn td_target_empty_next_values_rejected() {
        let rule = TargetRule::max(0.9).unwrap();
        assert!(td_target(&rule, 0.0, &[], false).is_err());
    }

    #[test]
    fn gamma_out_of_range_rejected() {
        assert!(TargetRule::max(1.5).is_err());
        assert!(TargetRule::uniform_mean(-0.1).is_err());
    }

    #[test]
    fn tabular_alpha_one_assigns_target() {
        let rule = TargetRule::max(0.9).unwrap();
        let mut head = TabularHead::new(1.0, rule, 2).unwrap();
        head.update_indexed(0, 1, 3.0, 5, true).unwrap();
        assert_eq!(head.value(StateId(0), ActionId(1)), 3.0);
        // Idempotent when the transition is deterministic and next values
        // unchanged.
        head.update_indexed(0, 1, 3.0, 5, true).unwrap();
        assert_eq!(head.value(StateId(0), ActionId(1)), 3.0);
    }

    #[test]
    fn tabular_half_alpha_convex_combination() {
        let rule = TargetRule::max(0.0).unwrap();
        let mut head = TabularHead::new(0.5, rule, 2).unwrap();
        head.update_indexed(0, 0, 2.0, 1, true).unwrap();
        assert_eq!(head.value(StateId(0), ActionId(0)), 1.0);
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // (s, a) loops mirror the math
    fn tabular_sweeps_converge_to_uniform_policy_evaluation() {
        use crate::oracle::{EnumeratedMdp, MdpTransition, StatePolicy};
        // Deterministic 3-cell corridor: states 0,1,2 and terminal 3 on the
        // right; stepping off the left end is a no-op. Reward 1 on entering
        // the terminal cell.
        let det = |next: usize, r: f64| vec![MdpTransition { next, prob: 1.0, rewards: vec![r] }];
        let mdp = EnumeratedMdp {
            n_states: 4,
            n_actions: 2,
            n_components: 1,
            transitions: vec![
                vec![det(0, 0.0), det(1, 0.0)],
                vec![det(0, 0.0), det(2, 0.0)],
                vec![det(1, 0.0), det(3, 1.0)],
                vec![det(3, 0.0), det(3, 0.0)],
            ],
            terminal: vec![false, false, false, true],
        };
        let gamma = 0.9;
        let rule = TargetRule::uniform_mean(gamma).unwrap();
        let mut head = TabularHead::new(1.0, rule, 2).unwrap();
        let mut last_change = f64::INFINITY;
        let mut sweeps = 0;
        while last_change > 1e-9 && sweeps < 10_000 {
            last_change = 0.0;
            for s in 0..3 {
                for a in 0..2 {
                    let t = &mdp.transitions[s][a][0];
                    let before = head.value(StateId(s), ActionId(a));
                    head.update_indexed(s, a, t.rewards[0], t.next, mdp.terminal[t.next])
                        .unwrap();
                    let after = head.value(StateId(s), ActionId(a));
                    last_change = last_change.max((after - before).abs());
                }
            }
            sweeps += 1;
        }
        let policy = StatePolicy::uniform(4, 2);
        let oracle_q = mdp.policy_eval_exact(&policy, gamma, None).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                let diff = (head.value(StateId(s), ActionId(a)) - oracle_q[s][a]).abs();
                assert!(diff < 1e-6, "state {s} action {a}: diff {diff}");
            }
        }
    }

    fn random_features(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| if rng.gen::<f64>() < 0.4 { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let mut net = SharedTrunkNet::new(6, 5, 3, 4, 1);
        net.zero_weights();
        let out = net.forward(&[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(out.heads.iter().all(|&v| v == 0.0));
        assert!(out.aggregated.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aggregated_is_exact_column_sum_of_heads() {
        let net = SharedTrunkNet::new(8, 7, 4, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let f = random_features(&mut rng, 8);
            let out = net.forward(&f).unwrap();
            for a in 0..3 {
                let sum: f64 = (0..4).map(|k| out.head_value(k, a, 3)).sum();
                assert!((sum - out.aggregated[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_feature_length_rejected() {
        let net = SharedTrunkNet::new(6, 5, 2, 4, 1);
        assert!(net.forward(&[1.0; 5]).is_err());
    }

    /// Central-difference gradient check at eps = 1e-5.
    fn check_gradients(net: &SharedTrunkNet, batch: &[TrainItem], mode: UpdateMode) {
        let analytic = net.grad_dense(batch, mode).unwrap();
        let params = net.params();
        let eps = 1e-5;
        let mut probe = net.clone();
        for idx in 0..params.len() {
            let mut p = params.clone();
            p[idx] += eps;
            probe.set_params(&p).unwrap();
            let up = probe.loss(batch, mode).unwrap();
            p[idx] -= 2.0 * eps;
            probe.set_params(&p).unwrap();
            let down = probe.loss(batch, mode).unwrap();
            let numeric = (up - down) / (2.0 * eps);
            let denom = numeric.abs().max(analytic[idx].abs()).max(1e-8);
            let rel = (numeric - analytic[idx]).abs() / denom;
            assert!(rel < 1e-4, "param {idx}: analytic {} vs numeric {numeric}", analytic[idx]);
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for seed in 0..4u64 {
            let net = SharedTrunkNet::new(6, 5, 3, 4, seed);
            let batch: Vec<TrainItem> = (0..3)
                .map(|_| TrainItem {
                    features: random_features(&mut rng, 6),
                    action: ActionId(rng.gen_range(0..4)),
                    target: UpdateTarget::PerHead(
                        (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    ),
                })
                .collect();
            check_gradients(&net, &batch, UpdateMode::MultiHead);
            let batch: Vec<TrainItem> = (0..3)
                .map(|_| TrainItem {
                    features: random_features(&mut rng, 6),
                    action: ActionId(rng.gen_range(0..4)),
                    target: UpdateTarget::Summed(rng.gen_range(-1.0..1.0)),
                })
                .collect();
            check_gradients(&net, &batch, UpdateMode::SingleHead);
        }
    }

    #[test]
    fn update_at_minimum_leaves_weights_unchanged() {
        let mut net = SharedTrunkNet::new(6, 5, 3, 4, 3);
        let features = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let out = net.forward(&features).unwrap();
        let targets: Vec<f64> = (0..3).map(|k| out.head_value(k, 1, 4)).collect();
        let before = net.params();
        net.update_batch(
            &[TrainItem {
                features,
                action: ActionId(1),
                target: UpdateTarget::PerHead(targets),
            }],
            UpdateMode::MultiHead,
            0.1,
        )
        .unwrap();
        assert_eq!(net.params(), before);
    }

    #[test]
    fn repeated_updates_monotonically_decrease_error() {
        let mut net = SharedTrunkNet::new(6, 5, 3, 4, 4);
        let item = TrainItem {
            features: vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0],
            action: ActionId(2),
            target: UpdateTarget::PerHead(vec![0.7, -0.4, 1.2]),
        };
        let mut prev = net.loss(std::slice::from_ref(&item), UpdateMode::MultiHead).unwrap();
        for _ in 0..100 {
            net.update_batch(std::slice::from_ref(&item), UpdateMode::MultiHead, 1e-3).unwrap();
            let cur = net.loss(std::slice::from_ref(&item), UpdateMode::MultiHead).unwrap();
            assert!(cur <= prev + 1e-12);
            prev = cur;
        }
    }

    #[test]
    fn single_and_multi_head_updates_differ() {
        let base = SharedTrunkNet::new(6, 5, 3, 4, 5);
        let features = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let mut single = base.clone();
        single
            .update_batch(
                &[TrainItem {
                    features: features.clone(),
                    action: ActionId(0),
                    target: UpdateTarget::Summed(1.5),
                }],
                UpdateMode::SingleHead,
                0.01,
            )
            .unwrap();
        let mut multi = base.clone();
        multi
            .update_batch(
                &[TrainItem {
                    features,
                    action: ActionId(0),
                    target: UpdateTarget::PerHead(vec![0.5, 0.5, 0.5]),
                }],
                UpdateMode::MultiHead,
                0.01,
            )
            .unwrap();
        assert_ne!(single.params(), multi.params());
    }

    #[test]
    fn mismatched_target_shape_rejected() {
        let mut net = SharedTrunkNet::new(6, 5, 3, 4, 6);
        let item = TrainItem {
            features: vec![0.0; 6],
            action: ActionId(0),
            target: UpdateTarget::Summed(1.0),
        };
        assert!(net.update_batch(&[item], UpdateMode::MultiHead, 0.01).is_err());
    }

    #[test]
    fn target_network_isolation_and_sync() {
        let net = SharedTrunkNet::new(6, 5, 2, 4, 7);
        let mut pair = WithTarget::new(net, 10).unwrap();
        let features = vec![1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let frozen_before = pair.frozen.forward(&features).unwrap().aggregated;
        pair.live
            .update_batch(
                &[TrainItem {
                    features: features.clone(),
                    action: ActionId(0),
                    target: UpdateTarget::Summed(2.0),
                }],
                UpdateMode::SingleHead,
                0.05,
            )
            .unwrap();
        // Frozen outputs unchanged by live updates.
        assert_eq!(pair.frozen.forward(&features).unwrap().aggregated, frozen_before);
        pair.sync();
        let live = pair.live.forward(&features).unwrap().aggregated;
        let frozen = pair.frozen.forward(&features).unwrap().aggregated;
        for (l, f) in live.iter().zip(&frozen) {
            assert!((l - f).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let net = SharedTrunkNet::new(9, 4, 3, 5, 8);
        let mut buf = Vec::new();
        net.save(&mut buf).unwrap();
        let loaded = SharedTrunkNet::load(&mut buf.as_slice()).unwrap();
        assert_eq!(net.params(), loaded.params());
        assert_eq!(net.agg_weights(), loaded.agg_weights());
    }

    #[test]
    fn per_head_net_sums_subnet_outputs() {
        let net = PerHeadNet::new(&[5, 7, 6], 4, 3, 11);
        let features = vec![vec![1.0, 0.0, 1.0, 0.0, 0.0], vec![0.0; 7], {
            let mut f = vec![0.0; 6];
            f[2] = 1.0;
            f
        }];
        let (rows, agg) = net.forward(&features).unwrap();
        for a in 0..3 {
            let sum: f64 = rows.iter().map(|r| r[a]).sum();
            assert!((sum - agg[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn per_head_single_head_update_decreases_aggregated_error() {
        let mut net = PerHeadNet::new(&[5, 5], 6, 3, 12);
        let features = vec![vec![1.0, 0.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 0.0, 1.0]];
        let item = PerHeadItem {
            features: features.clone(),
            action: ActionId(1),
            target: UpdateTarget::Summed(2.0),
        };
        let (_, before) = net.forward(&features).unwrap();
        for _ in 0..50 {
            net.update(&item, UpdateMode::SingleHead, 1e-2).unwrap();
        }
        let (_, after) = net.forward(&features).unwrap();
        assert!((after[1] - 2.0).abs() < (before[1] - 2.0).abs());
    }
}
