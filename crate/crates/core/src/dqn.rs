//! Deep Q-learning agent: replay buffer, epsilon-greedy policy, TD targets
//! and a plain-SGD training step with a hard-synced target network.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, ParamVector};

/// Number of sleep-mode actions.
pub const NUM_ACTIONS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, entries: Vec::with_capacity(capacity.min(4096)), head: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() < self.capacity {
            self.entries.push(t);
        } else {
            self.entries[self.head] = t;
        }
        self.head = (self.head + 1) % self.capacity;
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = Transition>) {
        for t in items {
            self.push(t);
        }
    }

    /// Storage order, not chronological order.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Transition> {
        self.entries.iter_mut()
    }

    /// Samples `batch` distinct transitions; `None` if fewer are stored.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if batch == 0 || batch > self.entries.len() {
            return None;
        }
        Some(index::sample(rng, self.entries.len(), batch).into_iter().map(|i| &self.entries[i]).collect())
    }

    /// Up to `n` most recent transitions, oldest first.
    pub fn recent(&self, n: usize) -> Vec<&Transition> {
        let len = self.entries.len();
        let n = n.min(len);
        let newest = if len < self.capacity { len } else { self.head + len };
        (newest - n..newest).map(|i| &self.entries[i % len]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync_period: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of all training steps over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16],
            activation: Activation::Tanh,
            gamma: 0.5,
            learning_rate: 0.003,
            batch_size: 32,
            buffer_capacity: 2000,
            target_sync_period: 100,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.4,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid("dqn.gamma", "must lie in [0, 1)"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::invalid("dqn.learning_rate", "must be non-negative"));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.target_sync_period == 0 {
            return Err(Error::invalid("dqn", "batch_size, buffer_capacity and target_sync_period must be positive"));
        }
        for (name, v) in [
            ("dqn.epsilon_start", self.epsilon_start),
            ("dqn.epsilon_end", self.epsilon_end),
            ("dqn.epsilon_decay_fraction", self.epsilon_decay_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, "must lie in [0, 1]"));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("dqn.hidden", "layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, state_dim: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(state_dim);
        sizes.extend(&self.hidden);
        sizes.push(NUM_ACTIONS);
        sizes
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn from_config(cfg: &DqnConfig, total_steps: u64) -> Self {
        Self {
            start: cfg.epsilon_start,
            end: cfg.epsilon_end,
            decay_steps: (cfg.epsilon_decay_fraction * total_steps as f64).round() as u64,
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `y = r` for terminal transitions, else `r + gamma * max_a Q_target(s', a)`.
pub fn td_targets(batch: &[&Transition], target_net: &Mlp, gamma: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Empty("TD batch"));
    }
    batch
        .iter()
        .map(|t| {
            if t.terminal || gamma == 0.0 {
                return Ok(t.reward);
            }
            let q = target_net.forward(&t.next_state)?;
            let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(t.reward + gamma * max)
        })
        .collect()
}

/// Mean squared TD error over the batch and its parameter gradient.
pub fn td_loss_grad(net: &Mlp, batch: &[&Transition], targets: &[f64]) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::Empty("TD batch"));
    }
    let n = batch.len() as f64;
    let mut grad = net.params().zeros_like();
    let mut loss = 0.0;
    let mut out_grad = vec![0.0; net.output_dim()];
    for (t, y) in batch.iter().zip(targets) {
        if t.action >= net.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "transition action",
                expected: net.output_dim(),
                actual: t.action,
            });
        }
        let q = net.forward(&t.state)?;
        let err = q[t.action] - y;
        loss += err * err;
        out_grad.iter_mut().for_each(|g| *g = 0.0);
        out_grad[t.action] = 2.0 * err / n;
        net.accumulate_backward(&t.state, &out_grad, &mut grad)?;
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnAgent {
    q_net: Mlp,
    target_net: Mlp,
    pub epsilon: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    target_sync_period: u64,
    steps: u64,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, cfg: &DqnConfig, rng: &mut R) -> Result<Self> {
        let net = Mlp::new(&cfg.layer_sizes(state_dim), cfg.activation, rng)?;
        Ok(Self::from_net(net, cfg))
    }

    pub fn from_net(net: Mlp, cfg: &DqnConfig) -> Self {
        Self {
            target_net: net.clone(),
            q_net: net,
            epsilon: cfg.epsilon_start,
            gamma: cfg.gamma,
            learning_rate: cfg.learning_rate,
            target_sync_period: cfg.target_sync_period,
            steps: 0,
        }
    }

    pub fn q_net(&self) -> &Mlp {
        &self.q_net
    }

    pub fn target_net(&self) -> &Mlp {
        &self.target_net
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn params(&self) -> &ParamVector {
        self.q_net.params()
    }

    /// Replaces the online network's parameters (e.g. with a received
    /// global model). The target network is left alone until its next sync.
    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.q_net.set_params(params)
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.q_net.forward(state)
    }

    pub fn greedy_action(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?))
    }

    /// Epsilon-greedy. Always draws one uniform and, when exploring, one
    /// action index, so stream consumption depends only on the outcome.
    pub fn select_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<usize> {
        if rng.random::<f64>() < self.epsilon {
            return Ok(rng.random_range(0..self.q_net.output_dim()));
        }
        self.greedy_action(state)
    }

    pub fn td_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        td_targets(batch, &self.target_net, self.gamma)
    }

    /// `q -= lr * grad`, then counts the step and syncs the target net on
    /// period boundaries.
    pub fn apply_gradient(&mut self, grad: &ParamVector) -> Result<()> {
        if self.learning_rate != 0.0 {
            self.q_net.params_mut().add_scaled(-self.learning_rate, grad)?;
        } else if !grad.is_compatible(self.q_net.params()) {
            return Err(Error::LayoutMismatch("DqnAgent::apply_gradient"));
        }
        self.finish_step();
        Ok(())
    }

    pub(crate) fn finish_step(&mut self) {
        self.steps += 1;
        if self.steps.is_multiple_of(self.target_sync_period) {
            self.target_net = self.q_net.clone();
        }
    }

    /// One SGD step on the mean squared TD error of a sampled batch.
    /// Returns `None` without touching the agent when the buffer holds
    /// fewer than `batch_size` transitions.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        let Some(batch) = buffer.sample(batch_size, rng) else {
            return Ok(None);
        };
        let targets = self.td_targets(&batch)?;
        let (loss, grad) = td_loss_grad(&self.q_net, &batch, &targets)?;
        self.apply_gradient(&grad)?;
        Ok(Some(loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerShape;
    use crate::rng::{stream, Purpose};

    fn linear_agent(weights: Vec<f64>, cfg: &DqnConfig) -> DqnAgent {
        let layout = vec![LayerShape { inputs: 2, outputs: 3 }];
        let params = ParamVector::new(weights, layout).unwrap();
        DqnAgent::from_net(Mlp::from_params(&[2, 3], vec![], params).unwrap(), cfg)
    }

    fn t(state: [f64; 2], action: usize, reward: f64, next: [f64; 2], terminal: bool) -> Transition {
        Transition { state: state.to_vec(), action, reward, next_state: next.to_vec(), terminal }
    }

    #[test]
    fn greedy_picks_argmax_and_breaks_ties_low() {
        let cfg = DqnConfig { epsilon_start: 0.0, ..Default::default() };
        // Q = bias only.
        let agent = linear_agent(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.9, 0.3], &cfg);
        let mut rng = stream(0, Purpose::Client, &[]);
        assert_eq!(agent.select_action(&[1.0, 1.0], &mut rng).unwrap(), 1);
        let tied = linear_agent(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.1], &cfg);
        assert_eq!(tied.select_action(&[1.0, 1.0], &mut rng).unwrap(), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let cfg = DqnConfig::default();
        let agent = linear_agent(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.9, 0.3], &cfg);
        assert_eq!(agent.epsilon, 1.0);
        let mut rng = stream(11, Purpose::Client, &[]);
        let draws = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[agent.select_action(&[0.0, 0.0], &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn td_target_arithmetic() {
        let cfg = DqnConfig::default();
        // Q_target(s') = [2, 1, 0] for any s' via biases.
        let target = linear_agent(vec![0.0; 6].into_iter().chain([2.0, 1.0, 0.0]).collect(), &cfg);
        let term = t([0.0, 0.0], 0, 2.0, [1.0, 0.0], true);
        let cont = t([0.0, 0.0], 0, 1.0, [1.0, 0.0], false);
        let net = target.q_net();
        assert_eq!(td_targets(&[&term], net, 0.9).unwrap(), vec![2.0]);
        assert_eq!(td_targets(&[&cont], net, 0.0).unwrap(), vec![1.0]);
        let y = td_targets(&[&cont], net, 0.9).unwrap()[0];
        assert!((y - 2.8).abs() < 1e-12);
        assert!(td_targets(&[], net, 0.9).is_err());
    }

    #[test]
    fn insufficient_buffer_is_a_noop() {
        let cfg = DqnConfig::default();
        let mut rng = stream(2, Purpose::Init, &[]);
        let mut agent = DqnAgent::new(2, &cfg, &mut rng).unwrap();
        let before = agent.clone();
        let mut buf = ReplayBuffer::new(10);
        buf.push(t([0.0, 1.0], 1, 1.0, [1.0, 0.0], false));
        assert_eq!(agent.train_step(&buf, 4, &mut rng).unwrap(), None);
        assert_eq!(agent, before);
    }

    #[test]
    fn zero_learning_rate_keeps_params_but_reports_loss() {
        let cfg = DqnConfig { learning_rate: 0.0, ..Default::default() };
        let mut rng = stream(3, Purpose::Init, &[]);
        let mut agent = DqnAgent::new(2, &cfg, &mut rng).unwrap();
        let before = agent.params().clone();
        let mut buf = ReplayBuffer::new(10);
        for a in 0..3 {
            buf.push(t([1.0, 0.0], a, 1.0, [0.0, 1.0], false));
        }
        let loss = agent.train_step(&buf, 3, &mut rng).unwrap().unwrap();
        assert!(loss > 0.0);
        assert_eq!(agent.params(), &before);
    }

    #[test]
    fn perfect_fit_gives_zero_loss_and_gradient() {
        let cfg = DqnConfig::default();
        // Q(s, a) = 0.5 everywhere; terminal rewards of 0.5 match exactly.
        let agent = linear_agent(vec![0.0; 6].into_iter().chain([0.5; 3]).collect(), &cfg);
        let batch_owned: Vec<Transition> = (0..3).map(|a| t([1.0, 2.0], a, 0.5, [0.0, 0.0], true)).collect();
        let batch: Vec<&Transition> = batch_owned.iter().collect();
        let targets = agent.td_targets(&batch).unwrap();
        let (loss, grad) = td_loss_grad(agent.q_net(), &batch, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.values().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn target_net_only_changes_at_sync_points() {
        let cfg = DqnConfig { target_sync_period: 5, learning_rate: 0.1, ..Default::default() };
        let mut rng = stream(4, Purpose::Init, &[]);
        let mut agent = DqnAgent::new(2, &cfg, &mut rng).unwrap();
        let mut buf = ReplayBuffer::new(16);
        for a in 0..3 {
            buf.push(t([1.0, 0.0], a, a as f64, [0.0, 1.0], false));
            buf.push(t([0.0, 1.0], a, 1.0, [1.0, 0.0], false));
        }
        let mut last_target = agent.target_net().clone();
        for step in 1..=20u64 {
            agent.train_step(&buf, 4, &mut rng).unwrap().unwrap();
            if step % 5 == 0 {
                assert_eq!(agent.target_net(), agent.q_net());
                last_target = agent.target_net().clone();
            } else {
                assert_eq!(agent.target_net(), &last_target);
                assert_ne!(agent.target_net(), agent.q_net());
            }
        }
    }

    #[test]
    fn replay_ring_and_recent() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(t([i as f64, 0.0], 0, i as f64, [0.0, 0.0], false));
        }
        assert_eq!(buf.len(), 3);
        let recent: Vec<f64> = buf.recent(2).iter().map(|t| t.reward).collect();
        assert_eq!(recent, vec![3.0, 4.0]);
        let all: Vec<f64> = buf.recent(10).iter().map(|t| t.reward).collect();
        assert_eq!(all, vec![2.0, 3.0, 4.0]);
        let mut rng = stream(5, Purpose::Client, &[]);
        let s = buf.sample(3, &mut rng).unwrap();
        let mut r: Vec<f64> = s.iter().map(|t| t.reward).collect();
        r.sort_by(f64::total_cmp);
        assert_eq!(r, vec![2.0, 3.0, 4.0]);
        assert!(buf.sample(4, &mut rng).is_none());
    }

    #[test]
    fn epsilon_schedule_is_linear_then_flat() {
        let s = EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 100 };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(50) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(100), 0.05);
        assert_eq!(s.value(1000), 0.05);
    }
}
