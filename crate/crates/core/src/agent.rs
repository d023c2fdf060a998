//! The slicing controller as a recurrent deep Q-learner: action codec,
//! epsilon-greedy policy, sequence replay and Bellman-target training
//! against a periodically synchronised target network.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, AdamConfig, AdamState, LstmState, NetCheckpoint, NetParams, NetSpec};
use crate::rng::SimRng;
use crate::scheduler::{SchedulerKind, SlicePartition, RB_STEP, TOTAL_RBS};
use crate::slice::SliceId;

/// 9 partitions x 3 safety schedulers x 3 autonomous schedulers.
pub const ACTION_COUNT: usize = 81;
const PARTITIONS: usize = 9;

/// RB partition plus per-slice scheduler choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlicingAction {
    pub partition: SlicePartition,
    pub sched_safety: SchedulerKind,
    pub sched_autonomous: SchedulerKind,
}

impl SlicingAction {
    /// Decodes `index = (k - 1) * 9 + s1 * 3 + s2`, where safety gets `5k`
    /// RBs and `s1`, `s2` pick the safety and autonomous schedulers.
    pub fn from_index(index: usize) -> Result<Self> {
        if index >= ACTION_COUNT {
            return Err(Error::Contract(format!(
                "action index {index} outside [0, {ACTION_COUNT})"
            )));
        }
        let k = (index / PARTITIONS) as u32 + 1;
        let s1 = (index % PARTITIONS) / 3;
        let s2 = index % 3;
        Ok(SlicingAction {
            partition: SlicePartition::new(RB_STEP * k, TOTAL_RBS - RB_STEP * k)?,
            sched_safety: SchedulerKind::ALL[s1],
            sched_autonomous: SchedulerKind::ALL[s2],
        })
    }

    pub fn index(&self) -> usize {
        let k = (self.partition.rbs_safety / RB_STEP) as usize;
        (k - 1) * PARTITIONS + self.sched_safety.index() * 3 + self.sched_autonomous.index()
    }

    pub fn scheduler(&self, slice: SliceId) -> SchedulerKind {
        match slice {
            SliceId::Safety => self.sched_safety,
            SliceId::Autonomous => self.sched_autonomous,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentHyper {
    pub discount: f64,
    pub lr: f64,
    pub batch: usize,
    pub window_len: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_cycles: u64,
    pub target_sync_every: u64,
    pub warmup_transitions: usize,
    pub replay_capacity: usize,
    pub lstm_units: usize,
    pub hidden_units: usize,
    pub adam: AdamConfig,
}

impl Default for AgentHyper {
    fn default() -> Self {
        AgentHyper {
            discount: 0.9,
            lr: 1e-3,
            batch: 16,
            window_len: 8,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_cycles: 2000,
            target_sync_every: 100,
            warmup_transitions: 500,
            replay_capacity: 10_000,
            lstm_units: 128,
            hidden_units: 24,
            adam: AdamConfig::default(),
        }
    }
}

impl AgentHyper {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Config("agent.discount must be in [0, 1)".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("agent.lr must be > 0".into()));
        }
        for (name, v) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("agent.{name} must be in [0, 1]")));
            }
        }
        let counts = [
            ("batch", self.batch),
            ("window_len", self.window_len),
            ("replay_capacity", self.replay_capacity),
            ("lstm_units", self.lstm_units),
            ("hidden_units", self.hidden_units),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("agent.{name} must be >= 1")));
            }
        }
        if self.target_sync_every == 0 {
            return Err(Error::Config("agent.target_sync_every must be >= 1".into()));
        }
        if self.replay_capacity < self.window_len {
            return Err(Error::Config(
                "agent.replay_capacity must hold at least one window".into(),
            ));
        }
        Ok(())
    }

    pub fn net_spec(&self, input_dim: usize, output_dim: usize) -> NetSpec {
        NetSpec {
            input_dim,
            lstm_units: self.lstm_units,
            hidden_units: self.hidden_units,
            output_dim,
        }
    }
}

/// Linear decay from `eps_start` to `eps_end` over `eps_decay_cycles`.
pub fn epsilon_at(cycle: u64, hyper: &AgentHyper) -> f64 {
    if hyper.eps_decay_cycles == 0 || cycle >= hyper.eps_decay_cycles {
        return hyper.eps_end;
    }
    let frac = cycle as f64 / hyper.eps_decay_cycles as f64;
    hyper.eps_start + (hyper.eps_end - hyper.eps_start) * frac
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice over `q.len()` actions.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], eps: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    if u < eps {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub snapshot: Vec<f64>,
    pub action: usize,
    pub revenue: f64,
    pub next_snapshot: Vec<f64>,
    /// First transition of an episode; windows never reach across one.
    pub episode_start: bool,
}

/// Ring buffer of transitions in the order they happened.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    fn is_valid_start(&self, start: usize, len: usize) -> bool {
        start + len <= self.items.len()
            && (start + 1..start + len).all(|i| !self.items[i].episode_start)
    }

    /// Start index of a uniformly chosen window of `len` consecutive
    /// transitions from a single episode.
    pub fn sample_window<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Option<usize> {
        if len == 0 || self.items.len() < len {
            return None;
        }
        let starts = self.items.len() - len + 1;
        for _ in 0..64 {
            let s = rng.random_range(0..starts);
            if self.is_valid_start(s, len) {
                return Some(s);
            }
        }
        let valid: Vec<usize> = (0..starts).filter(|&s| self.is_valid_start(s, len)).collect();
        if valid.is_empty() {
            None
        } else {
            Some(valid[rng.random_range(0..valid.len())])
        }
    }

    pub fn window(&self, start: usize, len: usize) -> impl Iterator<Item = &Transition> {
        self.items.range(start..start + len)
    }
}

/// Loss and gradient of one window, relative to a batch of size `batch`.
fn window_gradient(
    buffer: &ReplayBuffer,
    start: usize,
    online: &NetParams,
    target: &NetParams,
    hyper: &AgentHyper,
    batch: usize,
) -> Result<(f64, Vec<f64>)> {
    let items: Vec<&Transition> = buffer.window(start, hyper.window_len).collect();
    let states: Vec<&[f64]> = items.iter().map(|t| t.snapshot.as_slice()).collect();
    let nexts: Vec<&[f64]> = items.iter().map(|t| t.next_snapshot.as_slice()).collect();
    let last = items.last().expect("non-empty window");
    let zero = LstmState::zeros(online.spec.lstm_units);

    let (q, _, tape) = nn::forward(online, &states, &zero)?;
    let (q_next, _) = nn::predict(target, &nexts, &zero)?;
    let max_next = q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y = last.revenue + hyper.discount * max_next;
    let td = q[last.action] - y;

    let mut d_q = vec![0.0; q.len()];
    d_q[last.action] = 2.0 * td / batch as f64;
    Ok((td * td / batch as f64, nn::backward(online, &tape, &d_q)))
}

/// One gradient step on the mean squared Bellman error of `batch` windows.
///
/// Returns `None` when the buffer is still below the warm-up size or holds
/// no complete window.
pub fn train_step(
    buffer: &ReplayBuffer,
    online: &mut NetParams,
    opt: &mut AdamState,
    target: &NetParams,
    hyper: &AgentHyper,
    rng: &mut SimRng,
) -> Result<Option<f64>> {
    if buffer.len() < hyper.warmup_transitions.max(hyper.window_len) {
        return Ok(None);
    }
    let mut starts = Vec::with_capacity(hyper.batch);
    for _ in 0..hyper.batch {
        match buffer.sample_window(hyper.window_len, rng) {
            Some(s) => starts.push(s),
            None => return Ok(None),
        }
    }
    let online_ref: &NetParams = online;
    let parts: Vec<Result<(f64, Vec<f64>)>> = starts
        .par_iter()
        .map(|&s| window_gradient(buffer, s, online_ref, target, hyper, hyper.batch))
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; online.values.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    nn::optimizer_step(&mut online.values, &grad, opt, hyper.lr, &hyper.adam);
    Ok(Some(loss))
}

/// Hard copy of the online network.
pub fn sync_target(online: &NetParams) -> NetParams {
    online.clone()
}

/// Online and target networks, optimiser, replay and acting state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub hyper: AgentHyper,
    pub online: NetParams,
    pub target: NetParams,
    pub opt: AdamState,
    pub buffer: ReplayBuffer,
    /// Gradient updates performed so far.
    pub updates: u64,
    /// Controller cycles acted so far.
    pub cycle: u64,
    acting: LstmState,
}

impl Agent {
    pub fn new(hyper: AgentHyper, input_dim: usize, action_count: usize, rng: &mut SimRng) -> Self {
        let online = nn::init_params(hyper.net_spec(input_dim, action_count), rng);
        Agent::from_params(hyper, online)
    }

    pub fn from_params(hyper: AgentHyper, online: NetParams) -> Self {
        let n = online.values.len();
        let units = online.spec.lstm_units;
        Agent {
            hyper,
            target: online.clone(),
            online,
            opt: AdamState::new(n),
            buffer: ReplayBuffer::new(hyper.replay_capacity),
            updates: 0,
            cycle: 0,
            acting: LstmState::zeros(units),
        }
    }

    /// Clears the recurrent state carried between cycles.
    pub fn begin_episode(&mut self) {
        self.acting = LstmState::zeros(self.online.spec.lstm_units);
    }

    /// Feeds one snapshot through the online network, advancing the acting
    /// state, and returns the Q-values.
    pub fn observe(&mut self, snapshot: &[f64]) -> Result<Vec<f64>> {
        let (q, state) = nn::predict(&self.online, &[snapshot], &self.acting)?;
        self.acting = state;
        Ok(q)
    }

    pub fn act(&mut self, snapshot: &[f64], eps: f64, rng: &mut SimRng) -> Result<usize> {
        let q = self.observe(snapshot)?;
        Ok(select_action(&q, eps, rng))
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// One training step plus the periodic target sync.
    pub fn learn(&mut self, rng: &mut SimRng) -> Result<Option<f64>> {
        let loss = train_step(
            &self.buffer,
            &mut self.online,
            &mut self.opt,
            &self.target,
            &self.hyper,
            rng,
        )?;
        if loss.is_some() {
            self.updates += 1;
            if self.updates % self.hyper.target_sync_every == 0 {
                self.target = sync_target(&self.online);
            }
        }
        Ok(loss)
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            net: NetCheckpoint::from_params(&self.online),
            hyper: self.hyper,
            cycle: self.cycle,
            epsilon: epsilon_at(self.cycle, &self.hyper),
            updates: self.updates,
        }
    }

    pub fn from_checkpoint(ck: AgentCheckpoint) -> Result<Self> {
        let online = ck.net.into_params()?;
        let mut a = Agent::from_params(ck.hyper, online);
        a.cycle = ck.cycle;
        a.updates = ck.updates;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentCheckpoint {
    pub net: NetCheckpoint,
    pub hyper: AgentHyper,
    pub cycle: u64,
    pub epsilon: f64,
    pub updates: u64,
}

impl AgentCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).expect("serializable");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })
    }
}
