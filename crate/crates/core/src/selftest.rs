//! Built-in correctness checks for the learning stack, run by `selftest`.

use rand::{Rng, SeedableRng};

use crate::agent::{argmax, sync_target, train_step, AgentHyper, ReplayBuffer, Transition};
use crate::error::Result;
use crate::nn::{self, AdamState, LstmState, NetSpec};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub params: usize,
    pub max_rel_error: f64,
}

impl GradientReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Relative error with a small floor so exact zeros compare cleanly.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central finite differences against backpropagation on a 3/4/3/2 network
/// unrolled over three steps, for the loss `sum_k c_k q_k`.
pub fn gradient_check(seed: u64, eps: f64) -> Result<GradientReport> {
    let spec = NetSpec {
        input_dim: 3,
        lstm_units: 4,
        hidden_units: 3,
        output_dim: 2,
    };
    let mut rng = SimRng::seed_from_u64(seed);
    let mut params = nn::init_params(spec, &mut rng);
    // Non-zero biases so no ReLU sits exactly at its kink.
    for v in params.values.iter_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    let seq: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let initial = LstmState {
        hidden: (0..4).map(|_| rng.random_range(-0.5..0.5)).collect(),
        cell: (0..4).map(|_| rng.random_range(-0.5..0.5)).collect(),
    };
    let coef: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |p: &nn::NetParams| -> Result<f64> {
        let (q, _) = nn::predict(p, &seq, &initial)?;
        Ok(q.iter().zip(&coef).map(|(a, b)| a * b).sum())
    };

    let (_, _, tape) = nn::forward(&params, &seq, &initial)?;
    let analytic = nn::backward(&params, &tape, &coef);

    let mut worst: f64 = 0.0;
    for i in 0..params.values.len() {
        let orig = params.values[i];
        params.values[i] = orig + eps;
        let plus = loss(&params)?;
        params.values[i] = orig - eps;
        let minus = loss(&params)?;
        params.values[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(rel_error(analytic[i], numeric));
    }
    Ok(GradientReport {
        params: params.values.len(),
        max_rel_error: worst,
    })
}

/// A deterministic 3-state, 2-action MDP. Action 0 stays, action 1 moves to
/// the next state cyclically.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMdp {
    pub rewards: [[f64; 2]; 3],
    pub discount: f64,
}

impl Default for ToyMdp {
    fn default() -> Self {
        ToyMdp {
            rewards: [[0.0, 0.1], [0.2, 0.0], [0.0, 0.5]],
            discount: 0.9,
        }
    }
}

impl ToyMdp {
    pub fn next(&self, s: usize, a: usize) -> usize {
        if a == 0 {
            s
        } else {
            (s + 1) % 3
        }
    }

    /// Optimal action values by value iteration to machine precision.
    pub fn q_star(&self) -> [[f64; 2]; 3] {
        let mut v = [0.0; 3];
        let mut q = [[0.0; 2]; 3];
        for _ in 0..10_000 {
            let mut delta: f64 = 0.0;
            for s in 0..3 {
                for a in 0..2 {
                    q[s][a] = self.rewards[s][a] + self.discount * v[self.next(s, a)];
                }
            }
            for s in 0..3 {
                let nv = q[s][0].max(q[s][1]);
                delta = delta.max((nv - v[s]).abs());
                v[s] = nv;
            }
            if delta < 1e-15 {
                break;
            }
        }
        q
    }
}

fn one_hot(s: usize) -> Vec<f64> {
    let mut v = vec![0.0; 3];
    v[s] = 1.0;
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyMdpReport {
    pub q_star: [[f64; 2]; 3],
    pub q_learned: [[f64; 2]; 3],
    pub max_q_error: f64,
    pub policy_matches: bool,
    /// Training steps taken before both conditions held, or the budget.
    pub steps: usize,
}

impl ToyMdpReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.policy_matches && self.max_q_error < tol
    }
}

/// Trains a small recurrent Q-network with `train_step` on replayed random
/// transitions of [`ToyMdp`] and compares it with value iteration. Stops as
/// soon as the greedy policy matches and every Q-value is within `tol`.
pub fn toy_mdp_check(seed: u64, max_steps: usize, tol: f64) -> Result<ToyMdpReport> {
    let mdp = ToyMdp::default();
    let q_star = mdp.q_star();
    let hyper = AgentHyper {
        discount: mdp.discount,
        window_len: 1,
        warmup_transitions: 100,
        lstm_units: 8,
        hidden_units: 8,
        ..AgentHyper::default()
    };
    let mut rng = SimRng::seed_from_u64(seed);
    let mut online = nn::init_params(hyper.net_spec(3, 2), &mut rng);
    let mut target = sync_target(&online);
    let mut opt = AdamState::new(online.values.len());

    let mut buffer = ReplayBuffer::new(hyper.replay_capacity);
    let mut s = 0;
    for _ in 0..2000 {
        let a = rng.random_range(0..2);
        let n = mdp.next(s, a);
        buffer.push(Transition {
            snapshot: one_hot(s),
            action: a,
            revenue: mdp.rewards[s][a],
            next_snapshot: one_hot(n),
            episode_start: false,
        });
        // Random restarts keep every state well represented.
        s = if rng.random::<f64>() < 0.1 { rng.random_range(0..3) } else { n };
    }

    let evaluate = |p: &nn::NetParams| -> Result<[[f64; 2]; 3]> {
        let mut q = [[0.0; 2]; 3];
        for (s, row) in q.iter_mut().enumerate() {
            let (v, _) = nn::predict(p, &[one_hot(s)], &LstmState::zeros(hyper.lstm_units))?;
            row.copy_from_slice(&v);
        }
        Ok(q)
    };
    let compare = |q: &[[f64; 2]; 3]| {
        let mut err: f64 = 0.0;
        let mut matches = true;
        for s in 0..3 {
            for a in 0..2 {
                err = err.max((q[s][a] - q_star[s][a]).abs());
            }
            matches &= argmax(&q[s]) == argmax(&q_star[s]);
        }
        (err, matches)
    };

    let mut steps = 0;
    while steps < max_steps {
        train_step(&buffer, &mut online, &mut opt, &target, &hyper, &mut rng)?;
        steps += 1;
        if steps as u64 % hyper.target_sync_every == 0 {
            target = sync_target(&online);
            let (err, matches) = compare(&evaluate(&online)?);
            if matches && err < tol {
                break;
            }
        }
    }
    let q_learned = evaluate(&online)?;
    let (max_q_error, policy_matches) = compare(&q_learned);
    Ok(ToyMdpReport {
        q_star,
        q_learned,
        max_q_error,
        policy_matches,
        steps,
    })
}
