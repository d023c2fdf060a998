use rand::SeedableRng;
use v2xslice::agent::AgentCheckpoint;
use v2xslice::engine::{self, evaluate, new_agent, train_agent};
use v2xslice::nn::{self, LstmState, NetParams, NetSpec};
use v2xslice::rng::SimRng;
use v2xslice::selftest::{gradient_check, toy_mdp_check};
use v2xslice::{Agent, Controller, SimConfig};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Writes each named block from a row-major table.
fn set_block(p: &mut NetParams, name: &str, rows: &[&[f64]]) {
    let layout = p.spec.layout();
    let b = layout.block(name);
    assert_eq!(rows.len(), b.rows);
    for (r, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), b.cols);
        for (c, v) in row.iter().enumerate() {
            p.values[b.offset + r * b.cols + c] = *v;
        }
    }
}

#[test]
fn two_unit_lstm_matches_hand_computation() {
    let spec = NetSpec {
        input_dim: 1,
        lstm_units: 2,
        hidden_units: 1,
        output_dim: 1,
    };
    let mut p = NetParams::zeros(spec);
    // Rows: i0 i1 f0 f1 g0 g1 o0 o1.
    let w = [0.5, -0.3, 0.2, 0.1, 0.9, -0.7, 0.4, 0.6];
    let u = [[0.1, 0.2], [0.0, -0.1], [0.3, 0.0], [0.05, 0.05], [-0.2, 0.4], [0.6, 0.1], [0.0, 0.3], [-0.4, 0.2]];
    let b = [0.0, 0.1, 1.0, 1.0, -0.1, 0.2, 0.05, 0.0];
    let w_rows: Vec<[f64; 1]> = w.iter().map(|&v| [v]).collect();
    let b_rows: Vec<[f64; 1]> = b.iter().map(|&v| [v]).collect();
    set_block(&mut p, "lstm_w", &w_rows.iter().map(|r| &r[..]).collect::<Vec<_>>());
    set_block(&mut p, "lstm_u", &u.iter().map(|r| &r[..]).collect::<Vec<_>>());
    set_block(&mut p, "lstm_b", &b_rows.iter().map(|r| &r[..]).collect::<Vec<_>>());
    set_block(&mut p, "hidden_w", &[&[1.5, -2.0]]);
    set_block(&mut p, "hidden_b", &[&[0.25]]);
    set_block(&mut p, "out_w", &[&[-0.8]]);
    set_block(&mut p, "out_b", &[&[0.3]]);

    let xs = [1.0, -0.5, 2.0];
    let (mut h, mut c) = ([0.0f64; 2], [0.0f64; 2]);
    for &x in &xs {
        let pre = |r: usize| w[r] * x + u[r][0] * h[0] + u[r][1] * h[1] + b[r];
        let mut nh = [0.0; 2];
        for k in 0..2 {
            let i = sig(pre(k));
            let f = sig(pre(2 + k));
            let g = pre(4 + k).tanh();
            let o = sig(pre(6 + k));
            c[k] = f * c[k] + i * g;
            nh[k] = o * c[k].tanh();
        }
        h = nh;
    }
    let hidden = 1.5 * h[0].max(0.0) - 2.0 * h[1].max(0.0) + 0.25;
    let expected = -0.8 * hidden + 0.3;

    let seq: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let (q, state) = nn::predict(&p, &seq, &LstmState::zeros(2)).unwrap();
    assert!((q[0] - expected).abs() < 1e-12, "{} vs {expected}", q[0]);
    assert!((state.hidden[0] - h[0]).abs() < 1e-12);
    assert!((state.cell[1] - c[1]).abs() < 1e-12);
}

#[test]
fn finite_differences_agree_with_backprop() {
    for seed in 0..5 {
        let r = gradient_check(seed, 1e-5).unwrap();
        assert!(r.passed(1e-4), "seed {seed}: {}", r.max_rel_error);
    }
}

#[test]
fn toy_mdp_policy_matches_value_iteration() {
    for seed in [1, 2, 3] {
        let r = toy_mdp_check(seed, 20_000, 0.05).unwrap();
        assert!(r.passed(0.05), "seed {seed}: {r:?}");
    }
}

fn small_training_cfg() -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.seed = 11;
    cfg.fleet.safety_pairs = 4;
    cfg.fleet.autonomous_pairs = 4;
    cfg.run.cycle_ttis = 20;
    cfg.run.cycles_per_episode = 100;
    cfg.run.eval_cycles = 10;
    cfg.run.eval_runs = 2;
    cfg.agent.lstm_units = 16;
    cfg.agent.hidden_units = 8;
    cfg.agent.warmup_transitions = 100;
    cfg.agent.eps_decay_cycles = 300;
    cfg.agent.target_sync_every = 50;
    cfg
}

#[test]
fn training_improves_revenue() {
    let cfg = small_training_cfg();
    let mut agent = new_agent(&cfg);
    let log = train_agent(&cfg, &mut agent, 6).unwrap();
    assert_eq!(log.len(), 600);
    assert!(log.iter().filter_map(|r| r.loss).all(f64::is_finite));
    let mean = |rows: &[engine::TrainLogRow]| rows.iter().map(|r| r.revenue).sum::<f64>() / rows.len() as f64;
    let first = mean(&log[..100]);
    let last = mean(&log[log.len() - 100..]);
    assert!(last >= first, "first {first}, last {last}");
}

#[test]
fn training_is_reproducible() {
    let mut cfg = small_training_cfg();
    cfg.run.cycles_per_episode = 30;
    let run = || {
        let mut agent = new_agent(&cfg);
        let log = train_agent(&cfg, &mut agent, 2).unwrap();
        (engine::train_log_csv(&log), agent.online.values)
    };
    assert_eq!(run(), run());
}

#[test]
fn reloaded_checkpoint_evaluates_identically() {
    let mut cfg = small_training_cfg();
    cfg.run.cycles_per_episode = 30;
    let mut agent = new_agent(&cfg);
    train_agent(&cfg, &mut agent, 2).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    agent.checkpoint().save(&path).unwrap();
    let restored = Agent::from_checkpoint(AgentCheckpoint::load(&path).unwrap()).unwrap();
    assert_eq!(restored.online.values, agent.online.values);
    assert_eq!(restored.cycle, agent.cycle);

    cfg.controller = Controller::Drl;
    let a = evaluate(&cfg, Some(&agent)).unwrap();
    // Zero further training steps.
    let mut resumed = restored.clone();
    train_agent(&cfg, &mut resumed, 0).unwrap();
    let b = evaluate(&cfg, Some(&resumed)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn wrong_sized_checkpoint_is_rejected() {
    let mut cfg = small_training_cfg();
    cfg.controller = Controller::Drl;
    let mut rng = SimRng::seed_from_u64(0);
    let agent = Agent::new(cfg.agent, 5, 81, &mut rng);
    assert!(evaluate(&cfg, Some(&agent)).is_err());
}
