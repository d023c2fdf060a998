//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs the full-scale DRL versus baseline comparison, so
//! expect roughly a quarter of an hour on a single core.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use v2xslice::channel::{self, bler_prob, pathloss_db, ChannelParams};
use v2xslice::engine::{self, Evaluation, World};
use v2xslice::rng::{self as streams, Phase, Stream};
use v2xslice::selftest::{gradient_check, toy_mdp_check};
use v2xslice::traffic::{generate_arrivals, LinkSource, TrafficConfig};
use v2xslice::{Controller, SimConfig, SliceId, SlicingAction, ACTION_COUNT};

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn run(v: Verdict, all: &mut Vec<Verdict>) {
    println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    all.push(v);
}

fn gradient() -> Verdict {
    let t = Instant::now();
    let r = gradient_check(1, 1e-5).expect("gradient check runs");
    let secs = t.elapsed().as_secs_f64();
    Verdict {
        name: "gradient check",
        pass: r.max_rel_error < 1e-4 && secs < 10.0,
        detail: format!("max relative error {:.3e} (< 1e-4) over {} parameters, {secs:.2} s (< 10 s)", r.max_rel_error, r.params),
    }
}

fn toy_mdp() -> Verdict {
    let t = Instant::now();
    let r = toy_mdp_check(1, 20_000, 0.05).expect("toy MDP runs");
    let secs = t.elapsed().as_secs_f64();
    Verdict {
        name: "toy MDP oracle",
        pass: r.policy_matches && r.max_q_error < 0.05 && r.steps <= 20_000 && secs < 60.0,
        detail: format!(
            "policy {}, max Q error {:.4} (< 0.05) after {} steps (<= 20000), {secs:.2} s (< 60 s)",
            if r.policy_matches { "matches" } else { "differs" },
            r.max_q_error,
            r.steps
        ),
    }
}

fn traffic() -> Verdict {
    const TTIS: u64 = 1_000_000;
    const LINKS: usize = 20;
    let cfg = TrafficConfig::default();
    let mut next_id = 0;

    let (mut packets, mut bits) = (0u64, 0u64);
    for l in 0..LINKS {
        let src = LinkSource {
            link_id: l,
            slice: SliceId::Safety,
            phase: 0,
        };
        let mut rng = streams::stream(2024, Phase::Eval, Stream::Traffic, l as u64);
        for tti in 0..TTIS {
            for p in generate_arrivals(&cfg, &src, tti, &mut next_id, &mut rng) {
                packets += 1;
                bits += p.size_bits;
            }
        }
    }
    let rate = packets as f64 / (LINKS as u64 * TTIS) as f64;
    let mean = bits as f64 / packets as f64;
    let rate_ok = (rate / 0.02 - 1.0).abs() <= 0.01;
    let mean_ok = (mean / 6400.0 - 1.0).abs() <= 0.01;

    // Every one-second window of every phase holds exactly 100 packets.
    let mut per_second_ok = true;
    let mut rng = streams::stream(2024, Phase::Eval, Stream::Traffic, 99);
    for phase in 0..10 {
        let src = LinkSource {
            link_id: 0,
            slice: SliceId::Autonomous,
            phase,
        };
        let mut count = 0;
        for tti in 0..TTIS {
            count += generate_arrivals(&cfg, &src, tti, &mut next_id, &mut rng).len();
            if (tti + 1) % 1000 == 0 {
                per_second_ok &= count == 100;
                count = 0;
            }
        }
    }
    Verdict {
        name: "traffic statistics",
        pass: rate_ok && mean_ok && per_second_ok,
        detail: format!(
            "safety rate {rate:.5} pkt/ms (0.02 +/- 1%), mean size {mean:.1} bits (6400 +/- 1%), autonomous {} packets/s/link",
            if per_second_ok { "exactly 100" } else { "NOT 100" }
        ),
    }
}

fn channel_fixture() -> Verdict {
    // 22.7 log10(100) + 41 + 20 log10(2/5)
    let oracle = 22.7 * 2.0 + 41.0 + 20.0 * (0.4f64).log10();
    let pl = pathloss_db(true, 100.0, 0.0, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1_000_000;
    let mean = (0..n).map(|_| channel::fading_sample(&mut rng)).sum::<f64>() / n as f64;
    let bler = bler_prob(5.0, &ChannelParams::default());
    Verdict {
        name: "channel fixture",
        pass: (pl - 78.44).abs() <= 0.01 && (pl - oracle).abs() < 1e-9 && (mean - 1.0).abs() <= 0.01 && bler == 0.5,
        detail: format!("pathloss {pl:.4} dB (78.44 +/- 0.01), fading mean {mean:.5} (1 +/- 0.01), BLER(5 dB) = {bler}"),
    }
}

fn fuzzed_config(rng: &mut ChaCha8Rng, k: u64) -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.seed = 1000 + k;
    cfg.fleet.safety_pairs = rng.random_range(1..=30);
    cfg.fleet.autonomous_pairs = rng.random_range(1..=30);
    cfg.traffic.safety_rate_per_tti = rng.random_range(0.001..0.3);
    cfg.traffic.safety_mean_bits = rng.random_range(500.0..30_000.0);
    cfg.traffic.autonomous_bits = rng.random_range(1_000..60_000);
    cfg.traffic.autonomous_period_tti = rng.random_range(1..=20);
    cfg.traffic.autonomous_latency_ms = rng.random_range(1..=20);
    cfg.traffic.safety_latency_ms = rng.random_range(5..=200);
    cfg.channel.tx_power_dbm = rng.random_range(-20.0..23.0);
    cfg.run.cycle_ttis = rng.random_range(10..=200);
    cfg
}

fn conservation() -> Verdict {
    const TTIS: u64 = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut failures = Vec::new();
    let mut max_rbs = 0;
    for k in 0..20 {
        let cfg = fuzzed_config(&mut rng, k);
        let mut world = World::new(&cfg, cfg.seed, Phase::Train, k).expect("fuzzed config is valid");
        let mut action = SlicingAction::from_index(0).unwrap();
        let mut arrived = 0u64;
        for tti in 0..TTIS {
            if tti % cfg.run.cycle_ttis == 0 {
                action = SlicingAction::from_index(rng.random_range(0..ACTION_COUNT)).unwrap();
            }
            let r = world.run_tti(&action);
            arrived += r.arrived.iter().sum::<u64>();
            max_rbs = max_rbs.max(r.rbs_total());
            let mut ok = r.rbs_total() <= 50 && r.grants.iter().sum::<u32>() == r.rbs_total();
            for s in SliceId::ALL {
                let granted: u32 = world.slice_links(s).iter().map(|&l| r.grants[l]).sum();
                ok &= granted == r.rbs_per_slice[s.index()] && granted <= action.partition.rbs(s);
            }
            if !ok {
                failures.push(format!("config {k} tti {tti}: grants {:?}", r.rbs_per_slice));
                break;
            }
        }
        if let Err(e) = world.audit() {
            failures.push(format!("config {k}: {e}"));
        }
        let counted: u64 = world.queues.iter().map(|q| q.arrived).sum();
        if counted != arrived {
            failures.push(format!("config {k}: {arrived} arrivals reported, {counted} counted"));
        }
    }
    Verdict {
        name: "conservation suite",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("20 fuzzed configs x {TTIS} TTIs, at most {max_rbs} RBs per TTI, all audits clean")
        } else {
            failures.join("; ")
        },
    }
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_v2xslice"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism(work: &Path) -> Verdict {
    let mut cfg = SimConfig::default();
    cfg.run.train_episodes = 2;
    cfg.run.cycles_per_episode = 40;
    cfg.run.eval_cycles = 20;
    cfg.agent.warmup_transitions = 40;
    let config = work.join("small.json");
    fs::write(&config, cfg.to_json_pretty()).unwrap();
    let c = config.to_str().unwrap();
    let train = work.join("train");
    let ckpt = train.join("checkpoint.json");
    let (a, b) = (work.join("eval_a"), work.join("eval_b"));
    let ran = cli(&["train", "--config", c, "--out", train.to_str().unwrap(), "--seed", "3"])
        && cli(&["evaluate", "--config", c, "--checkpoint", ckpt.to_str().unwrap(), "--out", a.to_str().unwrap(), "--seed", "3"])
        && cli(&["evaluate", "--config", c, "--checkpoint", ckpt.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "3"]);
    let mut same = Vec::new();
    for f in ["packets.csv", "joint_pdf.csv", "summary.json"] {
        let x = fs::read(a.join(f)).unwrap_or_default();
        let y = fs::read(b.join(f)).unwrap_or_default();
        same.push((f, !x.is_empty() && x == y));
    }
    Verdict {
        name: "determinism",
        pass: ran && same.iter().all(|(_, s)| *s),
        detail: format!(
            "two `evaluate` runs from one checkpoint: {}",
            same.iter()
                .map(|(f, s)| format!("{f} {}", if *s { "identical" } else { "DIFFERS" }))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

/// Re-integrates an exported `joint_pdf.csv`.
fn csv_integral(path: &Path) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (v[1] - v[0]) * (v[3] - v[2]) * v[4]
        })
        .sum()
}

fn normalization(evals: &[(String, Evaluation)], exported: &Path) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (_, ev) in evals.iter().filter(|(_, e)| !e.pdf.is_empty()) {
        worst = worst.max((ev.pdf.integral() - 1.0).abs());
        checked += 1;
    }
    let file = exported.join("joint_pdf.csv");
    if file.exists() {
        worst = worst.max((csv_integral(&file) - 1.0).abs());
        checked += 1;
    }
    Verdict {
        name: "joint PDF normalization",
        pass: checked > 0 && worst <= 1e-9,
        detail: format!("{checked} non-empty evaluations, max |integral - 1| = {worst:.2e} (<= 1e-9)"),
    }
}

fn headline(evals: &mut Vec<(String, Evaluation)>) -> Verdict {
    let t = Instant::now();
    let mut cfg = SimConfig::default();
    cfg.seed = 1;
    let mut agent = engine::new_agent(&cfg);
    engine::train_agent_with(&cfg, &mut agent, cfg.run.train_episodes, |e, rows| {
        let mean = rows.iter().map(|r| r.revenue).sum::<f64>() / rows.len() as f64;
        eprintln!("  training episode {e}: mean revenue {mean:.4} ({:.0} s)", t.elapsed().as_secs_f64());
    })
    .expect("training runs");
    let trained = t.elapsed().as_secs_f64();

    cfg.controller = Controller::Drl;
    let drl = engine::evaluate(&cfg, Some(&agent)).expect("drl evaluation");
    cfg.controller = Controller::Baseline;
    let base = engine::evaluate(&cfg, None).expect("baseline evaluation");
    let secs = t.elapsed().as_secs_f64();

    let runs = drl.summary.runs.len() as f64;
    let gain = |f: fn(&v2xslice::metrics::RunSummary) -> f64| {
        drl.summary
            .runs
            .iter()
            .zip(&base.summary.runs)
            .map(|(d, b)| f(d) - f(b))
            .sum::<f64>()
            / runs
    };
    let safety = gain(|r| r.safety_delivered_ratio);
    let autonomous = gain(|r| r.autonomous_delivered_ratio);
    let revenue = gain(|r| r.mean_revenue);
    let pass = safety >= 0.03 && autonomous >= 0.03 && revenue > 0.0 && secs < 1800.0;
    let detail = format!(
        "DRL minus baseline over {runs} held-out seeds: safety {:+.2} pp (>= +3), autonomous {:+.2} pp (>= +3), revenue {:+.4} (> 0); \
         DRL safety {:.4} / autonomous {:.4}, baseline safety {:.4} / autonomous {:.4}; training {trained:.0} s, total {secs:.0} s (< 1800 s)",
        100.0 * safety,
        100.0 * autonomous,
        revenue,
        drl.summary.safety.delivered_ratio,
        drl.summary.autonomous.delivered_ratio,
        base.summary.safety.delivered_ratio,
        base.summary.autonomous.delivered_ratio,
    );
    evals.push(("drl".into(), drl));
    evals.push(("baseline".into(), base));
    Verdict {
        name: "DRL beats service-demand baseline",
        pass,
        detail,
    }
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temp dir");
    let mut verdicts = Vec::new();
    run(gradient(), &mut verdicts);
    run(toy_mdp(), &mut verdicts);
    run(traffic(), &mut verdicts);
    run(channel_fixture(), &mut verdicts);
    run(conservation(), &mut verdicts);
    run(determinism(work.path()), &mut verdicts);

    let mut evals = Vec::new();
    for c in [Controller::Baseline, Controller::Fixed(0), Controller::Fixed(40), Controller::Fixed(80)] {
        let mut cfg = SimConfig::default();
        cfg.controller = c;
        evals.push((c.to_string(), engine::evaluate(&cfg, None).expect("evaluation")));
    }
    let head = headline(&mut evals);
    run(normalization(&evals, &work.path().join("eval_a")), &mut verdicts);
    run(head, &mut verdicts);

    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
