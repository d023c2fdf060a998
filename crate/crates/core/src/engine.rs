//! The two-timescale loop.
//!
//! Every TTI: arrivals, deadline drops, per-slice scheduling, transmission,
//! then one millisecond of mobility. Every cycle of `run.cycle_ttis` TTIs the
//! controller picks a slicing action and the cycle is summarised into a
//! snapshot and a revenue.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::agent::{argmax, epsilon_at, Agent, SlicingAction, Transition, ACTION_COUNT};
use crate::baseline::{demand_based_partition, SliceDemand};
use crate::channel::{self, TTI_SECONDS};
use crate::config::{Controller, SimConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, f17, CycleRecord, ExportSet, JointPdf, Outcome, PacketRecord, Summary, VueRecord};
use crate::mobility::{build_fleet, density_snapshot, link_geometry, Fleet};
use crate::observation::{aggregate_cycle, ObservationScales, Snapshot};
use crate::revenue::compute_revenue;
use crate::rng::{self, Phase, SimRng, Stream};
use crate::scheduler::{
    schedule, transmit, ChannelDraw, LinkDemand, RadioCounters, RrState, TOTAL_RBS,
};
use crate::slice::SliceId;
use crate::traffic::{generate_arrivals, LinkQueue, LinkSource, Packet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SliceCycleStats {
    pub arrived: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Sum of the latencies of packets delivered this cycle.
    pub latency_sum_ms: u64,
    pub attempts: u64,
    pub failures: u64,
    pub bits_arrived: u64,
    pub backlog_bits_end: u64,
    pub n_vues: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CycleStats {
    pub slices: [SliceCycleStats; SliceId::COUNT],
    /// RBs granted over the cycle, summed over TTIs.
    pub rbs_used_total: u64,
}

/// What happened in one TTI.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TtiReport {
    /// RBs granted to each link, indexed by link id.
    pub grants: Vec<u32>,
    pub rbs_per_slice: [u32; SliceId::COUNT],
    pub arrived: Vec<u64>,
    pub delivered: Vec<u64>,
    pub dropped: Vec<u64>,
}

impl TtiReport {
    pub fn rbs_total(&self) -> u32 {
        self.rbs_per_slice.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutcome {
    pub stats: CycleStats,
    pub snapshot: Snapshot,
    pub revenue: f64,
}

/// Static description of one V2V link (one transmitter/receiver pair).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkInfo {
    pub link_id: usize,
    pub slice: SliceId,
}

/// One simulated cell: fleet, queues, counters and the per-subsystem streams.
#[derive(Debug, Clone)]
pub struct World {
    pub cfg: SimConfig,
    pub fleet: Fleet,
    pub links: Vec<LinkInfo>,
    pub queues: Vec<LinkQueue>,
    pub counters: Vec<RadioCounters>,
    pub tti: u64,
    sources: Vec<LinkSource>,
    slice_links: [Vec<usize>; SliceId::COUNT],
    rr: [RrState; SliceId::COUNT],
    /// Action applied in the previous cycle; round-robin pointers restart
    /// whenever it changes.
    last_action: Option<usize>,
    mobility_rng: SimRng,
    traffic_rng: SimRng,
    fading_rng: SimRng,
    next_packet_id: u64,
    /// Per packet id: 0 pending, 1 delivered, 2 dropped.
    fate: Vec<u8>,
    fate_conflicts: u64,
    acc: CycleStats,
    record: Option<u32>,
    records: Vec<PacketRecord>,
}

impl World {
    /// Builds the world for episode or evaluation run `index` of `phase`.
    pub fn new(cfg: &SimConfig, seed: u64, phase: Phase, index: u64) -> Result<Self> {
        cfg.validate()?;
        let mut placement = rng::stream(seed, phase, Stream::Placement, index);
        let fleet = build_fleet(&cfg.grid, &cfg.fleet, &mut placement)?;

        let mut links = Vec::with_capacity(fleet.pair_count());
        let mut sources = Vec::with_capacity(fleet.pair_count());
        let mut slice_links: [Vec<usize>; SliceId::COUNT] = Default::default();
        for pair in 0..fleet.pair_count() {
            let slice = fleet.transmitter(pair).slice_id;
            let phase_in_slice = slice_links[slice.index()].len() as u64;
            slice_links[slice.index()].push(pair);
            links.push(LinkInfo { link_id: pair, slice });
            sources.push(LinkSource {
                link_id: pair,
                slice,
                phase: phase_in_slice % cfg.traffic.autonomous_period_tti,
            });
        }
        let n = links.len();
        Ok(World {
            cfg: cfg.clone(),
            fleet,
            queues: (0..n).map(LinkQueue::new).collect(),
            counters: vec![RadioCounters::default(); n],
            links,
            tti: 0,
            sources,
            slice_links,
            rr: Default::default(),
            last_action: None,
            mobility_rng: rng::stream(seed, phase, Stream::Mobility, index),
            traffic_rng: rng::stream(seed, phase, Stream::Traffic, index),
            fading_rng: rng::stream(seed, phase, Stream::Fading, index),
            next_packet_id: 0,
            fate: Vec::new(),
            fate_conflicts: 0,
            acc: CycleStats::default(),
            record: None,
            records: Vec::new(),
        })
    }

    /// Keeps a [`PacketRecord`] for every finished packet, tagged with `run`.
    pub fn record_packets(&mut self, run: u32) {
        self.record = Some(run);
    }

    pub fn take_records(&mut self) -> Vec<PacketRecord> {
        std::mem::take(&mut self.records)
    }

    pub fn vue_records(&self, run: u32) -> Vec<VueRecord> {
        self.links
            .iter()
            .map(|l| VueRecord {
                run,
                link_id: l.link_id,
                slice_id: l.slice,
                attempts: self.counters[l.link_id].attempts,
                failures: self.counters[l.link_id].failures,
            })
            .collect()
    }

    pub fn slice_links(&self, slice: SliceId) -> &[usize] {
        &self.slice_links[slice.index()]
    }

    pub fn vues_in_slice(&self, slice: SliceId) -> u32 {
        2 * self.slice_links[slice.index()].len() as u32
    }

    pub fn observation_scales(&self) -> ObservationScales {
        let per_rb = (self.cfg.channel.max_spectral_eff * self.cfg.channel.rb_bandwidth_hz * TTI_SECONDS).floor();
        ObservationScales {
            total_vehicles: self.fleet.vehicles.len() as u32,
            cycle_capacity_bits: per_rb * TOTAL_RBS as f64 * self.cfg.run.cycle_ttis as f64,
            latency_bound_ms: [
                self.cfg.traffic.latency_bound_ms(SliceId::Safety),
                self.cfg.traffic.latency_bound_ms(SliceId::Autonomous),
            ],
        }
    }

    /// Snapshot of an idle cycle at the current positions; the first input of
    /// every episode.
    pub fn initial_snapshot(&self) -> Snapshot {
        let mut stats = CycleStats::default();
        self.finish_stats(&mut stats);
        self.snapshot_of(&stats)
    }

    fn finish_stats(&self, stats: &mut CycleStats) {
        for slice in SliceId::ALL {
            let s = &mut stats.slices[slice.index()];
            s.n_vues = self.vues_in_slice(slice);
            s.backlog_bits_end = self.slice_links[slice.index()]
                .iter()
                .map(|&l| self.queues[l].backlog_bits())
                .sum();
        }
    }

    fn snapshot_of(&self, stats: &CycleStats) -> Snapshot {
        let obs = &self.cfg.observation;
        let density = density_snapshot(&self.fleet.vehicles, &self.fleet.grid, obs.cells_x, obs.cells_y);
        aggregate_cycle(stats, &density, &self.observation_scales())
    }

    fn mark(&mut self, id: u64, fate: u8) {
        let i = id as usize;
        if self.fate.len() <= i {
            self.fate.resize(i + 1, 0);
        }
        if self.fate[i] != 0 {
            self.fate_conflicts += 1;
        }
        self.fate[i] = fate;
    }

    fn finish_packet(&mut self, p: &Packet, slice: SliceId, outcome: Outcome) {
        self.mark(p.id, if outcome == Outcome::Delivered { 1 } else { 2 });
        if let Some(run) = self.record {
            self.records.push(PacketRecord {
                run,
                link_id: p.link_id,
                slice_id: slice,
                arrival_tti: p.arrival_tti,
                outcome,
                latency_ms: (outcome == Outcome::Delivered).then(|| p.latency_at(self.tti)),
                size_bits: p.size_bits,
            });
        }
    }

    /// Advances one TTI under `action`.
    pub fn run_tti(&mut self, action: &SlicingAction) -> TtiReport {
        let n = self.links.len();
        let tti = self.tti;
        let mut report = TtiReport {
            grants: vec![0; n],
            rbs_per_slice: [0; SliceId::COUNT],
            arrived: vec![0; n],
            delivered: vec![0; n],
            dropped: vec![0; n],
        };

        for l in 0..n {
            let slice = self.links[l].slice;
            let arrivals = generate_arrivals(
                &self.cfg.traffic,
                &self.sources[l],
                tti,
                &mut self.next_packet_id,
                &mut self.traffic_rng,
            );
            let s = &mut self.acc.slices[slice.index()];
            for p in arrivals {
                s.arrived += 1;
                s.bits_arrived += p.size_bits;
                report.arrived[l] += 1;
                self.queues[l].push(p);
            }
        }

        for l in 0..n {
            let slice = self.links[l].slice;
            let dropped = self.queues[l].drop_expired(tti);
            self.acc.slices[slice.index()].dropped += dropped.len() as u64;
            report.dropped[l] += dropped.len() as u64;
            for p in &dropped {
                self.finish_packet(p, slice, Outcome::Dropped);
            }
        }

        let params = self.cfg.channel;
        let pathloss: Vec<f64> = (0..n)
            .map(|l| {
                let g = link_geometry(
                    &self.fleet.grid,
                    self.fleet.transmitter(l).pos,
                    self.fleet.receiver(l).pos,
                );
                channel::pathloss_db(g.is_los, g.d1, g.d2, params.carrier_ghz)
            })
            .collect();

        for slice in SliceId::ALL {
            let ids = &self.slice_links[slice.index()];
            let demand: Vec<LinkDemand> = ids
                .iter()
                .map(|&l| LinkDemand {
                    link_id: l,
                    backlog_bits: self.queues[l].backlog_bits(),
                    sinr_db_estimate: channel::sinr_db(&params, pathloss[l], 1.0, 1),
                })
                .collect();
            let grant = schedule(
                action.scheduler(slice),
                &demand,
                action.partition.rbs(slice),
                &mut self.rr[slice.index()],
                &params,
            );
            for (k, &l) in ids.iter().enumerate() {
                report.grants[l] = grant.counts[k];
            }
            report.rbs_per_slice[slice.index()] = grant.total();
        }

        for l in 0..n {
            // Drawn for every link so the stream does not depend on grants.
            let draw = ChannelDraw::sample(&mut self.fading_rng);
            let rbs = report.grants[l];
            if rbs == 0 {
                continue;
            }
            let slice = self.links[l].slice;
            let out = transmit(
                &mut self.queues[l],
                rbs,
                pathloss[l],
                draw,
                &params,
                &mut self.counters[l],
            );
            let s = &mut self.acc.slices[slice.index()];
            s.attempts += 1;
            s.failures += u64::from(!out.success);
            s.delivered += out.delivered.len() as u64;
            report.delivered[l] += out.delivered.len() as u64;
            for p in &out.delivered {
                s.latency_sum_ms += p.latency_at(tti);
            }
            for p in &out.delivered {
                self.finish_packet(p, slice, Outcome::Delivered);
            }
        }
        self.acc.rbs_used_total += report.rbs_total() as u64;

        self.fleet.step(TTI_SECONDS, &mut self.mobility_rng);
        self.tti += 1;
        report
    }

    /// Applies `action` for one cycle and summarises it.
    pub fn run_cycle(&mut self, action: &SlicingAction) -> CycleOutcome {
        if self.last_action != Some(action.index()) {
            self.rr = Default::default();
            self.last_action = Some(action.index());
        }
        self.acc = CycleStats::default();
        for _ in 0..self.cfg.run.cycle_ttis {
            self.run_tti(action);
        }
        let mut stats = std::mem::take(&mut self.acc);
        self.finish_stats(&mut stats);
        let snapshot = self.snapshot_of(&stats);
        let revenue = compute_revenue(&stats, &action.partition, &self.cfg.revenue);
        CycleOutcome {
            stats,
            snapshot,
            revenue,
        }
    }

    /// Checks packet and radio counters of every link.
    pub fn audit(&self) -> Result<()> {
        for q in &self.queues {
            if !q.is_conserved() {
                return Err(Error::Audit(format!(
                    "link {}: arrived {} != delivered {} + dropped {} + queued {}",
                    q.link_id,
                    q.arrived,
                    q.delivered,
                    q.dropped,
                    q.in_queue()
                )));
            }
        }
        for (l, c) in self.counters.iter().enumerate() {
            if c.failures > c.attempts {
                return Err(Error::Audit(format!("link {l}: more failures than attempts")));
            }
        }
        if self.fate_conflicts > 0 {
            return Err(Error::Audit(format!(
                "{} packets finished more than once",
                self.fate_conflicts
            )));
        }
        let finished = self.fate.iter().filter(|&&f| f != 0).count() as u64;
        let counted: u64 = self.queues.iter().map(|q| q.delivered + q.dropped).sum();
        if finished != counted {
            return Err(Error::Audit(format!(
                "{finished} finished packet ids but {counted} counted"
            )));
        }
        Ok(())
    }
}

/// Picks the action for the next cycle.
#[derive(Debug, Clone)]
pub enum Policy {
    Fixed(SlicingAction),
    Baseline,
    /// Greedy DQN; the LSTM state is carried between cycles.
    Drl(Box<Agent>),
}

impl Policy {
    pub fn name(&self) -> String {
        match self {
            Policy::Fixed(a) => format!("fixed:{}", a.index()),
            Policy::Baseline => "baseline".into(),
            Policy::Drl(_) => "drl".into(),
        }
    }

    pub fn begin_episode(&mut self) {
        if let Policy::Drl(agent) = self {
            agent.begin_episode();
        }
    }

    /// `last` is the previous cycle's statistics, `None` before the first.
    pub fn decide(&mut self, world: &World, snapshot: &Snapshot, last: Option<&CycleStats>) -> Result<SlicingAction> {
        match self {
            Policy::Fixed(a) => Ok(*a),
            Policy::Baseline => {
                let demand = SliceId::ALL.map(|slice| SliceDemand {
                    n_vues: world.vues_in_slice(slice),
                    offered_bits: last.map_or(0.0, |s| s.slices[slice.index()].bits_arrived as f64),
                    latency_bound_ms: world.cfg.traffic.latency_bound_ms(slice) as f64,
                    reliability_target: world.cfg.revenue.reliability_target(slice),
                });
                Ok(demand_based_partition(&demand, &world.cfg.baseline))
            }
            Policy::Drl(agent) => {
                let q = agent.observe(&snapshot.features)?;
                SlicingAction::from_index(argmax(&q))
            }
        }
    }
}

/// Builds the policy named by `cfg.controller`.
pub fn policy_for(cfg: &SimConfig, agent: Option<&Agent>) -> Result<Policy> {
    match cfg.controller {
        Controller::Baseline => Ok(Policy::Baseline),
        Controller::Fixed(i) => Ok(Policy::Fixed(SlicingAction::from_index(i)?)),
        Controller::Drl => match agent {
            Some(a) => {
                let expected = cfg.observation.feature_len();
                if a.online.spec.input_dim != expected || a.online.spec.output_dim != ACTION_COUNT {
                    return Err(Error::Config(format!(
                        "checkpoint network expects {} inputs and {} actions, config needs {expected} and {ACTION_COUNT}",
                        a.online.spec.input_dim, a.online.spec.output_dim
                    )));
                }
                Ok(Policy::Drl(Box::new(a.clone())))
            }
            None => Err(Error::Config(
                "controller `drl` needs a checkpoint to evaluate".into(),
            )),
        },
    }
}

/// Result of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub packets: Vec<PacketRecord>,
    pub vues: Vec<VueRecord>,
    pub cycles: Vec<CycleRecord>,
}

impl RunResult {
    pub fn revenues(&self) -> Vec<f64> {
        self.cycles.iter().map(|c| c.revenue).collect()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.cycles.iter().map(|c| c.action_index).collect()
    }
}

/// Runs `run.eval_cycles` cycles on held-out world `run`.
pub fn evaluate_run(cfg: &SimConfig, seed: u64, run: u32, mut policy: Policy) -> Result<RunResult> {
    let mut world = World::new(cfg, seed, Phase::Eval, run as u64)?;
    world.record_packets(run);
    policy.begin_episode();
    let mut snapshot = world.initial_snapshot();
    let mut last: Option<CycleStats> = None;
    let mut cycles = Vec::new();
    for cycle in 0..cfg.run.eval_cycles {
        let action = policy.decide(&world, &snapshot, last.as_ref())?;
        let out = world.run_cycle(&action);
        cycles.push(CycleRecord {
            run,
            cycle,
            action_index: action.index(),
            revenue: out.revenue,
            features: out.snapshot.features.clone(),
        });
        snapshot = out.snapshot;
        last = Some(out.stats);
    }
    world.audit()?;
    Ok(RunResult {
        packets: world.take_records(),
        vues: world.vue_records(run),
        cycles,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub packets: Vec<PacketRecord>,
    pub vues: Vec<VueRecord>,
    pub pdf: JointPdf,
    pub summary: Summary,
    pub runs: Vec<RunResult>,
}

impl Evaluation {
    pub fn export(&self, dir: &Path) -> Result<()> {
        let cycles: Vec<CycleRecord> = self.runs.iter().flat_map(|r| r.cycles.iter().cloned()).collect();
        metrics::export(
            dir,
            ExportSet {
                packets: &self.packets,
                vues: &self.vues,
                cycles: &cycles,
                pdf: &self.pdf,
                summary: &self.summary,
            },
        )
    }
}

/// Greedy evaluation over `run.eval_runs` held-out worlds, in parallel.
pub fn evaluate(cfg: &SimConfig, agent: Option<&Agent>) -> Result<Evaluation> {
    cfg.validate()?;
    let policy = policy_for(cfg, agent)?;
    let runs: Vec<RunResult> = (0..cfg.run.eval_runs)
        .into_par_iter()
        .map(|r| evaluate_run(cfg, cfg.seed, r, policy.clone()))
        .collect::<Result<_>>()?;
    let packets: Vec<PacketRecord> = runs.iter().flat_map(|r| r.packets.iter().cloned()).collect();
    let vues: Vec<VueRecord> = runs.iter().flat_map(|r| r.vues.iter().cloned()).collect();
    let revenues: Vec<Vec<f64>> = runs.iter().map(RunResult::revenues).collect();
    let pdf = metrics::joint_pdf(&metrics::joint_samples(&packets, &vues), &cfg.metrics);
    let summary = metrics::summarize(&policy.name(), &packets, &vues, &revenues, &pdf, cfg);
    Ok(Evaluation {
        packets,
        vues,
        pdf,
        summary,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub cycle: u64,
    pub episode: u64,
    pub epsilon: f64,
    pub action_index: usize,
    pub revenue: f64,
    pub loss: Option<f64>,
}

pub fn train_log_csv(rows: &[TrainLogRow]) -> String {
    let mut s = String::from("cycle,episode,epsilon,action_index,revenue,loss\n");
    for r in rows {
        let loss = r.loss.map(f17).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.cycle,
            r.episode,
            f17(r.epsilon),
            r.action_index,
            f17(r.revenue),
            loss
        );
    }
    s
}

pub fn write_train_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    fs::write(path, train_log_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Fresh agent sized for `cfg`, initialised from the seed's init stream.
pub fn new_agent(cfg: &SimConfig) -> Agent {
    let mut init = rng::stream(cfg.seed, Phase::Train, Stream::Init, 0);
    Agent::new(cfg.agent, cfg.observation.feature_len(), ACTION_COUNT, &mut init)
}

/// Trains `agent` for `run.train_episodes` episodes of
/// `run.cycles_per_episode` cycles, continuing its cycle counter.
pub fn train_agent(cfg: &SimConfig, agent: &mut Agent, episodes: u64) -> Result<Vec<TrainLogRow>> {
    train_agent_with(cfg, agent, episodes, |_, _| {})
}

/// [`train_agent`] calling `on_episode(episode, rows)` after every episode.
pub fn train_agent_with<F>(cfg: &SimConfig, agent: &mut Agent, episodes: u64, mut on_episode: F) -> Result<Vec<TrainLogRow>>
where
    F: FnMut(u64, &[TrainLogRow]),
{
    cfg.validate()?;
    let mut agent_rng = rng::stream(cfg.seed, Phase::Train, Stream::Agent, agent.cycle);
    let first_episode = agent.cycle / cfg.run.cycles_per_episode;
    let mut log = Vec::new();
    for e in first_episode..first_episode + episodes {
        let mut world = World::new(cfg, cfg.seed, Phase::Train, e)?;
        agent.begin_episode();
        let mut snapshot = world.initial_snapshot();
        for c in 0..cfg.run.cycles_per_episode {
            let eps = epsilon_at(agent.cycle, &agent.hyper);
            let a = agent.act(&snapshot.features, eps, &mut agent_rng)?;
            let action = SlicingAction::from_index(a)?;
            let out = world.run_cycle(&action);
            if !out.revenue.is_finite() {
                return Err(Error::Audit(format!("non-finite revenue at cycle {}", agent.cycle)));
            }
            agent.remember(Transition {
                snapshot: snapshot.features,
                action: a,
                revenue: out.revenue,
                next_snapshot: out.snapshot.features.clone(),
                episode_start: c == 0,
            });
            let loss = agent.learn(&mut agent_rng)?;
            log.push(TrainLogRow {
                cycle: agent.cycle,
                episode: e,
                epsilon: eps,
                action_index: a,
                revenue: out.revenue,
                loss,
            });
            agent.cycle += 1;
            snapshot = out.snapshot;
        }
        world.audit()?;
        let start = log.len() - cfg.run.cycles_per_episode as usize;
        on_episode(e, &log[start..]);
    }
    Ok(log)
}

/// Full training run from a fresh agent.
pub fn train(cfg: &SimConfig) -> Result<(Agent, Vec<TrainLogRow>)> {
    let mut agent = new_agent(cfg);
    let log = train_agent(cfg, &mut agent, cfg.run.train_episodes)?;
    Ok((agent, log))
}
