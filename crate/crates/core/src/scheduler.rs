//! Intra-slice resource block allocation and transmission, run every TTI
//! under the slice partition chosen by the slicing controller.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelParams};
use crate::error::{Error, Result};
use crate::slice::SliceId;
use crate::traffic::{LinkQueue, Packet};

pub const TOTAL_RBS: u32 = 50;
pub const RB_STEP: u32 = 5;
pub const MIN_SLICE_RBS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlicePartition {
    pub rbs_safety: u32,
    pub rbs_autonomous: u32,
}

impl SlicePartition {
    pub fn new(rbs_safety: u32, rbs_autonomous: u32) -> Result<Self> {
        let p = SlicePartition {
            rbs_safety,
            rbs_autonomous,
        };
        let ok = [rbs_safety, rbs_autonomous]
            .iter()
            .all(|&r| r >= MIN_SLICE_RBS && r % RB_STEP == 0)
            && rbs_safety + rbs_autonomous <= TOTAL_RBS;
        if ok {
            Ok(p)
        } else {
            Err(Error::Contract(format!(
                "invalid partition ({rbs_safety}, {rbs_autonomous})"
            )))
        }
    }

    pub fn rbs(&self, slice: SliceId) -> u32 {
        match slice {
            SliceId::Safety => self.rbs_safety,
            SliceId::Autonomous => self.rbs_autonomous,
        }
    }

    pub fn total(&self) -> u32 {
        self.rbs_safety + self.rbs_autonomous
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchedulerKind {
    RoundRobin,
    ChannelQuality,
    QueueLength,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 3] = [
        SchedulerKind::RoundRobin,
        SchedulerKind::ChannelQuality,
        SchedulerKind::QueueLength,
    ];

    pub fn index(self) -> usize {
        match self {
            SchedulerKind::RoundRobin => 0,
            SchedulerKind::ChannelQuality => 1,
            SchedulerKind::QueueLength => 2,
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerKind::RoundRobin => "round_robin",
            SchedulerKind::ChannelQuality => "channel_quality",
            SchedulerKind::QueueLength => "queue_length",
        })
    }
}

/// What the scheduler knows about one link at the start of a TTI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDemand {
    pub link_id: usize,
    pub backlog_bits: u64,
    /// Single-RB SINR from pathloss alone; fading is not known in advance.
    pub sinr_db_estimate: f64,
}

/// RBs granted this TTI, aligned with the `links` slice passed to [`schedule`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RbGrant {
    pub counts: Vec<u32>,
}

impl RbGrant {
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }
}

/// Round-robin pointer: position in the slice's link list to start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RrState {
    pub pointer: usize,
}

/// Distributes `n_rbs` over the backlogged links of one slice.
///
/// If any link is backlogged every RB is granted; otherwise nothing is.
pub fn schedule(
    kind: SchedulerKind,
    links: &[LinkDemand],
    n_rbs: u32,
    rr: &mut RrState,
    params: &ChannelParams,
) -> RbGrant {
    let mut counts = vec![0u32; links.len()];
    let backlogged: Vec<usize> = (0..links.len())
        .filter(|&i| links[i].backlog_bits > 0)
        .collect();
    if backlogged.is_empty() || n_rbs == 0 {
        return RbGrant { counts };
    }
    match kind {
        SchedulerKind::RoundRobin => {
            let n = links.len();
            let mut pos = rr.pointer % n;
            let mut last = pos;
            let mut left = n_rbs;
            while left > 0 {
                if links[pos].backlog_bits > 0 {
                    counts[pos] += 1;
                    last = pos;
                    left -= 1;
                }
                pos = (pos + 1) % n;
            }
            rr.pointer = (last + 1) % n;
        }
        SchedulerKind::ChannelQuality => {
            let best = backlogged
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    links[a]
                        .sinr_db_estimate
                        .total_cmp(&links[b].sinr_db_estimate)
                        .then(links[b].link_id.cmp(&links[a].link_id))
                })
                .expect("non-empty");
            counts[best] = n_rbs;
        }
        SchedulerKind::QueueLength => {
            let per_rb: Vec<i64> = links
                .iter()
                .map(|l| channel::bits_per_tti(l.sinr_db_estimate, 1, params) as i64)
                .collect();
            let mut estimate: Vec<i64> = links.iter().map(|l| l.backlog_bits as i64).collect();
            for _ in 0..n_rbs {
                let pick = backlogged
                    .iter()
                    .copied()
                    .max_by(|&a, &b| {
                        estimate[a]
                            .cmp(&estimate[b])
                            .then(links[b].link_id.cmp(&links[a].link_id))
                    })
                    .expect("non-empty");
                counts[pick] += 1;
                estimate[pick] -= per_rb[pick];
            }
        }
    }
    RbGrant { counts }
}

/// Randomness consumed by one link in one TTI, drawn whether or not the link
/// transmits so that streams stay aligned across controllers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDraw {
    pub fading_gain: f64,
    /// Uniform in [0, 1); the attempt fails when this is below the BLER.
    pub error_uniform: f64,
}

impl ChannelDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        ChannelDraw {
            fading_gain: channel::fading_sample(rng),
            error_uniform: rng.random(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RadioCounters {
    pub attempts: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionOutcome {
    pub sinr_db: f64,
    pub success: bool,
    /// Bits the grant could carry; served only on success.
    pub capacity_bits: u64,
    pub delivered: Vec<Packet>,
}

/// One transmission attempt of a link over its whole grant.
///
/// A failed attempt delivers nothing and leaves the data queued, so the next
/// grant retransmits it.
pub fn transmit(
    queue: &mut LinkQueue,
    grant_rbs: u32,
    pathloss_db: f64,
    draw: ChannelDraw,
    params: &ChannelParams,
    counters: &mut RadioCounters,
) -> TransmissionOutcome {
    debug_assert!(grant_rbs >= 1);
    let sinr = channel::sinr_db(params, pathloss_db, draw.fading_gain, grant_rbs);
    let bler = channel::bler_prob(sinr, params);
    let capacity_bits = channel::bits_per_tti(sinr, grant_rbs, params);
    counters.attempts += 1;
    let success = draw.error_uniform >= bler;
    let delivered = if success {
        queue.serve_bits(capacity_bits)
    } else {
        counters.failures += 1;
        Vec::new()
    };
    TransmissionOutcome {
        sinr_db: sinr,
        success,
        capacity_bits,
        delivered,
    }
}
