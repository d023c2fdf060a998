//! Packet generation per slice and per-link FIFO queues with deadline drops.
//!
//! Latency of a delivered packet is `completion_tti - arrival_tti + 1` ms,
//! so a packet completed in the TTI it arrived has a latency of 1 ms. A
//! packet is dropped as soon as it can no longer complete within its slice's
//! latency bound.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slice::SliceId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Mean packets per TTI per safety link (Poisson).
    pub safety_rate_per_tti: f64,
    /// Mean safety packet size in bits (exponential).
    pub safety_mean_bits: f64,
    pub autonomous_bits: u64,
    pub autonomous_period_tti: u64,
    pub safety_latency_ms: u64,
    pub autonomous_latency_ms: u64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            safety_rate_per_tti: 0.02,
            safety_mean_bits: 6400.0,
            autonomous_bits: 12800,
            autonomous_period_tti: 10,
            safety_latency_ms: 100,
            autonomous_latency_ms: 10,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.safety_rate_per_tti > 0.0 && self.safety_rate_per_tti.is_finite()) {
            return Err(Error::Config("traffic.safety_rate_per_tti must be > 0".into()));
        }
        if !(self.safety_mean_bits >= 1.0 && self.safety_mean_bits.is_finite()) {
            return Err(Error::Config("traffic.safety_mean_bits must be >= 1".into()));
        }
        if self.autonomous_bits < 1 {
            return Err(Error::Config("traffic.autonomous_bits must be >= 1".into()));
        }
        if self.autonomous_period_tti < 1 {
            return Err(Error::Config("traffic.autonomous_period_tti must be >= 1".into()));
        }
        if self.safety_latency_ms < 1 {
            return Err(Error::Config("traffic.safety_latency_ms must be >= 1".into()));
        }
        if self.autonomous_latency_ms < 1 {
            return Err(Error::Config("traffic.autonomous_latency_ms must be >= 1".into()));
        }
        Ok(())
    }

    pub fn latency_bound_ms(&self, slice: SliceId) -> u64 {
        match slice {
            SliceId::Safety => self.safety_latency_ms,
            SliceId::Autonomous => self.autonomous_latency_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    pub link_id: usize,
    pub size_bits: u64,
    pub arrival_tti: u64,
    /// First TTI in which completing the packet would exceed the latency
    /// bound: `arrival_tti + bound`.
    pub deadline_tti: u64,
    pub remaining_bits: u64,
}

impl Packet {
    /// Latency in ms if the packet completes during `tti`.
    pub fn latency_at(&self, tti: u64) -> u64 {
        tti - self.arrival_tti + 1
    }
}

/// Where one link's packets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkSource {
    pub link_id: usize,
    pub slice: SliceId,
    /// TTI offset of periodic arrivals modulo the period.
    pub phase: u64,
}

/// Draws this TTI's arrivals for one link.
///
/// Safety links draw a Poisson packet count every TTI (so the RNG stream is
/// consumed identically regardless of what happens elsewhere); autonomous
/// links are deterministic.
pub fn generate_arrivals<R: Rng + ?Sized>(
    cfg: &TrafficConfig,
    source: &LinkSource,
    tti: u64,
    next_id: &mut u64,
    rng: &mut R,
) -> Vec<Packet> {
    let mut out = Vec::new();
    let bound = cfg.latency_bound_ms(source.slice);
    let mut push = |size: u64, out: &mut Vec<Packet>| {
        out.push(Packet {
            id: *next_id,
            link_id: source.link_id,
            size_bits: size,
            arrival_tti: tti,
            deadline_tti: tti + bound,
            remaining_bits: size,
        });
        *next_id += 1;
    };
    match source.slice {
        SliceId::Safety => {
            let n: f64 = Poisson::new(cfg.safety_rate_per_tti)
                .expect("validated rate")
                .sample(rng);
            for _ in 0..n as u64 {
                let e: f64 = Exp1.sample(rng);
                let size = (e * cfg.safety_mean_bits).ceil().max(1.0) as u64;
                push(size, &mut out);
            }
        }
        SliceId::Autonomous => {
            if tti % cfg.autonomous_period_tti == source.phase % cfg.autonomous_period_tti {
                push(cfg.autonomous_bits, &mut out);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkQueue {
    pub link_id: usize,
    pub packets: VecDeque<Packet>,
    pub arrived: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl LinkQueue {
    pub fn new(link_id: usize) -> Self {
        LinkQueue {
            link_id,
            ..Default::default()
        }
    }

    pub fn push(&mut self, p: Packet) {
        debug_assert!(self
            .packets
            .back()
            .map_or(true, |b| b.arrival_tti <= p.arrival_tti));
        self.arrived += 1;
        self.packets.push_back(p);
    }

    pub fn backlog_bits(&self) -> u64 {
        self.packets.iter().map(|p| p.remaining_bits).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Serves up to `bits` head-first and returns completed packets.
    pub fn serve_bits(&mut self, mut bits: u64) -> Vec<Packet> {
        let mut done = Vec::new();
        while bits > 0 {
            let Some(head) = self.packets.front_mut() else {
                break;
            };
            if head.remaining_bits <= bits {
                bits -= head.remaining_bits;
                head.remaining_bits = 0;
                done.push(self.packets.pop_front().expect("head exists"));
                self.delivered += 1;
            } else {
                head.remaining_bits -= bits;
                bits = 0;
            }
        }
        done
    }

    /// Removes every packet that can no longer meet its deadline at `tti`.
    pub fn drop_expired(&mut self, tti: u64) -> Vec<Packet> {
        let mut dropped = Vec::new();
        // All packets of a link share one bound, so expired packets form a
        // FIFO prefix.
        while self.packets.front().is_some_and(|p| p.deadline_tti <= tti) {
            dropped.push(self.packets.pop_front().expect("front exists"));
        }
        self.dropped += dropped.len() as u64;
        dropped
    }

    pub fn in_queue(&self) -> u64 {
        self.packets.len() as u64
    }

    /// `arrived = delivered + dropped + in-queue`.
    pub fn is_conserved(&self) -> bool {
        self.arrived == self.delivered + self.dropped + self.in_queue()
    }
}
