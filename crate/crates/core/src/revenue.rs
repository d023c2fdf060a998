//! Network operating revenue: weighted QoS satisfaction of each slice minus
//! the cost of the radio resources allocated. This is the learning reward
//! and is maximised.

use serde::{Deserialize, Serialize};

use crate::engine::CycleStats;
use crate::error::{Error, Result};
use crate::scheduler::{SlicePartition, TOTAL_RBS};
use crate::slice::SliceId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RevenueParams {
    pub w_safety: f64,
    pub w_autonomous: f64,
    pub alpha: f64,
    pub beta: f64,
    pub cost_per_rb_fraction: f64,
    pub reliability_safety: f64,
    pub reliability_autonomous: f64,
}

impl Default for RevenueParams {
    fn default() -> Self {
        RevenueParams {
            w_safety: 1.0,
            w_autonomous: 2.0,
            alpha: 0.5,
            beta: 0.5,
            cost_per_rb_fraction: 0.2,
            reliability_safety: 0.99,
            reliability_autonomous: 0.99999,
        }
    }
}

impl RevenueParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("w_safety", self.w_safety),
            ("w_autonomous", self.w_autonomous),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("cost_per_rb_fraction", self.cost_per_rb_fraction),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("revenue.{name} must be >= 0")));
            }
        }
        if (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return Err(Error::Config("revenue.alpha + revenue.beta must equal 1".into()));
        }
        for (name, v) in [
            ("reliability_safety", self.reliability_safety),
            ("reliability_autonomous", self.reliability_autonomous),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("revenue.{name} must be in (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn weight(&self, slice: SliceId) -> f64 {
        match slice {
            SliceId::Safety => self.w_safety,
            SliceId::Autonomous => self.w_autonomous,
        }
    }

    pub fn reliability_target(&self, slice: SliceId) -> f64 {
        match slice {
            SliceId::Safety => self.reliability_safety,
            SliceId::Autonomous => self.reliability_autonomous,
        }
    }

    pub fn max_revenue(&self) -> f64 {
        self.w_safety + self.w_autonomous
    }
}

/// Fraction of finished packets delivered in time; 1.0 for an idle slice.
pub fn delivered_ratio(delivered: u64, dropped: u64) -> f64 {
    if delivered + dropped == 0 {
        1.0
    } else {
        delivered as f64 / (delivered + dropped) as f64
    }
}

pub fn compute_revenue(stats: &CycleStats, partition: &SlicePartition, params: &RevenueParams) -> f64 {
    let mut reward = 0.0;
    for slice in SliceId::ALL {
        let s = &stats.slices[slice.index()];
        let ratio = delivered_ratio(s.delivered, s.dropped);
        // Late packets are dropped, so in-time delivery equals the ratio.
        let lat_score = ratio;
        let rel_score = (ratio / params.reliability_target(slice)).min(1.0);
        reward += params.weight(slice) * (params.alpha * lat_score + params.beta * rel_score);
    }
    reward - params.cost_per_rb_fraction * (partition.total() as f64 / TOTAL_RBS as f64)
}
