//! Service-demand slicing: RBs split in proportion to each slice's demand
//! score, round-robin inside both slices.
//!
//! The demand score of a slice is
//! `n_vues * offered_bits * (100 / latency_bound_ms) * (1 / (1 - reliability))^exponent`.

use serde::{Deserialize, Serialize};

use crate::agent::SlicingAction;
use crate::error::{Error, Result};
use crate::scheduler::{SchedulerKind, SlicePartition, MIN_SLICE_RBS, RB_STEP, TOTAL_RBS};
use crate::slice::SliceId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    pub urgency_exponent: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            urgency_exponent: 0.1,
        }
    }
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.urgency_exponent >= 0.0 && self.urgency_exponent.is_finite()) {
            return Err(Error::Config("baseline.urgency_exponent must be >= 0".into()));
        }
        Ok(())
    }
}

/// What the baseline knows about one slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceDemand {
    pub n_vues: u32,
    /// Bits offered during the last cycle.
    pub offered_bits: f64,
    pub latency_bound_ms: f64,
    pub reliability_target: f64,
}

pub fn urgency(d: &SliceDemand, params: &BaselineParams) -> f64 {
    (100.0 / d.latency_bound_ms) * (1.0 / (1.0 - d.reliability_target)).powf(params.urgency_exponent)
}

pub fn demand_score(d: &SliceDemand, params: &BaselineParams) -> f64 {
    d.n_vues as f64 * d.offered_bits * urgency(d, params)
}

/// Partition proportional to demand scores on the 5-RB grid.
///
/// The autonomous share is rounded half-up to the grid and safety receives
/// the remainder; both keep at least the minimum allocation. All-zero demand
/// splits evenly.
pub fn demand_based_partition(demand: &[SliceDemand; SliceId::COUNT], params: &BaselineParams) -> SlicingAction {
    let safety = demand_score(&demand[SliceId::Safety.index()], params).max(0.0);
    let autonomous = demand_score(&demand[SliceId::Autonomous.index()], params).max(0.0);
    let total = safety + autonomous;
    let rbs_autonomous = if total > 0.0 && total.is_finite() {
        let share = TOTAL_RBS as f64 * autonomous / total;
        let steps = (share / RB_STEP as f64 + 0.5).floor() as u32;
        (steps * RB_STEP).clamp(MIN_SLICE_RBS, TOTAL_RBS - MIN_SLICE_RBS)
    } else {
        TOTAL_RBS / 2
    };
    SlicingAction {
        partition: SlicePartition::new(TOTAL_RBS - rbs_autonomous, rbs_autonomous)
            .expect("grid-aligned partition"),
        sched_safety: SchedulerKind::RoundRobin,
        sched_autonomous: SchedulerKind::RoundRobin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn demand(n: u32, bits: f64, lat: f64, rel: f64) -> SliceDemand {
        SliceDemand {
            n_vues: n,
            offered_bits: bits,
            latency_bound_ms: lat,
            reliability_target: rel,
        }
    }

    #[test]
    fn equal_scores_split_evenly() {
        let d = demand(10, 1000.0, 100.0, 0.99);
        let a = demand_based_partition(&[d, d], &BaselineParams::default());
        assert_eq!(a.partition, SlicePartition::new(25, 25).unwrap());
        assert_eq!(a.sched_safety, SchedulerKind::RoundRobin);
        assert_eq!(a.sched_autonomous, SchedulerKind::RoundRobin);
    }

    #[test]
    fn zero_demand_fallback() {
        let s = demand(20, 0.0, 100.0, 0.99);
        let a = demand(20, 0.0, 10.0, 0.99999);
        let act = demand_based_partition(&[s, a], &BaselineParams::default());
        assert_eq!(act.partition, SlicePartition::new(25, 25).unwrap());
    }

    #[test]
    fn one_to_three_scores() {
        // Urgency 1 for both (exponent 0, equal bounds) isolates the scores.
        let p = BaselineParams { urgency_exponent: 0.0 };
        let s = demand(1, 1.0, 100.0, 0.5);
        let a = demand(1, 3.0, 100.0, 0.5);
        let act = demand_based_partition(&[s, a], &p);
        assert_eq!(act.partition, SlicePartition::new(10, 40).unwrap());
    }

    #[test]
    fn urgency_values() {
        let p = BaselineParams::default();
        let s = urgency(&demand(1, 1.0, 100.0, 0.99), &p);
        let a = urgency(&demand(1, 1.0, 10.0, 0.99999), &p);
        assert!((s - 100f64.powf(0.1)).abs() < 1e-9);
        assert!((a - 10.0 * 1e5f64.powf(0.1)).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn valid_and_monotone(
            ns in 0u32..50, na in 0u32..50,
            bs in 0.0f64..1e7, ba in 0.0f64..1e7, bump in 0.0f64..1e7,
        ) {
            let p = BaselineParams::default();
            let s = demand(ns, bs, 100.0, 0.99);
            let a = demand(na, ba, 10.0, 0.99999);
            let act = demand_based_partition(&[s, a], &p);
            prop_assert!(SlicePartition::new(act.partition.rbs_safety, act.partition.rbs_autonomous).is_ok());
            prop_assert_eq!(act.partition.total(), TOTAL_RBS);
            prop_assert_eq!(act.sched_safety, SchedulerKind::RoundRobin);
            prop_assert_eq!(act.sched_autonomous, SchedulerKind::RoundRobin);

            let more = demand(ns, bs + bump, 100.0, 0.99);
            let act2 = demand_based_partition(&[more, a], &p);
            if ns > 0 && na > 0 && ba > 0.0 && bs > 0.0 {
                prop_assert!(act2.partition.rbs_safety >= act.partition.rbs_safety);
            }
        }
    }
}
