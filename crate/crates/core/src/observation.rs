//! The per-cycle snapshot fed to the Q-network.
//!
//! Layout of [`Snapshot::features`]: the flattened density grid (row-major),
//! then for each slice in [`SliceId::ALL`] order the five values
//! `offered_load, backlog, mean_latency, bler, n_vues`. Every value lies in
//! `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::engine::CycleStats;
use crate::error::{Error, Result};
use crate::mobility::DensityGrid;
use crate::slice::SliceId;

pub const FEATURES_PER_SLICE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub cells_x: usize,
    pub cells_y: usize,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig {
            cells_x: 3,
            cells_y: 3,
        }
    }
}

impl ObservationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cells_x < 1 || self.cells_y < 1 {
            return Err(Error::Config(
                "observation.cells_x and observation.cells_y must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        self.cells_x * self.cells_y + FEATURES_PER_SLICE * SliceId::COUNT
    }
}

/// Normalisation constants that depend on the whole configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationScales {
    /// Vehicles in the whole fleet.
    pub total_vehicles: u32,
    /// Bits the whole carrier can move in one cycle at peak efficiency.
    pub cycle_capacity_bits: f64,
    pub latency_bound_ms: [u64; SliceId::COUNT],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub features: Vec<f64>,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn slice_block(&self, slice: SliceId) -> &[f64] {
        let start = self.features.len() - FEATURES_PER_SLICE * SliceId::COUNT
            + FEATURES_PER_SLICE * slice.index();
        &self.features[start..start + FEATURES_PER_SLICE]
    }

    pub fn offered_load(&self, slice: SliceId) -> f64 {
        self.slice_block(slice)[0]
    }

    pub fn backlog(&self, slice: SliceId) -> f64 {
        self.slice_block(slice)[1]
    }

    pub fn mean_latency(&self, slice: SliceId) -> f64 {
        self.slice_block(slice)[2]
    }

    pub fn bler(&self, slice: SliceId) -> f64 {
        self.slice_block(slice)[3]
    }

    pub fn n_vues(&self, slice: SliceId) -> f64 {
        self.slice_block(slice)[4]
    }
}

pub fn normalize(raw: f64, scale: f64) -> f64 {
    debug_assert!(scale > 0.0);
    let v = raw / scale;
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

pub fn aggregate_cycle(stats: &CycleStats, density: &DensityGrid, scales: &ObservationScales) -> Snapshot {
    let cells = density.counts.len();
    let mut features = Vec::with_capacity(cells + FEATURES_PER_SLICE * SliceId::COUNT);

    let per_cell = (2.0 * scales.total_vehicles as f64 / cells as f64).max(1.0);
    features.extend(density.counts.iter().map(|&c| normalize(c as f64, per_cell)));

    let cap = scales.cycle_capacity_bits.max(1.0);
    for slice in SliceId::ALL {
        let s = &stats.slices[slice.index()];
        let bound = scales.latency_bound_ms[slice.index()] as f64;
        let (latency, bler) = if s.delivered == 0 {
            (1.0, if s.attempts > 0 { 1.0 } else { 0.0 })
        } else {
            (
                normalize(s.latency_sum_ms as f64 / s.delivered as f64, bound),
                normalize(s.failures as f64, s.attempts.max(1) as f64),
            )
        };
        features.push(normalize(s.bits_arrived as f64, cap));
        features.push(normalize(s.backlog_bits_end as f64, cap));
        features.push(latency);
        features.push(bler);
        features.push(normalize(
            s.n_vues as f64,
            scales.total_vehicles.max(1) as f64,
        ));
    }
    Snapshot { features }
}
