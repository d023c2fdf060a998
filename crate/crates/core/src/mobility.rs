//! Vehicle positions on a Manhattan street grid.
//!
//! Streets are full lines across the service area: horizontal streets at
//! `y = j * block_h` and vertical streets at `x = i * block_w`. The area is a
//! torus, so a vehicle leaving one edge re-enters on the opposite edge and the
//! fleet size never changes. Vehicles drive on the street centreline; the
//! lane offset is the tolerance used to decide street membership.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slice::SliceId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadGrid {
    pub blocks_x: u32,
    pub blocks_y: u32,
    pub block_w: f64,
    pub block_h: f64,
    pub lane_offset: f64,
}

impl Default for RoadGrid {
    fn default() -> Self {
        RoadGrid {
            blocks_x: 3,
            blocks_y: 3,
            block_w: 250.0,
            block_h: 433.0,
            lane_offset: 5.0,
        }
    }
}

impl RoadGrid {
    pub fn validate(&self) -> Result<()> {
        if self.blocks_x < 1 {
            return Err(Error::Config("grid.blocks_x must be >= 1".into()));
        }
        if self.blocks_y < 1 {
            return Err(Error::Config("grid.blocks_y must be >= 1".into()));
        }
        if !(self.block_w > 0.0 && self.block_w.is_finite()) {
            return Err(Error::Config("grid.block_w must be > 0".into()));
        }
        if !(self.block_h > 0.0 && self.block_h.is_finite()) {
            return Err(Error::Config("grid.block_h must be > 0".into()));
        }
        if !(self.lane_offset >= 0.0) || self.lane_offset >= self.block_w.min(self.block_h) / 2.0 {
            return Err(Error::Config(
                "grid.lane_offset must be >= 0 and below half a block".into(),
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.blocks_x as f64 * self.block_w
    }

    pub fn height(&self) -> f64 {
        self.blocks_y as f64 * self.block_h
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Index of the vertical street through `x`, if any.
    pub fn vertical_street(&self, x: f64) -> Option<u32> {
        street_index(x, self.block_w, self.blocks_x, self.lane_offset)
    }

    /// Index of the horizontal street through `y`, if any.
    pub fn horizontal_street(&self, y: f64) -> Option<u32> {
        street_index(y, self.block_h, self.blocks_y, self.lane_offset)
    }

    /// Distance from `p` to the nearest street centreline.
    pub fn distance_to_street(&self, p: Point) -> f64 {
        let dx = line_offset(p.x, self.block_w);
        let dy = line_offset(p.y, self.block_h);
        dx.min(dy)
    }

    fn wrap(&self, p: Point) -> Point {
        Point {
            x: p.x.rem_euclid(self.width()),
            y: p.y.rem_euclid(self.height()),
        }
    }
}

fn line_offset(v: f64, spacing: f64) -> f64 {
    let r = v.rem_euclid(spacing);
    r.min(spacing - r)
}

fn street_index(v: f64, spacing: f64, count: u32, tol: f64) -> Option<u32> {
    let k = (v / spacing).round();
    if (v - k * spacing).abs() <= tol {
        Some((k as i64).rem_euclid(count as i64) as u32)
    } else {
        None
    }
}

/// Shortest separation of two coordinates on a ring of length `period`.
fn ring_distance(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Heading {
    PosX,
    NegX,
    PosY,
    NegY,
}

impl Heading {
    fn unit(self) -> (f64, f64) {
        match self {
            Heading::PosX => (1.0, 0.0),
            Heading::NegX => (-1.0, 0.0),
            Heading::PosY => (0.0, 1.0),
            Heading::NegY => (0.0, -1.0),
        }
    }

    fn turned(self, turn: Turn) -> Heading {
        use Heading::*;
        match (turn, self) {
            (Turn::Straight, h) => h,
            (Turn::Left, PosX) => PosY,
            (Turn::Left, PosY) => NegX,
            (Turn::Left, NegX) => NegY,
            (Turn::Left, NegY) => PosX,
            (Turn::Right, PosX) => NegY,
            (Turn::Right, NegY) => NegX,
            (Turn::Right, NegX) => PosY,
            (Turn::Right, PosY) => PosX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Straight,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Transmitter,
    Receiver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: usize,
    pub pos: Point,
    pub heading: Heading,
    /// m/s
    pub speed: f64,
    pub slice_id: SliceId,
    /// Id of the other end of this vehicle's V2V link.
    pub pair_id: usize,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub safety_pairs: u32,
    pub autonomous_pairs: u32,
    /// m/s (30 km/h)
    pub speed_mps: f64,
    /// Initial along-street distance from a transmitter back to its receiver.
    pub pair_gap_m: f64,
    pub p_straight: f64,
    pub p_left: f64,
    pub p_right: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            safety_pairs: 20,
            autonomous_pairs: 20,
            speed_mps: 30.0 / 3.6,
            pair_gap_m: 40.0,
            p_straight: 0.5,
            p_left: 0.25,
            p_right: 0.25,
        }
    }
}

impl FleetConfig {
    pub fn validate(&self, grid: &RoadGrid) -> Result<()> {
        if self.safety_pairs + self.autonomous_pairs == 0 {
            return Err(Error::Config(
                "fleet: at least one VUE pair is required (safety_pairs + autonomous_pairs = 0)".into(),
            ));
        }
        if !(self.speed_mps >= 0.0 && self.speed_mps.is_finite()) {
            return Err(Error::Config("fleet.speed_mps must be >= 0".into()));
        }
        if !(self.pair_gap_m >= 0.0) || self.pair_gap_m >= grid.width().max(grid.height()) / 2.0 {
            return Err(Error::Config(
                "fleet.pair_gap_m must be >= 0 and below half the service area".into(),
            ));
        }
        let probs = [self.p_straight, self.p_left, self.p_right];
        if probs.iter().any(|p| !(*p >= 0.0)) || ((probs.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "fleet.p_straight/p_left/p_right must be non-negative and sum to 1".into(),
            ));
        }
        Ok(())
    }

    pub fn pairs(&self, slice: SliceId) -> u32 {
        match slice {
            SliceId::Safety => self.safety_pairs,
            SliceId::Autonomous => self.autonomous_pairs,
        }
    }
}

/// A turn a transmitter took, replayed by its receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Waypoint {
    ix: u32,
    iy: u32,
    heading: Heading,
}

/// Counts of turn decisions taken by transmitters at intersections.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TurnCounts {
    pub straight: u64,
    pub left: u64,
    pub right: u64,
}

impl TurnCounts {
    pub fn total(&self) -> u64 {
        self.straight + self.left + self.right
    }
}

/// The grid plus every vehicle on it.
///
/// Vehicles are stored pairwise: `vehicles[2k]` transmits to `vehicles[2k + 1]`.
#[derive(Debug, Clone)]
pub struct Fleet {
    pub grid: RoadGrid,
    pub vehicles: Vec<Vehicle>,
    config: FleetConfig,
    waypoints: Vec<VecDeque<Waypoint>>,
    pub turns: TurnCounts,
}

/// Places the fleet uniformly at random on street segments.
pub fn build_fleet<R: Rng + ?Sized>(
    grid: &RoadGrid,
    config: &FleetConfig,
    rng: &mut R,
) -> Result<Fleet> {
    grid.validate()?;
    config.validate(grid)?;

    let mut vehicles = Vec::new();
    let horiz_len = grid.blocks_y as f64 * grid.width();
    let vert_len = grid.blocks_x as f64 * grid.height();
    for slice in SliceId::ALL {
        for _ in 0..config.pairs(slice) {
            let (pos, heading) = if rng.random::<f64>() * (horiz_len + vert_len) < horiz_len {
                let j = rng.random_range(0..grid.blocks_y);
                let x = rng.random::<f64>() * grid.width();
                let h = if rng.random::<bool>() { Heading::PosX } else { Heading::NegX };
                (Point::new(x, j as f64 * grid.block_h), h)
            } else {
                let i = rng.random_range(0..grid.blocks_x);
                let y = rng.random::<f64>() * grid.height();
                let h = if rng.random::<bool>() { Heading::PosY } else { Heading::NegY };
                (Point::new(i as f64 * grid.block_w, y), h)
            };
            let (ux, uy) = heading.unit();
            let rx_pos = grid.wrap(Point::new(
                pos.x - ux * config.pair_gap_m,
                pos.y - uy * config.pair_gap_m,
            ));
            let tx_id = vehicles.len();
            let rx_id = tx_id + 1;
            vehicles.push(Vehicle {
                id: tx_id,
                pos,
                heading,
                speed: config.speed_mps,
                slice_id: slice,
                pair_id: rx_id,
                role: Role::Transmitter,
            });
            vehicles.push(Vehicle {
                id: rx_id,
                pos: rx_pos,
                heading,
                speed: config.speed_mps,
                slice_id: slice,
                pair_id: tx_id,
                role: Role::Receiver,
            });
        }
    }
    let pairs = vehicles.len() / 2;
    Ok(Fleet {
        grid: *grid,
        vehicles,
        config: *config,
        waypoints: vec![VecDeque::new(); pairs],
        turns: TurnCounts::default(),
    })
}

impl Fleet {
    pub fn pair_count(&self) -> usize {
        self.vehicles.len() / 2
    }

    pub fn transmitter(&self, pair: usize) -> &Vehicle {
        &self.vehicles[2 * pair]
    }

    pub fn receiver(&self, pair: usize) -> &Vehicle {
        &self.vehicles[2 * pair + 1]
    }

    /// Advances every vehicle by `dt` seconds.
    ///
    /// Transmitters pick straight/left/right at each intersection they reach;
    /// receivers replay the turns of their transmitter so the pair stays on
    /// one path at a fixed gap.
    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) {
        if dt <= 0.0 {
            return;
        }
        let grid = self.grid;
        let cfg = self.config;
        for pair in 0..self.pair_count() {
            let (tx_slot, rx_slot) = self.vehicles[2 * pair..2 * pair + 2].split_at_mut(1);
            let tx = &mut tx_slot[0];
            let rx = &mut rx_slot[0];
            let queue = &mut self.waypoints[pair];
            let turns = &mut self.turns;

            advance(&grid, tx, tx.speed * dt, |ix, iy, heading| {
                let u: f64 = rng.random();
                let turn = if u < cfg.p_straight {
                    turns.straight += 1;
                    Turn::Straight
                } else if u < cfg.p_straight + cfg.p_left {
                    turns.left += 1;
                    Turn::Left
                } else {
                    turns.right += 1;
                    Turn::Right
                };
                let next = heading.turned(turn);
                if next != heading {
                    queue.push_back(Waypoint { ix, iy, heading: next });
                }
                next
            });

            advance(&grid, rx, rx.speed * dt, |ix, iy, heading| match queue.front() {
                Some(w) if w.ix == ix && w.iy == iy => {
                    let h = w.heading;
                    queue.pop_front();
                    h
                }
                _ => heading,
            });
        }
    }
}

/// Moves `v` by `dist` metres, calling `at_intersection(ix, iy, heading)` at
/// every intersection reached to obtain the heading to leave it with.
fn advance<F>(grid: &RoadGrid, v: &mut Vehicle, mut dist: f64, mut at_intersection: F)
where
    F: FnMut(u32, u32, Heading) -> Heading,
{
    let (w, h) = (grid.width(), grid.height());
    while dist > 0.0 {
        let (coord, spacing, period, count, positive) = match v.heading {
            Heading::PosX => (v.pos.x, grid.block_w, w, grid.blocks_x, true),
            Heading::NegX => (v.pos.x, grid.block_w, w, grid.blocks_x, false),
            Heading::PosY => (v.pos.y, grid.block_h, h, grid.blocks_y, true),
            Heading::NegY => (v.pos.y, grid.block_h, h, grid.blocks_y, false),
        };
        // Next grid line strictly ahead, as an index in 0..=count.
        let (target_k, to_go) = if positive {
            let k = (coord / spacing).floor() as i64 + 1;
            (k, k as f64 * spacing - coord)
        } else {
            let c = if coord <= 0.0 { period } else { coord };
            let k = (c / spacing).ceil() as i64 - 1;
            (k, c - k as f64 * spacing)
        };
        if dist < to_go {
            let moved = coord + if positive { dist } else { -dist };
            set_coord(v, moved.rem_euclid(period));
            return;
        }
        dist -= to_go;
        let k = target_k.rem_euclid(count as i64) as u32;
        set_coord(v, k as f64 * spacing);
        let (ix, iy) = match v.heading {
            Heading::PosX | Heading::NegX => (k, grid.horizontal_street(v.pos.y).unwrap_or(0)),
            Heading::PosY | Heading::NegY => (grid.vertical_street(v.pos.x).unwrap_or(0), k),
        };
        // Snap onto both streets of the intersection exactly.
        v.pos = Point::new(ix as f64 * grid.block_w, iy as f64 * grid.block_h);
        v.heading = at_intersection(ix, iy, v.heading);
    }
}

fn set_coord(v: &mut Vehicle, c: f64) {
    match v.heading {
        Heading::PosX | Heading::NegX => v.pos.x = c,
        Heading::PosY | Heading::NegY => v.pos.y = c,
    }
}

/// Vehicle counts over a regular `cells_x` x `cells_y` partition of the area.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub cells_x: usize,
    pub cells_y: usize,
    pub cell_w: f64,
    pub cell_h: f64,
    /// Row-major: `counts[cy * cells_x + cx]`.
    pub counts: Vec<u32>,
}

impl DensityGrid {
    pub fn get(&self, cx: usize, cy: usize) -> u32 {
        self.counts[cy * self.cells_x + cx]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

pub fn density_snapshot<'a, I>(vehicles: I, grid: &RoadGrid, cells_x: usize, cells_y: usize) -> DensityGrid
where
    I: IntoIterator<Item = &'a Vehicle>,
{
    assert!(cells_x >= 1 && cells_y >= 1, "density grid needs at least one cell");
    let cell_w = grid.width() / cells_x as f64;
    let cell_h = grid.height() / cells_y as f64;
    let mut counts = vec![0u32; cells_x * cells_y];
    for v in vehicles {
        let p = grid.wrap(v.pos);
        let cx = ((p.x / cell_w) as usize).min(cells_x - 1);
        let cy = ((p.y / cell_h) as usize).min(cells_y - 1);
        counts[cy * cells_x + cx] += 1;
    }
    DensityGrid {
        cells_x,
        cells_y,
        cell_w,
        cell_h,
        counts,
    }
}

/// Street geometry of a V2V link as the WINNER+ B1 model sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub is_los: bool,
    /// LOS: straight-line distance. NLOS: transmitter to the corner.
    pub d1: f64,
    /// NLOS: corner to receiver along the street grid. Zero for LOS.
    pub d2: f64,
}

/// Classifies the link between two on-street points.
///
/// Distances use the minimum image on the torus. For NLOS links every
/// intersection on the transmitter's street(s) is a candidate corner and the
/// one minimising `d1 + d2` wins (ties go to the smaller `d1`).
pub fn link_geometry(grid: &RoadGrid, tx: Point, rx: Point) -> LinkGeometry {
    let (w, h) = (grid.width(), grid.height());
    let dx = ring_distance(tx.x, rx.x, w);
    let dy = ring_distance(tx.y, rx.y, h);

    let tx_h = grid.horizontal_street(tx.y);
    let tx_v = grid.vertical_street(tx.x);
    let rx_h = grid.horizontal_street(rx.y);
    let rx_v = grid.vertical_street(rx.x);

    let same_h = tx_h.is_some() && tx_h == rx_h;
    let same_v = tx_v.is_some() && tx_v == rx_v;
    if same_h || same_v {
        return LinkGeometry {
            is_los: true,
            d1: dx.hypot(dy),
            d2: 0.0,
        };
    }

    let mut best: Option<(f64, f64)> = None;
    let mut consider = |d1: f64, d2: f64| {
        let better = match best {
            None => true,
            Some((b1, b2)) => {
                let (t, bt) = (d1 + d2, b1 + b2);
                t < bt - 1e-12 || ((t - bt).abs() <= 1e-12 && d1 < b1)
            }
        };
        if better {
            best = Some((d1, d2));
        }
    };
    if let Some(j) = tx_h {
        let cy = j as f64 * grid.block_h;
        for i in 0..grid.blocks_x {
            let cx = i as f64 * grid.block_w;
            let d1 = ring_distance(tx.x, cx, w) + ring_distance(tx.y, cy, h);
            let d2 = ring_distance(cx, rx.x, w) + ring_distance(cy, rx.y, h);
            consider(d1, d2);
        }
    }
    if let Some(i) = tx_v {
        let cx = i as f64 * grid.block_w;
        for j in 0..grid.blocks_y {
            let cy = j as f64 * grid.block_h;
            let d1 = ring_distance(tx.y, cy, h) + ring_distance(tx.x, cx, w);
            let d2 = ring_distance(cx, rx.x, w) + ring_distance(cy, rx.y, h);
            consider(d1, d2);
        }
    }
    let (d1, d2) = best.unwrap_or((dx + dy, 0.0));
    LinkGeometry {
        is_los: false,
        d1,
        d2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn vehicle_at(x: f64, y: f64, heading: Heading) -> Vehicle {
        Vehicle {
            id: 0,
            pos: Point::new(x, y),
            heading,
            speed: 30.0 / 3.6,
            slice_id: SliceId::Safety,
            pair_id: 1,
            role: Role::Transmitter,
        }
    }

    #[test]
    fn default_grid_area() {
        let g = RoadGrid::default();
        assert_eq!(g.width(), 750.0);
        assert_eq!(g.height(), 1299.0);
    }

    #[test]
    fn build_counts_and_determinism() {
        let grid = RoadGrid::default();
        let cfg = FleetConfig {
            safety_pairs: 10,
            autonomous_pairs: 10,
            ..Default::default()
        };
        let a = build_fleet(&grid, &cfg, &mut SimRng::seed_from_u64(42)).unwrap();
        let b = build_fleet(&grid, &cfg, &mut SimRng::seed_from_u64(42)).unwrap();
        assert_eq!(a.vehicles, b.vehicles);
        assert_eq!(a.vehicles.len(), 40);
        assert_eq!(
            a.vehicles.iter().filter(|v| v.slice_id == SliceId::Safety).count(),
            20
        );
        for v in &a.vehicles {
            assert!(grid.distance_to_street(v.pos) <= 1e-9);
        }
    }

    #[test]
    fn zero_vehicles_is_config_error() {
        let cfg = FleetConfig {
            safety_pairs: 0,
            autonomous_pairs: 0,
            ..Default::default()
        };
        let err = build_fleet(&RoadGrid::default(), &cfg, &mut SimRng::seed_from_u64(1));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn straight_advance_without_intersection() {
        let grid = RoadGrid::default();
        let mut v = vehicle_at(0.0, 0.0, Heading::PosX);
        let mut crossed = false;
        advance(&grid, &mut v, 8.333, |_, _, h| {
            crossed = true;
            h
        });
        assert!(!crossed);
        assert!((v.pos.x - 8.333).abs() < 1e-12);
        assert_eq!(v.pos.y, 0.0);
    }

    #[test]
    fn zero_dt_is_identity() {
        let grid = RoadGrid::default();
        let cfg = FleetConfig::default();
        let mut f = build_fleet(&grid, &cfg, &mut SimRng::seed_from_u64(3)).unwrap();
        let before = f.vehicles.clone();
        f.step(0.0, &mut SimRng::seed_from_u64(4));
        assert_eq!(before, f.vehicles);
    }

    #[test]
    fn wraps_around_the_torus() {
        let grid = RoadGrid::default();
        let mut v = vehicle_at(745.0, 0.0, Heading::PosX);
        advance(&grid, &mut v, 10.0, |_, _, h| h);
        assert!((v.pos.x - 5.0).abs() < 1e-9);
        let mut v = vehicle_at(3.0, 433.0, Heading::NegX);
        advance(&grid, &mut v, 10.0, |_, _, h| h);
        assert!((v.pos.x - 743.0).abs() < 1e-9);
    }

    #[test]
    fn turn_frequencies_match_probabilities() {
        // Short blocks make intersections frequent enough for a tight count.
        let grid = RoadGrid {
            blocks_x: 4,
            blocks_y: 4,
            block_w: 20.0,
            block_h: 20.0,
            lane_offset: 1.0,
        };
        let cfg = FleetConfig {
            safety_pairs: 10,
            autonomous_pairs: 10,
            pair_gap_m: 5.0,
            ..Default::default()
        };
        let mut rng = SimRng::seed_from_u64(11);
        let mut f = build_fleet(&grid, &cfg, &mut rng).unwrap();
        for _ in 0..100_000 {
            f.step(0.1, &mut rng);
        }
        let t = f.turns;
        let n = t.total() as f64;
        assert!(n > 50_000.0, "only {n} decisions");
        assert!((t.straight as f64 / n - 0.5).abs() < 0.01);
        assert!((t.left as f64 / n - 0.25).abs() < 0.01);
        assert!((t.right as f64 / n - 0.25).abs() < 0.01);
        for v in &f.vehicles {
            assert!(grid.distance_to_street(v.pos) <= 1e-6);
        }
    }

    #[test]
    fn receiver_keeps_gap_along_path() {
        let grid = RoadGrid::default();
        let cfg = FleetConfig::default();
        let mut rng = SimRng::seed_from_u64(5);
        let mut f = build_fleet(&grid, &cfg, &mut rng).unwrap();
        // 200 s of driving at 1 ms resolution would be slow; 100 ms steps
        // still cross many intersections.
        for _ in 0..2000 {
            f.step(0.1, &mut rng);
        }
        assert!(f.turns.total() > 0);
        for p in 0..f.pair_count() {
            let g = link_geometry(&grid, f.transmitter(p).pos, f.receiver(p).pos);
            assert!(
                ((g.d1 + g.d2) - cfg.pair_gap_m).abs() < 1e-6,
                "pair {p}: {g:?}"
            );
        }
    }

    #[test]
    fn density_corner_and_empty() {
        let grid = RoadGrid::default();
        let vs = [
            vehicle_at(1.0, 0.0, Heading::PosX),
            vehicle_at(0.0, 2.0, Heading::PosY),
        ];
        let d = density_snapshot(&vs, &grid, 3, 3);
        assert_eq!(d.get(0, 0), 2);
        assert_eq!(d.total(), 2);
        let empty: [Vehicle; 0] = [];
        let d = density_snapshot(&empty, &grid, 3, 3);
        assert!(d.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn density_uniform_points() {
        let grid = RoadGrid::default();
        let mut rng = SimRng::seed_from_u64(9);
        let vs: Vec<Vehicle> = (0..10_000)
            .map(|_| {
                vehicle_at(
                    rng.random::<f64>() * grid.width(),
                    rng.random::<f64>() * grid.height(),
                    Heading::PosX,
                )
            })
            .collect();
        let d = density_snapshot(&vs, &grid, 3, 3);
        let mean = 10_000.0 / 9.0;
        let chi2: f64 = d
            .counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2) / mean)
            .sum();
        // 8 degrees of freedom, 1% critical value 20.09.
        assert!(chi2 < 20.09, "chi2 = {chi2}");
        for &c in &d.counts {
            assert!((c as f64 - mean).abs() / mean < 0.05);
        }
    }

    #[test]
    fn geometry_examples() {
        let grid = RoadGrid::default();
        let g = link_geometry(&grid, Point::new(0.0, 0.0), Point::new(100.0, 0.0));
        assert_eq!(
            g,
            LinkGeometry {
                is_los: true,
                d1: 100.0,
                d2: 0.0
            }
        );
        let g = link_geometry(&grid, Point::new(50.0, 0.0), Point::new(0.0, 50.0));
        assert_eq!(
            g,
            LinkGeometry {
                is_los: false,
                d1: 50.0,
                d2: 50.0
            }
        );
    }

    fn on_street_point(grid: &RoadGrid, horizontal: bool, street: u32, t: f64) -> Point {
        if horizontal {
            Point::new(t * grid.width(), (street % grid.blocks_y) as f64 * grid.block_h)
        } else {
            Point::new((street % grid.blocks_x) as f64 * grid.block_w, t * grid.height())
        }
    }

    /// Shortest street-network path between two on-street points, found by
    /// brute force over every pair of corners.
    fn brute_force_path(grid: &RoadGrid, a: Point, b: Point) -> f64 {
        let (w, h) = (grid.width(), grid.height());
        let mut best = f64::INFINITY;
        if link_geometry(grid, a, b).is_los {
            return ring_distance(a.x, b.x, w).hypot(ring_distance(a.y, b.y, h));
        }
        for i in 0..grid.blocks_x {
            for j in 0..grid.blocks_y {
                let c = Point::new(i as f64 * grid.block_w, j as f64 * grid.block_h);
                let on_a = grid.distance_to_street(a) < 1e-9
                    && (grid.horizontal_street(a.y) == Some(j) || grid.vertical_street(a.x) == Some(i));
                if !on_a {
                    continue;
                }
                let d = ring_distance(a.x, c.x, w)
                    + ring_distance(a.y, c.y, h)
                    + ring_distance(c.x, b.x, w)
                    + ring_distance(c.y, b.y, h);
                best = best.min(d);
            }
        }
        best
    }

    proptest! {
        #[test]
        fn nlos_path_bounds(
            h1 in any::<bool>(), s1 in 0u32..4, t1 in 0.0f64..1.0,
            h2 in any::<bool>(), s2 in 0u32..4, t2 in 0.0f64..1.0,
        ) {
            let grid = RoadGrid::default();
            let a = on_street_point(&grid, h1, s1, t1);
            let b = on_street_point(&grid, h2, s2, t2);
            let g = link_geometry(&grid, a, b);
            let euclid = ring_distance(a.x, b.x, grid.width()).hypot(ring_distance(a.y, b.y, grid.height()));
            prop_assert!(g.d1 + g.d2 >= euclid - 1e-9);
            prop_assert!((g.d1 + g.d2 - brute_force_path(&grid, a, b)).abs() < 1e-6);

            let r = link_geometry(&grid, b, a);
            prop_assert_eq!(g.is_los, r.is_los);
            prop_assert!(((g.d1 + g.d2) - (r.d1 + r.d2)).abs() < 1e-6);
        }
    }

    #[test]
    fn nlos_never_shorter_than_euclid_bulk() {
        let grid = RoadGrid::default();
        let mut rng = SimRng::seed_from_u64(77);
        for _ in 0..10_000 {
            let a = on_street_point(&grid, rng.random(), rng.random_range(0..3), rng.random());
            let b = on_street_point(&grid, rng.random(), rng.random_range(0..3), rng.random());
            let g = link_geometry(&grid, a, b);
            let euclid = ring_distance(a.x, b.x, grid.width()).hypot(ring_distance(a.y, b.y, grid.height()));
            assert!(g.d1 + g.d2 >= euclid - 1e-9);
            if !g.is_los {
                assert!((g.d1 + g.d2 - brute_force_path(&grid, a, b)).abs() < 1e-6);
            }
        }
    }
}
