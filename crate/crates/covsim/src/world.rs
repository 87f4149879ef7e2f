//! Urban grid scenario: buildings on blocks, vehicles on lanes, pedestrians
//! on sidewalks, plus the ego vehicle. Mobility is a lane-following model on
//! a rectangular street grid with seeded turn choices at intersections.
//!
//! `step_world` is a pure function of the previous state: turn, respawn, and
//! CoV-flag draws are keyed off `(seed, frame, entity id)`, so replaying a
//! seed reproduces the trajectory exactly.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Rect, Vec2};
use crate::rng;
use crate::Error;

/// Simulation step, seconds (10 Hz frames).
pub const DT: f64 = 0.1;

/// Stable identifier for any simulated entity.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct EntityId(pub u64);

impl std::fmt::Display for EntityId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Vehicle,
    Pedestrian,
    Building,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    /// Travel along +/-x on a horizontal street (constant y).
    Horizontal,
    /// Travel along +/-y on a vertical street (constant x).
    Vertical,
}

/// Lane-following state for moving entities.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Nav {
    axis: Axis,
    /// +1 or -1 along the axis.
    dir: f64,
    /// Centerline coordinate of the street being followed (cross axis).
    street: f64,
    /// Signed lateral offset from the street centerline.
    lat_offset: f64,
    speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: EntityId,
    pub kind: EntityKind,
    pub footprint: Rect,
    pub velocity: Vec2,
    /// CP capability; meaningful for vehicles only.
    pub is_cov: bool,
    nav: Option<Nav>,
}

impl Entity {
    pub fn position(&self) -> Vec2 {
        self.footprint.center
    }

    /// A non-moving entity with no lane-following state. Useful for scripted
    /// scenes; `step_world` leaves it in place.
    pub fn static_entity(id: EntityId, kind: EntityKind, footprint: Rect, is_cov: bool) -> Self {
        Entity {
            id,
            kind,
            footprint,
            velocity: Vec2::default(),
            is_cov,
            nav: None,
        }
    }
}

/// Scenario geometry and population knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub block_size_m: f64,
    pub lane_width_m: f64,
    pub sidewalk_width_m: f64,
    pub vehicle_speed_min_mps: f64,
    pub vehicle_speed_max_mps: f64,
    pub pedestrian_speed_min_mps: f64,
    pub pedestrian_speed_max_mps: f64,
    pub n_vehicles: u32,
    pub n_pedestrians: u32,
    /// Market penetration ratio: probability that a spawned vehicle is a CoV.
    pub mpr: f64,
    pub comm_range_m: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            grid_cols: 3,
            grid_rows: 3,
            block_size_m: 100.0,
            lane_width_m: 3.5,
            sidewalk_width_m: 2.0,
            vehicle_speed_min_mps: 8.0,
            vehicle_speed_max_mps: 14.0,
            pedestrian_speed_min_mps: 1.0,
            pedestrian_speed_max_mps: 2.0,
            n_vehicles: 100,
            n_pedestrians: 60,
            mpr: 0.7,
            comm_range_m: 150.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.grid_cols == 0 || self.grid_rows == 0 {
            return Err(Error::Config("scenario.grid_cols/grid_rows must be >= 1".into()));
        }
        for (name, v) in [
            ("scenario.block_size_m", self.block_size_m),
            ("scenario.lane_width_m", self.lane_width_m),
            ("scenario.sidewalk_width_m", self.sidewalk_width_m),
            ("scenario.comm_range_m", self.comm_range_m),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.mpr) {
            return Err(Error::Config("scenario.mpr must lie in [0, 1]".into()));
        }
        for (name, lo, hi) in [
            (
                "scenario.vehicle_speed",
                self.vehicle_speed_min_mps,
                self.vehicle_speed_max_mps,
            ),
            (
                "scenario.pedestrian_speed",
                self.pedestrian_speed_min_mps,
                self.pedestrian_speed_max_mps,
            ),
        ] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::Config(format!("{name} range must satisfy 0 < min <= max")));
            }
        }
        let road_half = self.lane_width_m + self.sidewalk_width_m;
        if self.block_size_m <= 2.0 * road_half + 2.0 {
            return Err(Error::Config(
                "scenario.block_size_m too small for the street cross-section".into(),
            ));
        }
        Ok(())
    }

    /// Grid extent along x (vertical streets at 0, block, ..., extent).
    pub fn extent_x(&self) -> f64 {
        self.grid_cols as f64 * self.block_size_m
    }

    pub fn extent_y(&self) -> f64 {
        self.grid_rows as f64 * self.block_size_m
    }
}

const VEHICLE_HALF: Vec2 = Vec2::new(2.25, 1.0);
const PEDESTRIAN_HALF: Vec2 = Vec2::new(0.25, 0.25);
/// Despawn once this far past the grid edge.
const DESPAWN_MARGIN: f64 = 2.0;

/// Full simulation state at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub cfg: ScenarioConfig,
    pub seed: u64,
    pub frame_index: u64,
    pub time: f64,
    pub entities: Vec<Entity>,
    pub ego_id: EntityId,
    next_id: u64,
    spawned_vehicles: u64,
    spawned_covs: u64,
}

impl WorldState {
    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn ego(&self) -> &Entity {
        self.entity(self.ego_id).expect("ego present")
    }

    /// (total vehicle spawns, CoV spawns) since frame 0, ego excluded.
    pub fn spawn_stats(&self) -> (u64, u64) {
        (self.spawned_vehicles, self.spawned_covs)
    }
}

fn right_hand_lane_offset(cfg: &ScenarioConfig, axis: Axis, dir: f64) -> f64 {
    let half = cfg.lane_width_m / 2.0;
    match axis {
        Axis::Horizontal => -dir * half, // +x traffic keeps to -y
        Axis::Vertical => dir * half,    // +y traffic keeps to +x
    }
}

fn heading_of(axis: Axis, dir: f64) -> f64 {
    match axis {
        Axis::Horizontal => {
            if dir > 0.0 {
                0.0
            } else {
                std::f64::consts::PI
            }
        }
        Axis::Vertical => dir * std::f64::consts::FRAC_PI_2,
    }
}

fn place(axis: Axis, along: f64, cross: f64) -> Vec2 {
    match axis {
        Axis::Horizontal => Vec2::new(along, cross),
        Axis::Vertical => Vec2::new(cross, along),
    }
}

fn along_of(axis: Axis, p: Vec2) -> f64 {
    match axis {
        Axis::Horizontal => p.x,
        Axis::Vertical => p.y,
    }
}

fn extent_along(cfg: &ScenarioConfig, axis: Axis) -> f64 {
    match axis {
        Axis::Horizontal => cfg.extent_x(),
        Axis::Vertical => cfg.extent_y(),
    }
}

/// Number of cross streets intersecting a street of the given axis.
fn n_cross_streets(cfg: &ScenarioConfig, axis: Axis) -> u32 {
    match axis {
        Axis::Horizontal => cfg.grid_cols + 1,
        Axis::Vertical => cfg.grid_rows + 1,
    }
}

fn n_own_streets(cfg: &ScenarioConfig, axis: Axis) -> u32 {
    match axis {
        Axis::Horizontal => cfg.grid_rows + 1,
        Axis::Vertical => cfg.grid_cols + 1,
    }
}

fn make_vehicle(
    id: EntityId,
    cfg: &ScenarioConfig,
    axis: Axis,
    dir: f64,
    street: f64,
    along: f64,
    speed: f64,
    is_cov: bool,
) -> Entity {
    let lat = right_hand_lane_offset(cfg, axis, dir);
    let center = place(axis, along, street + lat);
    let vel = match axis {
        Axis::Horizontal => Vec2::new(dir * speed, 0.0),
        Axis::Vertical => Vec2::new(0.0, dir * speed),
    };
    Entity {
        id,
        kind: EntityKind::Vehicle,
        footprint: Rect::new(center, VEHICLE_HALF, heading_of(axis, dir)),
        velocity: vel,
        is_cov,
        nav: Some(Nav {
            axis,
            dir,
            street,
            lat_offset: lat,
            speed,
        }),
    }
}

fn spawn_vehicle_at_random<R: Rng>(
    id: EntityId,
    cfg: &ScenarioConfig,
    rng: &mut R,
    at_boundary: bool,
) -> Entity {
    let axis = if rng.random::<bool>() {
        Axis::Horizontal
    } else {
        Axis::Vertical
    };
    let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let street =
        rng.random_range(0..n_own_streets(cfg, axis)) as f64 * cfg.block_size_m;
    let ext = extent_along(cfg, axis);
    let along = if at_boundary {
        if dir > 0.0 {
            0.0
        } else {
            ext
        }
    } else {
        rng.random_range(0.0..ext)
    };
    let speed = rng.random_range(cfg.vehicle_speed_min_mps..=cfg.vehicle_speed_max_mps);
    let is_cov = rng.random::<f64>() < cfg.mpr;
    make_vehicle(id, cfg, axis, dir, street, along, speed, is_cov)
}

fn spawn_pedestrian<R: Rng>(
    id: EntityId,
    cfg: &ScenarioConfig,
    rng: &mut R,
    at_boundary: bool,
) -> Entity {
    let axis = if rng.random::<bool>() {
        Axis::Horizontal
    } else {
        Axis::Vertical
    };
    let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let street =
        rng.random_range(0..n_own_streets(cfg, axis)) as f64 * cfg.block_size_m;
    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let lat = side * (cfg.lane_width_m + cfg.sidewalk_width_m / 2.0);
    let ext = extent_along(cfg, axis);
    let along = if at_boundary {
        if dir > 0.0 {
            0.0
        } else {
            ext
        }
    } else {
        rng.random_range(0.0..ext)
    };
    let speed = rng.random_range(cfg.pedestrian_speed_min_mps..=cfg.pedestrian_speed_max_mps);
    let center = place(axis, along, street + lat);
    let vel = match axis {
        Axis::Horizontal => Vec2::new(dir * speed, 0.0),
        Axis::Vertical => Vec2::new(0.0, dir * speed),
    };
    Entity {
        id,
        kind: EntityKind::Pedestrian,
        footprint: Rect::new(center, PEDESTRIAN_HALF, 0.0),
        velocity: vel,
        is_cov: false,
        nav: Some(Nav {
            axis,
            dir,
            street,
            lat_offset: lat,
            speed,
        }),
    }
}

/// Builds frame 0 of the scenario, deterministically from `(cfg, seed)`.
pub fn build_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<WorldState, Error> {
    cfg.validate()?;
    let mut next_id = 0u64;
    let mut take_id = || {
        let id = EntityId(next_id);
        next_id += 1;
        id
    };
    let mut entities = Vec::new();

    // Buildings fill the block interiors, inset from the street cross-section.
    let road_half = cfg.lane_width_m + cfg.sidewalk_width_m;
    let building_half = cfg.block_size_m / 2.0 - road_half - 0.5;
    for bx in 0..cfg.grid_cols {
        for by in 0..cfg.grid_rows {
            let center = Vec2::new(
                (bx as f64 + 0.5) * cfg.block_size_m,
                (by as f64 + 0.5) * cfg.block_size_m,
            );
            entities.push(Entity {
                id: take_id(),
                kind: EntityKind::Building,
                footprint: Rect::axis_aligned(center, Vec2::new(building_half, building_half)),
                velocity: Vec2::default(),
                is_cov: false,
                nav: None,
            });
        }
    }

    let mut spawn_rng = rng::stream(seed, "spawn", &[]);

    // Ego starts near the grid center, eastbound.
    let ego_id = take_id();
    let ego_street = (cfg.grid_rows / 2) as f64 * cfg.block_size_m;
    let ego = make_vehicle(
        ego_id,
        cfg,
        Axis::Horizontal,
        1.0,
        ego_street,
        cfg.extent_x() / 2.0,
        (cfg.vehicle_speed_min_mps + cfg.vehicle_speed_max_mps) / 2.0,
        true,
    );
    entities.push(ego);

    let mut spawned_vehicles = 0u64;
    let mut spawned_covs = 0u64;
    for _ in 0..cfg.n_vehicles {
        let e = spawn_vehicle_at_random(take_id(), cfg, &mut spawn_rng, false);
        spawned_vehicles += 1;
        spawned_covs += e.is_cov as u64;
        entities.push(e);
    }
    for _ in 0..cfg.n_pedestrians {
        entities.push(spawn_pedestrian(take_id(), cfg, &mut spawn_rng, false));
    }

    Ok(WorldState {
        cfg: cfg.clone(),
        seed,
        frame_index: 0,
        time: 0.0,
        entities,
        ego_id,
        next_id,
        spawned_vehicles,
        spawned_covs,
    })
}

#[derive(Debug, Clone, Copy)]
enum Turn {
    Straight,
    Right,
    Left,
}

fn turned_dir(axis: Axis, dir: f64, turn: Turn) -> (Axis, f64) {
    match turn {
        Turn::Straight => (axis, dir),
        // Right turn rotates heading by -90 degrees, left by +90.
        Turn::Right => match axis {
            Axis::Horizontal => (Axis::Vertical, -dir),
            Axis::Vertical => (Axis::Horizontal, dir),
        },
        Turn::Left => match axis {
            Axis::Horizontal => (Axis::Vertical, dir),
            Axis::Vertical => (Axis::Horizontal, -dir),
        },
    }
}

/// Can a vehicle placed at `along` move in `dir` without immediately exiting?
fn dir_stays_in_grid(along: f64, dir: f64, extent: f64) -> bool {
    (dir > 0.0 && along < extent - 1e-9) || (dir < 0.0 && along > 1e-9)
}

fn step_vehicle(e: &Entity, w: &WorldState, is_ego: bool) -> Option<Entity> {
    let cfg = &w.cfg;
    let Some(nav) = e.nav else {
        return Some(e.clone());
    };
    let prev_along = along_of(nav.axis, e.position());
    let new_along = prev_along + nav.dir * nav.speed * DT;

    // First cross street passed during this step, if any.
    let crossed = (0..n_cross_streets(cfg, nav.axis))
        .map(|k| k as f64 * cfg.block_size_m)
        .filter(|&c| {
            if nav.dir > 0.0 {
                prev_along < c && c <= new_along
            } else {
                new_along <= c && c < prev_along
            }
        })
        .fold(None::<f64>, |best, c| match best {
            None => Some(c),
            Some(b) => {
                if (c - prev_along).abs() < (b - prev_along).abs() {
                    Some(c)
                } else {
                    Some(b)
                }
            }
        });

    if let Some(cross) = crossed {
        let mut turn_rng = rng::stream(w.seed, "turn", &[e.id.0, w.frame_index]);
        let r: f64 = turn_rng.random();
        let mut turn = if r < 0.5 {
            Turn::Straight
        } else if r < 0.75 {
            Turn::Right
        } else {
            Turn::Left
        };
        if is_ego {
            // The ego never leaves the grid: replace any exiting choice by a
            // turn that keeps it inside.
            let choices = [turn, Turn::Right, Turn::Left, Turn::Straight];
            turn = *choices
                .iter()
                .find(|&&t| {
                    let (na, nd) = turned_dir(nav.axis, nav.dir, t);
                    let (along, ext) = match t {
                        Turn::Straight => (cross, extent_along(cfg, na)),
                        _ => (nav.street, extent_along(cfg, na)),
                    };
                    dir_stays_in_grid(along, nd, ext)
                })
                .unwrap_or(&Turn::Straight);
        }
        match turn {
            Turn::Straight => {}
            t => {
                let (axis, dir) = turned_dir(nav.axis, nav.dir, t);
                let mut new = make_vehicle(
                    e.id, cfg, axis, dir, cross, nav.street, nav.speed, e.is_cov,
                );
                new.is_cov = e.is_cov;
                return Some(new);
            }
        }
    }

    let ext = extent_along(cfg, nav.axis);
    if !is_ego && (new_along < -DESPAWN_MARGIN || new_along > ext + DESPAWN_MARGIN) {
        return None;
    }
    let mut out = e.clone();
    out.footprint.center = place(nav.axis, new_along, nav.street + nav.lat_offset);
    Some(out)
}

fn step_pedestrian(e: &Entity, w: &WorldState) -> Option<Entity> {
    let Some(nav) = e.nav else {
        return Some(e.clone());
    };
    let prev_along = along_of(nav.axis, e.position());
    let new_along = prev_along + nav.dir * nav.speed * DT;
    let ext = extent_along(&w.cfg, nav.axis);
    if new_along < -DESPAWN_MARGIN || new_along > ext + DESPAWN_MARGIN {
        return None;
    }
    let mut out = e.clone();
    out.footprint.center = place(nav.axis, new_along, nav.street + nav.lat_offset);
    Some(out)
}

/// Advances every entity by one 100 ms step. Departed vehicles and
/// pedestrians are replaced by fresh boundary spawns so densities stay
/// stationary over long runs.
pub fn step_world(w: &WorldState) -> WorldState {
    let mut entities = Vec::with_capacity(w.entities.len());
    let mut next_id = w.next_id;
    let mut spawned_vehicles = w.spawned_vehicles;
    let mut spawned_covs = w.spawned_covs;

    for e in &w.entities {
        match e.kind {
            EntityKind::Building => entities.push(e.clone()),
            EntityKind::Vehicle => {
                let is_ego = e.id == w.ego_id;
                match step_vehicle(e, w, is_ego) {
                    Some(next) => entities.push(next),
                    None => {
                        let mut r = rng::stream(w.seed, "respawn", &[w.frame_index, e.id.0]);
                        let id = EntityId(next_id);
                        next_id += 1;
                        let fresh = spawn_vehicle_at_random(id, &w.cfg, &mut r, true);
                        spawned_vehicles += 1;
                        spawned_covs += fresh.is_cov as u64;
                        entities.push(fresh);
                    }
                }
            }
            EntityKind::Pedestrian => match step_pedestrian(e, w) {
                Some(next) => entities.push(next),
                None => {
                    let mut r = rng::stream(w.seed, "respawn", &[w.frame_index, e.id.0]);
                    let id = EntityId(next_id);
                    next_id += 1;
                    entities.push(spawn_pedestrian(id, &w.cfg, &mut r, true));
                }
            },
        }
    }

    let frame_index = w.frame_index + 1;
    WorldState {
        cfg: w.cfg.clone(),
        seed: w.seed,
        frame_index,
        time: frame_index as f64 * DT,
        entities,
        ego_id: w.ego_id,
        next_id,
        spawned_vehicles,
        spawned_covs,
    }
}

/// CoVs within communication range of the ego, nearest first, ties by id.
pub fn candidates_in_range(w: &WorldState) -> Vec<EntityId> {
    let ego_pos = w.ego().position();
    let mut by_dist: BTreeMap<(u64, u64), EntityId> = BTreeMap::new();
    for e in &w.entities {
        if e.kind != EntityKind::Vehicle || !e.is_cov || e.id == w.ego_id {
            continue;
        }
        let d = e.position().distance(ego_pos);
        if d <= w.cfg.comm_range_m {
            // Distance keyed by its IEEE-754 bits: non-negative floats sort
            // identically to their numeric order.
            by_dist.insert((d.to_bits(), e.id.0), e.id);
        }
    }
    by_dist.into_values().collect()
}
