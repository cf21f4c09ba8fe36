//! Ego observations computed from a frozen world snapshot: occlusion-aware
//! visibility, neighbor lists, route waypoints, lane and signal context.

use crate::dynamics::{footprint, VehicleState};
use crate::engine::{ActorId, LaneContext, WorldState};
use crate::geom::{wrap_angle, OrientedRect, Pose, Vec2};
use crate::map::{waypoints_along, Goal, LaneId, MapError, RoadNetwork, Route, SignalState};
use crate::v2v::V2vMessage;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Perimeter sample spacing for visibility fractions, meters.
const PERIMETER_SPACING: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("unknown actor `{0}`")]
    UnknownActor(ActorId),
    #[error(transparent)]
    Route(#[from] MapError),
    #[error("invalid sensor config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub range: f64,
    pub rays: usize,
    /// Minimum visible fraction of a neighbor's outline.
    pub threshold: f64,
    pub waypoint_horizon: f64,
    pub waypoint_spacing: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            range: 50.0,
            rays: 720,
            threshold: 0.25,
            waypoint_horizon: 40.0,
            waypoint_spacing: 1.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        let bad = |m: &str| Err(SensorError::Config(m.into()));
        if !(self.range > 0.0) {
            return bad("range must be positive");
        }
        if self.rays < 36 {
            return bad("at least 36 rays are required");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must be in [0, 1]");
        }
        if !(self.waypoint_horizon > 0.0 && self.waypoint_spacing > 0.0) {
            return bad("waypoint horizon and spacing must be positive");
        }
        Ok(())
    }
}

/// A validated config with its precomputed ray directions.
#[derive(Debug, Clone)]
pub struct Sensor {
    config: SensorConfig,
    dirs: Vec<Vec2>,
}

impl Sensor {
    pub fn new(config: SensorConfig) -> Result<Self, SensorError> {
        config.validate()?;
        let n = config.rays;
        let dirs = (0..n)
            .map(|k| Vec2::from_angle(TAU * k as f64 / n as f64))
            .collect();
        Ok(Self { config, dirs })
    }

    pub fn config(&self) -> &SensorConfig {
        &self.config
    }
}

impl Default for Sensor {
    fn default() -> Self {
        Sensor::new(SensorConfig::default()).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: ActorId,
    pub state: VehicleState,
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalObservation {
    pub id: String,
    pub phase: usize,
    /// Along-route distance to the controlled stop line when the route
    /// crosses it, otherwise straight-line distance to the nearest one.
    pub distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane: Option<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<SignalState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionInfo {
    pub goal: Goal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lead: Option<ActorId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: u64,
    pub dt: f64,
    pub ego_id: ActorId,
    pub ego: VehicleState,
    pub neighbors: Vec<Neighbor>,
    pub visibility_polygon: Vec<Vec2>,
    pub waypoints: Vec<Pose>,
    pub lane: LaneContext,
    pub signals: Vec<SignalObservation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mission: Option<MissionInfo>,
    #[serde(default)]
    pub messages: Vec<V2vMessage>,
}

impl Observation {
    pub fn neighbor(&self, id: &ActorId) -> Option<&Neighbor> {
        self.neighbors.iter().find(|n| &n.id == id)
    }
}

/// Angular extent of a footprint seen from the ego, plus its distance band.
#[derive(Debug, Clone, Copy)]
struct Shadow {
    rect: OrientedRect,
    /// Start angle and (non-negative) width of the subtended interval.
    lo: f64,
    span: f64,
    near: f64,
    far: f64,
}

impl Shadow {
    /// None when the ego stands inside the rectangle.
    fn new(ego: Vec2, rect: OrientedRect) -> Option<Self> {
        if rect.contains(ego) {
            return None;
        }
        let mid = (rect.center - ego).angle();
        let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut far: f64 = 0.0;
        for c in rect.corners() {
            let d = wrap_angle((c - ego).angle() - mid);
            dmin = dmin.min(d);
            dmax = dmax.max(d);
            far = far.max((c - ego).norm());
        }
        let center_dist = (rect.center - ego).norm();
        Some(Shadow {
            rect,
            lo: mid + dmin,
            span: dmax - dmin,
            near: (center_dist - rect.bounding_radius()).max(0.0),
            far,
        })
    }

    fn overlaps(&self, other: &Shadow) -> bool {
        let d = wrap_angle(other.lo - self.lo);
        if d >= 0.0 {
            d <= self.span
        } else {
            -d <= other.span
        }
    }

    fn covers(&self, angle: f64) -> bool {
        let d = (angle - self.lo).rem_euclid(TAU);
        d <= self.span
    }
}

fn shadows(world: &WorldState, ego: &ActorId, origin: Vec2) -> Vec<(ActorId, Shadow)> {
    world
        .present()
        .filter(|(id, _)| *id != ego)
        .filter_map(|(id, a)| Shadow::new(origin, footprint(&a.state)).map(|s| (id.clone(), s)))
        .collect()
}

fn ego_state<'a>(world: &'a WorldState, ego: &ActorId) -> Result<&'a VehicleState, SensorError> {
    world
        .actors
        .get(ego)
        .filter(|a| a.present())
        .map(|a| &a.state)
        .ok_or_else(|| SensorError::UnknownActor(ego.clone()))
}

/// Star-shaped polygon of ray endpoints around the ego, in angular order
/// starting at world angle 0.
pub fn visibility_polygon(
    world: &WorldState,
    ego: &ActorId,
    sensor: &Sensor,
) -> Result<Vec<Vec2>, SensorError> {
    let origin = ego_state(world, ego)?.position;
    let shadows = shadows(world, ego, origin);
    Ok(cast(origin, &shadows, sensor))
}

fn cast(origin: Vec2, shadows: &[(ActorId, Shadow)], sensor: &Sensor) -> Vec<Vec2> {
    let range = sensor.config.range;
    let n = sensor.dirs.len();
    let mut t = vec![range; n];
    let per_ray = TAU / n as f64;
    for (_, s) in shadows {
        if s.near >= range {
            continue;
        }
        // Widened by a hair; rays that miss are rejected by the exact test.
        let first = (s.lo / per_ray - 1e-6).ceil() as i64;
        let last = ((s.lo + s.span) / per_ray + 1e-6).floor() as i64;
        for k in first..=last {
            let idx = k.rem_euclid(n as i64) as usize;
            if let Some(hit) = s.rect.ray_entry(origin, sensor.dirs[idx], t[idx]) {
                t[idx] = hit;
            }
        }
    }
    sensor
        .dirs
        .iter()
        .zip(&t)
        .map(|(&d, &ti)| origin + d * ti)
        .collect()
}

/// Trapezoid-weighted fraction of `target`'s outline with a clear line of
/// sight from `origin`; `occluders` excludes the target itself.
fn visible_fraction(origin: Vec2, target: &Shadow, occluders: &[&Shadow]) -> f64 {
    let blockers: Vec<&Shadow> = occluders
        .iter()
        .copied()
        .filter(|o| o.near < target.far && o.overlaps(target))
        .collect();
    if blockers.is_empty() {
        return 1.0;
    }
    let corners = target.rect.corners();
    let (mut seen, mut total) = (0.0, 0.0);
    for i in 0..4 {
        let (a, b) = (corners[i], corners[(i + 1) % 4]);
        let len = (b - a).norm();
        let n = (len / PERIMETER_SPACING).ceil().max(1.0) as usize;
        for j in 0..=n {
            let w = if j == 0 || j == n { 0.5 } else { 1.0 } * len / n as f64;
            let p = a.lerp(b, j as f64 / n as f64);
            total += w;
            if line_of_sight(origin, p, &blockers) {
                seen += w;
            }
        }
    }
    seen / total
}

fn line_of_sight(origin: Vec2, p: Vec2, blockers: &[&Shadow]) -> bool {
    let d = p - origin;
    let dist = d.norm();
    if dist == 0.0 {
        return true;
    }
    let dir = d * (1.0 / dist);
    let angle = dir.angle();
    blockers.iter().all(|s| {
        s.near >= dist
            || !s.covers(angle)
            || s.rect.ray_entry(origin, dir, dist).is_none_or(|t| t >= dist)
    })
}

/// Other actors within range whose visible outline fraction meets the
/// threshold, in id order.
pub fn visible_neighbors(
    world: &WorldState,
    ego: &ActorId,
    sensor: &Sensor,
) -> Result<Vec<Neighbor>, SensorError> {
    let origin = ego_state(world, ego)?.position;
    let shadows = shadows(world, ego, origin);
    Ok(neighbors_from(world, origin, &shadows, sensor))
}

fn neighbors_from(
    world: &WorldState,
    origin: Vec2,
    shadows: &[(ActorId, Shadow)],
    sensor: &Sensor,
) -> Vec<Neighbor> {
    let range2 = sensor.config.range * sensor.config.range;
    let mut out = Vec::new();
    for (i, (id, s)) in shadows.iter().enumerate() {
        let state = &world.actors[id].state;
        if (state.position - origin).norm_sq() > range2 {
            continue;
        }
        let others: Vec<&Shadow> = shadows
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, (_, o))| o)
            .collect();
        let visibility = visible_fraction(origin, s, &others);
        if visibility >= sensor.config.threshold {
            out.push(Neighbor {
                id: id.clone(),
                state: *state,
                visibility,
            });
        }
    }
    out
}

/// Visibility fraction of `target` from `ego`, regardless of range and
/// threshold. Zero when either actor is missing or the ego is inside it.
pub fn visibility_fraction(world: &WorldState, ego: &ActorId, target: &ActorId) -> f64 {
    let Ok(ego_s) = ego_state(world, ego) else {
        return 0.0;
    };
    let origin = ego_s.position;
    let shadows = shadows(world, ego, origin);
    let Some((_, t)) = shadows.iter().find(|(id, _)| id == target) else {
        return 0.0;
    };
    let others: Vec<&Shadow> = shadows
        .iter()
        .filter(|(id, _)| id != target)
        .map(|(_, s)| s)
        .collect();
    visible_fraction(origin, t, &others)
}

fn signals_in_range(
    net: &RoadNetwork,
    world: &WorldState,
    ego: Vec2,
    route: Option<&Route>,
    range: f64,
) -> Vec<SignalObservation> {
    let located = route.and_then(|r| r.locate(net, ego).ok().map(|p| (r, p)));
    let mut out = Vec::new();
    for sig in net.signals() {
        let phase = world.signal_phases.get(&sig.id).copied().unwrap_or(0);
        let on_route = located.and_then(|(r, pos)| {
            let here = r.distance_along(net, pos);
            (pos.index + 1..r.lanes.len())
                .find(|&i| sig.lanes.contains(&r.lanes[i]))
                .map(|i| {
                    let start = crate::map::RoutePosition {
                        index: i,
                        station: 0.0,
                        distance: 0.0,
                    };
                    (r.lanes[i].clone(), r.distance_along(net, start) - here)
                })
        });
        if let Some((lane, distance)) = on_route.filter(|(_, d)| *d <= range) {
            let state = sig.state(phase, &lane);
            out.push(SignalObservation {
                id: sig.id.clone(),
                phase,
                distance,
                lane: Some(lane),
                state: Some(state),
            });
            continue;
        }
        let nearest = sig
            .lanes
            .iter()
            .filter_map(|l| net.lane(l))
            .map(|l| l.centerline.start().distance(ego))
            .fold(f64::INFINITY, f64::min);
        if nearest <= range {
            out.push(SignalObservation {
                id: sig.id.clone(),
                phase,
                distance: nearest,
                lane: None,
                state: None,
            });
        }
    }
    out
}

/// Full observation with ray-cast occlusion. Fails when the ego is farther
/// than the capture distance from its route.
pub fn observe(
    net: &RoadNetwork,
    world: &WorldState,
    ego: &ActorId,
    route: Option<&Route>,
    sensor: &Sensor,
) -> Result<Observation, SensorError> {
    let state = *ego_state(world, ego)?;
    let shadows = shadows(world, ego, state.position);
    let neighbors = neighbors_from(world, state.position, &shadows, sensor);
    let polygon = cast(state.position, &shadows, sensor);
    assemble(net, world, ego, state, route, sensor, neighbors, polygon)
}

/// Cheap observation for scripted traffic: every actor within range is
/// reported with visibility 1 and no occlusion polygon is computed.
pub fn observe_kinematic(
    net: &RoadNetwork,
    world: &WorldState,
    ego: &ActorId,
    route: Option<&Route>,
    sensor: &Sensor,
) -> Result<Observation, SensorError> {
    let state = *ego_state(world, ego)?;
    let range2 = sensor.config.range * sensor.config.range;
    let neighbors = world
        .present()
        .filter(|(id, a)| *id != ego && (a.state.position - state.position).norm_sq() <= range2)
        .map(|(id, a)| Neighbor {
            id: id.clone(),
            state: a.state,
            visibility: 1.0,
        })
        .collect();
    assemble(net, world, ego, state, route, sensor, neighbors, Vec::new())
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    net: &RoadNetwork,
    world: &WorldState,
    ego: &ActorId,
    state: VehicleState,
    route: Option<&Route>,
    sensor: &Sensor,
    neighbors: Vec<Neighbor>,
    visibility_polygon: Vec<Vec2>,
) -> Result<Observation, SensorError> {
    let cfg = sensor.config;
    let waypoints = match route {
        Some(r) => waypoints_along(
            net,
            r,
            state.pose(),
            cfg.waypoint_horizon,
            cfg.waypoint_spacing,
        )?,
        None => Vec::new(),
    };
    let lane = world
        .actors
        .get(ego)
        .map(|a| a.lane.clone())
        .unwrap_or_else(|| LaneContext::at(net, state.position));
    let signals = signals_in_range(net, world, state.position, route, cfg.range);
    Ok(Observation {
        step: world.step,
        dt: world.dt,
        ego_id: ego.clone(),
        ego: state,
        neighbors,
        visibility_polygon,
        waypoints,
        lane,
        signals,
        mission: None,
        messages: Vec::new(),
    })
}
