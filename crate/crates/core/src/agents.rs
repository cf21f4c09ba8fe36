//! Non-mission behaviors: keyframe replay, IDM car following with
//! pure-pursuit lane keeping, and scripted lead vehicles.

use crate::dynamics::{Action, DynamicsLimits};
use crate::geom::{wrap_angle, Polyline, Pose, Vec2};
use crate::map::{Goal, LaneId, MapError, RoadNetwork, Route, SignalState};
use crate::sensors::Observation;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Hold,
    #[default]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub step: u64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    #[serde(default)]
    pub speed: f64,
}

impl Keyframe {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayTrack {
    pub keyframes: Vec<Keyframe>,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl ReplayTrack {
    pub fn validate(&self) -> Result<(), String> {
        if self.keyframes.is_empty() {
            return Err("replay track has no keyframes".into());
        }
        if self.keyframes.windows(2).any(|w| w[1].step <= w[0].step) {
            return Err("replay keyframe steps must be strictly increasing".into());
        }
        Ok(())
    }

    /// Pose and speed at `step`; endpoints are held outside the track span.
    pub fn sample(&self, step: u64) -> (Pose, f64) {
        let k = &self.keyframes;
        let i = k.partition_point(|f| f.step <= step);
        if i == 0 {
            return (k[0].pose(), k[0].speed);
        }
        let a = &k[i - 1];
        if a.step == step || i == k.len() || self.interpolation == Interpolation::Hold {
            return (a.pose(), a.speed);
        }
        let b = &k[i];
        let t = (step - a.step) as f64 / (b.step - a.step) as f64;
        let pa = a.pose();
        let pos = pa.position.lerp(b.pose().position, t);
        let heading = wrap_angle(a.heading + wrap_angle(b.heading - a.heading) * t);
        (
            Pose {
                position: pos,
                heading,
            },
            a.speed + (b.speed - a.speed) * t,
        )
    }
}

pub fn replay_action(track: &ReplayTrack, step: u64) -> Action {
    let (p, _) = track.sample(step);
    Action::TargetPose {
        x: p.position.x,
        y: p.position.y,
        heading: p.heading,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// Desired speed; the lane speed limit when absent.
    pub desired_speed: Option<f64>,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    pub exponent: f64,
    /// Pure-pursuit lookahead is `max(min_lookahead, lookahead_time * v)`.
    pub lookahead_time: f64,
    pub min_lookahead: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: None,
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 1.5,
            comfortable_decel: 2.0,
            exponent: 4.0,
            lookahead_time: 1.0,
            min_lookahead: 6.0,
        }
    }
}

/// A vehicle ahead on the path: bumper-to-bumper gap and its speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub gap: f64,
    pub speed: f64,
}

impl IdmParams {
    pub fn desired_gap(&self, v: f64, dv: f64) -> f64 {
        let b = (self.max_accel * self.comfortable_decel).sqrt();
        self.min_gap + (v * self.time_headway + v * dv / (2.0 * b)).max(0.0)
    }

    /// IDM acceleration at speed `v` toward desired speed `v0`.
    pub fn acceleration(&self, v: f64, v0: f64, leader: Option<Leader>) -> f64 {
        let free = 1.0 - (v / v0.max(1e-6)).powf(self.exponent);
        let interaction = match leader {
            None => 0.0,
            Some(l) if l.gap <= 0.0 => return f64::NEG_INFINITY,
            Some(l) => (self.desired_gap(v, v - l.speed) / l.gap).powi(2),
        };
        self.max_accel * (free - interaction)
    }

    /// Gap at which a follower at `v` behind a leader at the same speed has
    /// zero acceleration.
    pub fn equilibrium_gap(&self, v: f64, v0: f64) -> f64 {
        self.desired_gap(v, 0.0) / (1.0 - (v / v0).powf(self.exponent)).sqrt()
    }
}

/// Maps an acceleration request to pedals; never both at once.
pub fn pedals(accel: f64, limits: &DynamicsLimits) -> (f64, f64) {
    if accel >= 0.0 {
        ((accel / limits.max_accel).min(1.0), 0.0)
    } else {
        (0.0, (-accel / limits.max_decel).min(1.0))
    }
}

/// Polyline from the ego through its route waypoints.
pub fn path_of(obs: &Observation) -> Option<Polyline> {
    let mut pts = Vec::with_capacity(obs.waypoints.len() + 1);
    pts.push(obs.ego.position);
    for w in &obs.waypoints {
        if pts.last().is_some_and(|p: &Vec2| p.distance(w.position) > 1e-6) {
            pts.push(w.position);
        }
    }
    if pts.len() < 2 {
        pts.push(obs.ego.position + obs.ego.forward() * 30.0);
    }
    Polyline::new(pts)
}

/// Nearest neighbor occupying the path ahead of the ego.
pub fn find_leader(obs: &Observation) -> Option<Leader> {
    let path = path_of(obs)?;
    let lane_half = 0.5 * obs.lane.width;
    let mut best: Option<Leader> = None;
    for n in &obs.neighbors {
        let proj = path.project(n.state.position);
        if proj.station <= 0.0 {
            continue;
        }
        if proj.offset.abs() > lane_half + 0.5 * n.state.width {
            continue;
        }
        let gap = proj.station - 0.5 * (obs.ego.length + n.state.length);
        // Speed component along the path.
        let along = Vec2::from_angle(path.heading_at(proj.station));
        let speed = n.state.velocity.dot(along).max(0.0);
        if best.is_none_or(|b| gap < b.gap) {
            best = Some(Leader { gap, speed });
        }
    }
    best
}

/// Treats a red (or unavoidable-to-stop yellow) light as a stopped leader at
/// the stop line.
pub fn signal_leader(obs: &Observation, p: &IdmParams) -> Option<Leader> {
    let v = obs.ego.speed;
    obs.signals
        .iter()
        .filter_map(|s| Some((s.state?, s.distance)))
        .filter(|&(state, d)| match state {
            SignalState::Red => true,
            SignalState::Yellow => d > v * v / (2.0 * p.comfortable_decel),
            SignalState::Green => false,
        })
        .map(|(_, d)| Leader {
            gap: d - 0.5 * obs.ego.length - 1.0,
            speed: 0.0,
        })
        .min_by(|a, b| a.gap.total_cmp(&b.gap))
}

/// Steering command in [-1, 1] toward the waypoint `lookahead` meters ahead.
pub fn pure_pursuit(obs: &Observation, lookahead: f64, limits: &DynamicsLimits) -> f64 {
    let Some(path) = path_of(obs) else {
        return 0.0;
    };
    let target = path.point_at(lookahead.min(path.length()));
    let local = (target - obs.ego.position).rotate(-obs.ego.heading);
    let ld2 = local.norm_sq();
    if ld2 < 1e-9 {
        return 0.0;
    }
    let curvature = 2.0 * local.y / ld2;
    let delta = (curvature * limits.wheelbase).atan();
    (delta / limits.max_steer_angle).clamp(-1.0, 1.0)
}

pub fn reactive_action(obs: &Observation, p: &IdmParams, limits: &DynamicsLimits) -> Action {
    let v0 = p.desired_speed.unwrap_or(obs.lane.speed_limit);
    reactive_with_speed(obs, p, limits, v0)
}

fn reactive_with_speed(obs: &Observation, p: &IdmParams, limits: &DynamicsLimits, v0: f64) -> Action {
    let v = obs.ego.speed;
    let leader = [find_leader(obs), signal_leader(obs, p)]
        .into_iter()
        .flatten()
        .min_by(|a, b| a.gap.total_cmp(&b.gap));
    let accel = p.acceleration(v, v0, leader);
    let (throttle, brake) = pedals(accel, limits);
    let lookahead = p.min_lookahead.max(p.lookahead_time * v);
    Action::Continuous {
        throttle,
        brake,
        steering: pure_pursuit(obs, lookahead, limits),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Behavior {
    Cruise { speed: f64 },
    Merge { lane: LaneId },
    Exit { lane: LaneId },
    Turn { lane: LaneId },
    /// Brake to a standstill, then hold for `duration` seconds.
    Stop { duration: f64 },
}

impl Behavior {
    fn target_lane(&self) -> Option<&LaneId> {
        match self {
            Behavior::Merge { lane } | Behavior::Exit { lane } | Behavior::Turn { lane } => {
                Some(lane)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Step(u64),
    /// Distance travelled along the lead's path, meters.
    Station(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadSegment {
    pub trigger: Trigger,
    pub behavior: Behavior,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LeadScript {
    pub segments: Vec<LeadSegment>,
}

/// Follows first successors from `lane` until the path ends or loops.
fn continuation(net: &RoadNetwork, lane: &LaneId, path: &mut Vec<LaneId>) {
    let mut cur = lane.clone();
    for _ in 0..64 {
        let Some(next) = net.lane(&cur).and_then(|l| l.successors.first()) else {
            break;
        };
        if path.contains(next) {
            break;
        }
        path.push(next.clone());
        cur = next.clone();
    }
}

/// Redirects `path` into `target` at the first lane from `from` onward that
/// connects to it. Returns false when no such lane exists.
fn redirect(net: &RoadNetwork, path: &mut Vec<LaneId>, from: usize, target: &LaneId) -> bool {
    if path[from..].contains(target) {
        return true;
    }
    let Some(i) = (from..path.len()).find(|&i| net.connected(&path[i], target)) else {
        return false;
    };
    path.truncate(i + 1);
    path.push(target.clone());
    continuation(net, target, path);
    true
}

impl LeadScript {
    pub fn validate(&self, net: &RoadNetwork) -> Result<(), String> {
        let (mut last_step, mut last_station) = (0u64, 0.0f64);
        for seg in &self.segments {
            match seg.trigger {
                Trigger::Step(s) if s < last_step => {
                    return Err("lead script step triggers must be non-decreasing".into())
                }
                Trigger::Step(s) => last_step = s,
                Trigger::Station(x) if !(x >= last_station) => {
                    return Err("lead script station triggers must be non-decreasing".into())
                }
                Trigger::Station(x) => last_station = x,
            }
            match &seg.behavior {
                Behavior::Cruise { speed } if !(*speed > 0.0) => {
                    return Err("cruise speed must be positive".into())
                }
                Behavior::Stop { duration } if !(*duration >= 0.0) => {
                    return Err("stop duration must be non-negative".into())
                }
                b => {
                    if let Some(l) = b.target_lane() {
                        if net.lane(l).is_none() {
                            return Err(format!("lead script references unknown lane `{l}`"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// The lane sequence the lead ends up driving when every segment fires.
    pub fn resolve_path(&self, net: &RoadNetwork, base: &[LaneId]) -> Result<Vec<LaneId>, MapError> {
        let mut path = base.to_vec();
        for seg in &self.segments {
            if let Some(target) = seg.behavior.target_lane() {
                if !redirect(net, &mut path, 0, target) {
                    return Err(MapError::InvalidRoute(format!(
                        "lead cannot reach `{target}` from its path"
                    )));
                }
            }
        }
        Ok(path)
    }
}

/// Scripted vehicles leave the map this far before the end of their path so
/// that their footprint stays on the road.
pub const PATH_END_CLEARANCE: f64 = 5.0;

fn path_route(net: &RoadNetwork, path: Vec<LaneId>) -> Route {
    let line = &net.lane(path.last().unwrap()).unwrap().centerline;
    let end = line.point_at((line.length() - PATH_END_CLEARANCE).max(0.0));
    Route::new(path, Goal::new(end))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum StopPhase {
    Idle,
    Braking { duration: f64 },
    Holding { until: u64 },
}

/// Stateful executor of a lead script. The script is never exposed to
/// mission policies.
#[derive(Debug, Clone)]
pub struct LeadController {
    script: LeadScript,
    route: Route,
    next: usize,
    desired_speed: f64,
    stop: StopPhase,
    params: IdmParams,
    limits: DynamicsLimits,
}

impl LeadController {
    pub fn new(
        net: &RoadNetwork,
        script: LeadScript,
        base: Vec<LaneId>,
        desired_speed: f64,
        limits: DynamicsLimits,
    ) -> Self {
        Self {
            script,
            route: path_route(net, base),
            next: 0,
            desired_speed,
            stop: StopPhase::Idle,
            params: IdmParams::default(),
            limits,
        }
    }

    pub fn route(&self) -> &Route {
        &self.route
    }

    /// Fires every segment whose trigger has been met at `step` given the
    /// lead's current position.
    pub fn update(&mut self, net: &RoadNetwork, step: u64, position: Vec2) {
        let located = self.route.locate(net, position).ok();
        let travelled = located.map_or(0.0, |p| self.route.distance_along(net, p));
        let index = located.map_or(0, |p| p.index);
        while let Some(seg) = self.script.segments.get(self.next) {
            let due = match seg.trigger {
                Trigger::Step(s) => step >= s,
                Trigger::Station(x) => travelled >= x,
            };
            if !due {
                break;
            }
            match &seg.behavior {
                Behavior::Cruise { speed } => self.desired_speed = *speed,
                Behavior::Stop { duration } => {
                    self.stop = StopPhase::Braking {
                        duration: *duration,
                    }
                }
                b => {
                    let target = b.target_lane().unwrap();
                    let mut path = self.route.lanes.clone();
                    if redirect(net, &mut path, index, target) {
                        self.route = path_route(net, path);
                    }
                }
            }
            self.next += 1;
        }
    }

    /// Control for the current step; `obs` must be built on `self.route()`.
    pub fn action(&mut self, obs: &Observation) -> Action {
        let steering = {
            let v = obs.ego.speed;
            let lookahead = (self.params.lookahead_time * v).max(8.0);
            pure_pursuit(obs, lookahead, &self.limits)
        };
        match self.stop {
            StopPhase::Braking { duration } => {
                if obs.ego.speed <= 1e-9 {
                    let hold = (duration / obs.dt).round() as u64;
                    self.stop = StopPhase::Holding {
                        until: obs.step + hold,
                    };
                } else {
                    return Action::Continuous {
                        throttle: 0.0,
                        brake: 0.5,
                        steering,
                    };
                }
            }
            StopPhase::Holding { until } if obs.step >= until => self.stop = StopPhase::Idle,
            _ => {}
        }
        if let StopPhase::Holding { .. } = self.stop {
            return Action::Continuous {
                throttle: 0.0,
                brake: 1.0,
                steering,
            };
        }
        let v0 = self.desired_speed.min(obs.lane.speed_limit);
        reactive_with_speed(obs, &self.params, &self.limits, v0)
    }

    pub fn stopping(&self) -> bool {
        self.stop != StopPhase::Idle
    }
}
