//! Rule-based reference policies for mission vehicles.

use crate::agents::{find_leader, path_of, pedals, signal_leader, IdmParams, Leader};
use crate::dynamics::{Action, DynamicsLimits, VehicleState};
use crate::engine::ActorId;
use crate::geom::Vec2;
use crate::metrics::MIN_FOLLOW_MARGIN;
use crate::sensors::Observation;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

/// Neighbors whose closest approach falls within this horizon slow the
/// waypoint follower down, seconds.
pub const TTC_THRESHOLD: f64 = 3.0;
/// How long the lead follower trusts an extrapolated lead, seconds.
pub const LEAD_MEMORY: f64 = 2.0;

pub trait Policy: Send {
    fn act(&mut self, obs: &Observation) -> Action;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    WaypointFollower,
    LeadFollower,
    ConstantBrake,
    /// Zero relative displacement: the vehicle holds its pose.
    Zero,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::WaypointFollower,
        PolicyKind::LeadFollower,
        PolicyKind::ConstantBrake,
        PolicyKind::Zero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::WaypointFollower => "waypoint_follower",
            PolicyKind::LeadFollower => "lead_follower",
            PolicyKind::ConstantBrake => "constant_brake",
            PolicyKind::Zero => "zero",
        }
    }

    pub fn build(self, limits: DynamicsLimits) -> Box<dyn Policy> {
        match self {
            PolicyKind::WaypointFollower => Box::new(WaypointFollower::new(limits)),
            PolicyKind::LeadFollower => Box::new(LeadFollower::new(limits)),
            PolicyKind::ConstantBrake => Box::new(ConstantBrake),
            PolicyKind::Zero => Box::new(ZeroAction),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown policy `{s}` (expected one of {})", names.join(", "))
            })
    }
}

pub struct ConstantBrake;

impl Policy for ConstantBrake {
    fn act(&mut self, _obs: &Observation) -> Action {
        FULL_BRAKE
    }
}

pub struct ZeroAction;

impl Policy for ZeroAction {
    fn act(&mut self, _obs: &Observation) -> Action {
        Action::ZERO_RELATIVE
    }
}

const FULL_BRAKE: Action = Action::Continuous {
    throttle: 0.0,
    brake: 1.0,
    steering: 0.0,
};

/// Comfortable rate of change of the commanded acceleration, m/s^3.
const JERK_BAND: f64 = 0.8;
/// Lateral acceleration budget in curves, m/s^2.
const LATERAL_BUDGET: f64 = 1.2;

/// Time of closest approach and the distance at that time for two vehicles
/// moving at constant velocity.
fn closest_approach(ego: &VehicleState, other: &VehicleState) -> (f64, f64) {
    let r = other.position - ego.position;
    let v = other.velocity - ego.forward() * ego.speed;
    let vv = v.norm_sq();
    let t = if vv < 1e-12 { 0.0 } else { -r.dot(v) / vv };
    let t = t.max(0.0);
    (t, (r + v * t).norm())
}

fn conflict_radius(a: &VehicleState, b: &VehicleState) -> f64 {
    0.5 * (a.length.hypot(a.width) + b.length.hypot(b.width))
}

/// Deceleration used to slow down ahead of curves, m/s^2.
const CURVE_DECEL: f64 = 1.0;

/// Highest speed from which every curve on the previewed path can be taken
/// within the lateral budget while braking at `CURVE_DECEL`.
fn curve_speed(obs: &Observation) -> f64 {
    let mut best = f64::INFINITY;
    let mut travelled = obs
        .waypoints
        .first()
        .map_or(0.0, |w| w.position.distance(obs.ego.position));
    for w in obs.waypoints.windows(2) {
        let ds = w[0].position.distance(w[1].position);
        if ds < 1e-6 {
            continue;
        }
        let k = crate::geom::wrap_angle(w[1].heading - w[0].heading).abs() / ds;
        if k > 1e-6 {
            best = best.min((LATERAL_BUDGET / k + 2.0 * CURVE_DECEL * travelled).sqrt());
        }
        travelled += ds;
    }
    best
}

/// Arc displacement of length `d` toward `target` given in the ego frame.
fn arc_toward(target: Vec2, d: f64) -> Action {
    let ld2 = target.norm_sq();
    if d <= 0.0 || ld2 < 1e-9 {
        return Action::ZERO_RELATIVE;
    }
    let kappa = 2.0 * target.y / ld2;
    let dheading = kappa * d;
    let (dx, dy) = if kappa.abs() < 1e-9 {
        (d, 0.0)
    } else {
        (dheading.sin() / kappa, (1.0 - dheading.cos()) / kappa)
    };
    Action::RelativeTargetPose { dx, dy, dheading }
}

/// Limits how fast the commanded acceleration moves away from the current
/// one, unless a harder brake than comfort allows is needed.
fn smooth_accel(current: f64, wanted: f64, dt: f64) -> f64 {
    let lo = current - JERK_BAND * dt;
    let hi = current + JERK_BAND * dt;
    if wanted < lo && wanted < -1.0 {
        wanted
    } else {
        wanted.clamp(lo, hi)
    }
}

/// Follows the route waypoints at the lane speed limit with a pose action.
#[derive(Debug, Clone)]
pub struct WaypointFollower {
    pub idm: IdmParams,
    pub limits: DynamicsLimits,
}

impl WaypointFollower {
    pub fn new(limits: DynamicsLimits) -> Self {
        Self {
            idm: IdmParams::default(),
            limits,
        }
    }

    /// Whether a visible neighbor is on course to come within contact range
    /// inside the TTC horizon.
    pub fn conflict(obs: &Observation) -> bool {
        obs.neighbors.iter().any(|n| {
            let (t, d) = closest_approach(&obs.ego, &n.state);
            let ahead = (n.state.position - obs.ego.position).dot(obs.ego.forward()) > 0.0;
            ahead && t < TTC_THRESHOLD && d < conflict_radius(&obs.ego, &n.state)
        })
    }
}

impl Policy for WaypointFollower {
    fn act(&mut self, obs: &Observation) -> Action {
        if obs.mission.as_ref().is_some_and(|m| m.goal.reached(obs.ego.position)) {
            return Action::ZERO_RELATIVE;
        }
        let Some(path) = path_of(obs) else {
            return Action::ZERO_RELATIVE;
        };
        let v = obs.ego.speed;
        let limit = obs.lane.speed_limit.min(self.limits.max_speed);
        let v_des = limit.min(curve_speed(obs));
        let leader = [find_leader(obs), signal_leader(obs, &self.idm)]
            .into_iter()
            .flatten()
            .min_by(|a, b| a.gap.total_cmp(&b.gap));
        let mut accel = self.idm.acceleration(v, v_des, leader);
        if leader.is_none() {
            accel = accel.max(-CURVE_DECEL);
        }
        if Self::conflict(obs) {
            accel = accel.min(-self.idm.comfortable_decel * 1.5);
        }
        let accel = smooth_accel(obs.ego.accel.long, accel, obs.dt)
            .clamp(-self.limits.max_decel, self.limits.max_accel);
        let v1 = (v + accel * obs.dt).clamp(0.0, limit);
        let d = v1 * obs.dt;
        if d <= 1e-9 {
            return Action::ZERO_RELATIVE;
        }
        let lookahead = (self.idm.lookahead_time * v1).max(4.0).min(path.length());
        let target = (path.point_at(lookahead) - obs.ego.position).rotate(-obs.ego.heading);
        arc_toward(target, d)
    }
}

/// Keeps the follow margin behind the lead plus half a second of slack,
/// steering along the lead's breadcrumb trail.
#[derive(Debug, Clone)]
pub struct LeadFollower {
    pub idm: IdmParams,
    pub limits: DynamicsLimits,
    /// Headway defining the follow margin, seconds.
    pub min_headway: f64,
    pub slack: f64,
    last_seen: Option<(u64, VehicleState)>,
    trail: VecDeque<Vec2>,
}

impl LeadFollower {
    pub fn new(limits: DynamicsLimits) -> Self {
        Self {
            idm: IdmParams::default(),
            limits,
            min_headway: 1.0,
            slack: 0.5,
            last_seen: None,
            trail: VecDeque::new(),
        }
    }

    fn lead_gap(ego: &VehicleState, lead: &VehicleState) -> f64 {
        let f = lead.forward();
        let rear = lead.position - f * (0.5 * lead.length);
        let front = ego.position + ego.forward() * (0.5 * ego.length);
        (rear - front).dot(f)
    }

    fn lead_accel(&self, ego: &VehicleState, lead: &VehicleState, v0: f64) -> f64 {
        let gap = Self::lead_gap(ego, lead);
        let v = ego.speed;
        let margin = (self.min_headway * lead.speed).max(MIN_FOLLOW_MARGIN);
        let params = IdmParams {
            min_gap: margin,
            time_headway: self.slack,
            ..self.idm
        };
        params.acceleration(
            v,
            v0,
            Some(Leader {
                gap: gap.max(0.0),
                speed: lead.speed,
            }),
        )
    }

    fn steer_target(&mut self, obs: &Observation) -> Option<Vec2> {
        let ego = &obs.ego;
        let lookahead = (self.idm.lookahead_time * ego.speed).max(self.idm.min_lookahead);
        while let Some(&p) = self.trail.front() {
            let local = (p - ego.position).rotate(-ego.heading);
            if local.x <= 0.5 || (self.trail.len() > 1 && local.norm() < lookahead) {
                self.trail.pop_front();
            } else {
                break;
            }
        }
        self.trail
            .front()
            .map(|p| (*p - ego.position).rotate(-ego.heading))
    }
}

impl Policy for LeadFollower {
    fn act(&mut self, obs: &Observation) -> Action {
        let lead_id: Option<&ActorId> = obs.mission.as_ref().and_then(|m| m.lead.as_ref());
        if let Some(n) = lead_id.and_then(|id| obs.neighbor(id)) {
            self.last_seen = Some((obs.step, n.state));
            if self
                .trail
                .back()
                .is_none_or(|p| p.distance(n.state.position) > 0.5)
            {
                self.trail.push_back(n.state.position);
            }
        }
        let Some((seen_step, seen)) = self.last_seen else {
            return FULL_BRAKE;
        };
        let ego = &obs.ego;
        let v0 = obs.lane.speed_limit.min(self.limits.max_speed);
        let age = (obs.step - seen_step) as f64 * obs.dt;
        let mut accel = self.idm.acceleration(ego.speed, v0, None);
        if age <= LEAD_MEMORY {
            let mut lead = seen;
            lead.position += lead.velocity * age;
            accel = self.lead_accel(ego, &lead, v0);
        }
        let others = Observation {
            neighbors: obs
                .neighbors
                .iter()
                .filter(|n| Some(&n.id) != lead_id)
                .cloned()
                .collect(),
            ..obs.clone()
        };
        if let Some(l) = find_leader(&others) {
            accel = accel.min(self.idm.acceleration(ego.speed, v0, Some(l)));
        }
        let accel = smooth_accel(ego.accel.long, accel, obs.dt);
        let (throttle, brake) = pedals(accel, &self.limits);
        let lookahead = (self.idm.lookahead_time * ego.speed).max(self.idm.min_lookahead);
        let trail_target = self.steer_target(obs);
        // The route follows the lead's lane; the trail covers off-route spells.
        let steering = match trail_target {
            Some(local) if obs.waypoints.is_empty() => {
                let kappa = 2.0 * local.y / local.norm_sq();
                ((kappa * self.limits.wheelbase).atan() / self.limits.max_steer_angle)
                    .clamp(-1.0, 1.0)
            }
            _ => crate::agents::pure_pursuit(obs, lookahead, &self.limits),
        };
        Action::Continuous {
            throttle,
            brake,
            steering,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::LaneContext;
    use crate::map::{Goal, LaneId};
    use crate::sensors::{MissionInfo, Neighbor};
    use crate::geom::Pose;

    fn obs(speed: f64) -> Observation {
        let ego = VehicleState::new(Vec2::ZERO, 0.0, speed);
        Observation {
            step: 10,
            dt: 0.1,
            ego_id: "m0".into(),
            ego,
            neighbors: vec![],
            visibility_polygon: vec![],
            waypoints: (1..=40)
                .map(|i| Pose::new(i as f64, 0.0, 0.0))
                .collect(),
            lane: LaneContext {
                lane: LaneId::new("l0"),
                offset: 0.0,
                station: 0.0,
                width: 3.5,
                speed_limit: 10.0,
            },
            signals: vec![],
            mission: Some(MissionInfo {
                goal: Goal::new(Vec2::new(100.0, 0.0)),
                lead: Some("lead".into()),
            }),
            messages: vec![],
        }
    }

    fn dx(a: Action) -> f64 {
        match a {
            Action::RelativeTargetPose { dx, .. } => dx,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert_eq!("lead-follower".parse::<PolicyKind>().unwrap(), PolicyKind::LeadFollower);
        assert!("nope".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn zero_displacement_at_goal() {
        let mut o = obs(5.0);
        o.mission.as_mut().unwrap().goal = Goal::new(Vec2::new(1.0, 0.0));
        let mut p = WaypointFollower::new(DynamicsLimits::default());
        assert_eq!(p.act(&o), Action::ZERO_RELATIVE);
    }

    #[test]
    fn crossing_vehicle_shrinks_displacement() {
        let mut p = WaypointFollower::new(DynamicsLimits::default());
        let free = dx(p.act(&obs(8.0)));
        // Crossing from the right: reaches the ego path in 2 s.
        let mut o = obs(8.0);
        let mut other = VehicleState::new(Vec2::new(16.0, -16.0), std::f64::consts::FRAC_PI_2, 8.0);
        other.velocity = Vec2::new(0.0, 8.0);
        o.neighbors.push(Neighbor {
            id: "x".into(),
            state: other,
            visibility: 1.0,
        });
        let (t, d) = closest_approach(&o.ego, &other);
        assert!((t - 2.0).abs() < 1e-9 && d < 1e-9);
        let blocked = dx(p.act(&o));
        assert!(blocked < free, "{blocked} vs {free}");
    }

    #[test]
    fn lead_never_seen_brakes_fully() {
        let mut p = LeadFollower::new(DynamicsLimits::default());
        assert_eq!(p.act(&obs(5.0)), FULL_BRAKE);
    }

    #[test]
    fn arc_heads_to_straight_target() {
        let a = arc_toward(Vec2::new(10.0, 0.0), 1.0);
        assert_eq!(
            a,
            Action::RelativeTargetPose {
                dx: 1.0,
                dy: 0.0,
                dheading: 0.0
            }
        );
    }
}
