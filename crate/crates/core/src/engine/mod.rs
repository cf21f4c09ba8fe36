//! Deterministic discrete-time world: actors, events, termination and the
//! trajectory log.

mod log;
mod sim;

pub use log::{ActorRecord, LogError, LogHeader, MissionRecord, Snapshot, TrajectoryLog};
pub use sim::{EngineError, SimOptions, Simulation};

use crate::dynamics::{footprint, VehicleState};
use crate::geom::wrap_angle;
use crate::map::{LaneId, OffroadStatus, RoadNetwork};
use crate::v2v::DeliveryRecord;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActorId(pub String);

impl ActorId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ActorId {
    fn from(s: &str) -> Self {
        ActorId(s.to_string())
    }
}

impl From<String> for ActorId {
    fn from(s: String) -> Self {
        ActorId(s)
    }
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Mission,
    Social,
    Lead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorStatus {
    Active,
    /// Frozen in place after a collision or leaving the road.
    Terminated,
    /// Reached its goal or the end of its route; removed on the next step.
    Finished,
}

/// Nearest-lane context of a position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneContext {
    pub lane: LaneId,
    pub offset: f64,
    pub station: f64,
    pub width: f64,
    pub speed_limit: f64,
}

impl LaneContext {
    pub fn at(net: &RoadNetwork, p: crate::geom::Vec2) -> Self {
        let m = net.nearest_lane(p);
        let lane = net.lane_at(m.lane);
        LaneContext {
            lane: lane.id.clone(),
            offset: m.offset,
            station: m.station,
            width: lane.width,
            speed_limit: lane.speed_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub role: Role,
    pub state: VehicleState,
    pub status: ActorStatus,
    pub lane: LaneContext,
    pub offroad: OffroadStatus,
    pub wrong_way: bool,
}

impl Actor {
    /// A fresh active actor with lane, offroad and wrong-way flags computed.
    pub fn new(net: &RoadNetwork, role: Role, state: VehicleState) -> Self {
        Actor {
            role,
            lane: LaneContext::at(net, state.position),
            offroad: net.offroad_status(&footprint(&state)),
            wrong_way: wrong_way_flag(net, &state),
            state,
            status: ActorStatus::Active,
        }
    }

    /// Active or frozen; finished actors are no longer part of the scene.
    pub fn present(&self) -> bool {
        self.status != ActorStatus::Finished
    }

    pub fn active(&self) -> bool {
        self.status == ActorStatus::Active
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub step: u64,
    pub dt: f64,
    pub sim_time: f64,
    pub actors: BTreeMap<ActorId, Actor>,
    pub signal_phases: BTreeMap<String, usize>,
    pub rng: ChaCha8Rng,
}

impl WorldState {
    /// A world at step 0 holding the given active actors.
    pub fn from_states(
        net: &RoadNetwork,
        dt: f64,
        states: impl IntoIterator<Item = (ActorId, Role, VehicleState)>,
    ) -> Self {
        use rand::SeedableRng;
        WorldState {
            step: 0,
            dt,
            sim_time: 0.0,
            actors: states
                .into_iter()
                .map(|(id, role, s)| (id, Actor::new(net, role, s)))
                .collect(),
            signal_phases: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn present(&self) -> impl Iterator<Item = (&ActorId, &Actor)> {
        self.actors.iter().filter(|(_, a)| a.present())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Collision,
    Offroad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Collision { other: ActorId },
    FullOffroad,
    PartialOffroad,
    WrongWay,
    SpeedViolation { amount: f64, limit: f64 },
    GoalReached,
    Timeout,
    V2v(DeliveryRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    pub actor: ActorId,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    GoalReached { step: u64 },
    Terminated { step: u64, reason: TerminationReason },
    TimedOut { step: u64 },
}

impl Outcome {
    pub fn step(&self) -> u64 {
        match *self {
            Outcome::GoalReached { step }
            | Outcome::Terminated { step, .. }
            | Outcome::TimedOut { step } => step,
        }
    }

    pub fn arrived(&self) -> bool {
        matches!(self, Outcome::GoalReached { .. })
    }
}

/// Heading deviates more than 90 degrees from the nearest lane's tangent.
///
/// Junction connection lanes overlap, so when the nearest lane disagrees the
/// vehicle is still accepted if any other lane whose surface contains it runs
/// in its direction.
pub fn wrong_way_flag(net: &RoadNetwork, state: &VehicleState) -> bool {
    let misaligned = |li: usize, station: f64| {
        let tangent = net.lane_at(li).centerline.heading_at(station);
        wrap_angle(state.heading - tangent).abs() > FRAC_PI_2
    };
    let m = net.nearest_lane(state.position);
    if !misaligned(m.lane, m.station) {
        return false;
    }
    // Lane widths are capped at 10 m, so 5 m covers every containing surface.
    !net.lanes_near(state.position, 5.0)
        .into_iter()
        .any(|li| {
            let lane = net.lane_at(li);
            let proj = lane.centerline.project(state.position);
            proj.offset.abs() <= 0.5 * lane.width && !misaligned(li, proj.station)
        })
}

/// Per-actor outcome of the mission actors as of the current world state.
pub fn check_termination(
    world: &WorldState,
    goals: &BTreeMap<ActorId, crate::map::Goal>,
    max_steps: u64,
    collided: &BTreeMap<ActorId, u64>,
) -> BTreeMap<ActorId, Outcome> {
    let mut out = BTreeMap::new();
    for (id, goal) in goals {
        let Some(actor) = world.actors.get(id) else {
            continue;
        };
        let outcome = if let Some(&step) = collided.get(id) {
            Some(Outcome::Terminated {
                step,
                reason: TerminationReason::Collision,
            })
        } else if actor.offroad == OffroadStatus::FullOffroad {
            Some(Outcome::Terminated {
                step: world.step,
                reason: TerminationReason::Offroad,
            })
        } else if goal.reached(actor.state.position) {
            Some(Outcome::GoalReached { step: world.step })
        } else if world.step >= max_steps {
            Some(Outcome::TimedOut { step: world.step })
        } else {
            None
        };
        if let Some(o) = outcome {
            out.insert(id.clone(), o);
        }
    }
    out
}

/// Colliding pairs among present actors where at least one is active.
/// Pairs are reported once, in id order.
pub fn collisions(world: &WorldState) -> Vec<(ActorId, ActorId)> {
    let shapes: Vec<_> = world
        .present()
        .map(|(id, a)| (id, a.active(), footprint(&a.state)))
        .collect();
    let mut pairs = Vec::new();
    for i in 0..shapes.len() {
        for j in i + 1..shapes.len() {
            let (a, b) = (&shapes[i], &shapes[j]);
            if (a.1 || b.1) && a.2.overlaps(&b.2) {
                pairs.push((a.0.clone(), b.0.clone()));
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::map::build;
    use std::f64::consts::PI;

    fn net() -> RoadNetwork {
        RoadNetwork::from_spec(build::straight_road(1, 100.0, 3.5, 10.0)).unwrap()
    }

    #[test]
    fn wrong_way_aligned_and_reversed() {
        let net = net();
        let s = VehicleState::new(Vec2::new(50.0, 0.0), 0.0, 5.0);
        assert!(!wrong_way_flag(&net, &s));
        let r = VehicleState::new(Vec2::new(50.0, 0.0), PI, 5.0);
        assert!(wrong_way_flag(&net, &r));
    }

    #[test]
    fn wrong_way_on_curve_uses_local_tangent() {
        let net = RoadNetwork::from_spec(build::ring(4, 1, 50.0)).unwrap();
        // On the ring at angle a the tangent (counter-clockwise) is a + 90 deg.
        let a: f64 = 0.3;
        let p = Vec2::from_angle(a) * 50.0;
        let m = net.nearest_lane(p);
        let tangent = net.lane_at(m.lane).centerline.heading_at(m.station);
        let ok = VehicleState::new(p, tangent + 89f64.to_radians(), 1.0);
        let bad = VehicleState::new(p, tangent + 91f64.to_radians(), 1.0);
        assert!(!wrong_way_flag(&net, &ok));
        assert!(wrong_way_flag(&net, &bad));
    }

    #[test]
    fn outcome_step() {
        let o = Outcome::Terminated {
            step: 4,
            reason: TerminationReason::Collision,
        };
        assert_eq!(o.step(), 4);
        assert!(!o.arrived());
    }

    #[test]
    fn event_json_shape() {
        let e = Event {
            step: 3,
            actor: "m0".into(),
            kind: EventKind::SpeedViolation {
                amount: 1.5,
                limit: 10.0,
            },
        };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(
            s,
            r#"{"step":3,"actor":"m0","kind":"speed_violation","amount":1.5,"limit":10.0}"#
        );
        let back: Event = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }
}
