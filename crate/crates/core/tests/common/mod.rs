//! Hand-built trajectory logs for metric tests.
#![allow(dead_code)]

use drivebench::dynamics::{LongLat, VehicleState};
use drivebench::engine::{
    ActorId, ActorRecord, ActorStatus, LaneContext, LogHeader, MissionRecord, Outcome, Role,
    Snapshot, TrajectoryLog,
};
use drivebench::geom::Vec2;
use drivebench::map::{build, Goal, LaneId, OffroadStatus};
use drivebench::scenario::TaskFamily;
use rand::Rng;
use std::collections::BTreeMap;

pub const DT: f64 = 0.1;

/// One actor at one step.
#[derive(Debug, Clone, Copy)]
pub struct Rec {
    pub pos: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub accel: LongLat,
    pub jerk: LongLat,
    pub offset: f64,
    pub width: f64,
    pub limit: f64,
    pub offroad: OffroadStatus,
    pub wrong_way: bool,
}

impl Rec {
    pub fn at(x: f64, y: f64) -> Self {
        Rec {
            pos: Vec2::new(x, y),
            heading: 0.0,
            speed: 0.0,
            accel: LongLat::ZERO,
            jerk: LongLat::ZERO,
            offset: 0.0,
            width: 3.5,
            limit: 10.0,
            offroad: OffroadStatus::OnRoad,
            wrong_way: false,
        }
    }

    pub fn speed(mut self, v: f64) -> Self {
        self.speed = v;
        self
    }

    pub fn record(&self, id: &str, role: Role, step: u64) -> ActorRecord {
        let mut state = VehicleState::new(self.pos, self.heading, self.speed);
        state.accel = self.accel;
        state.jerk = self.jerk;
        state.step = step;
        ActorRecord {
            id: id.into(),
            role,
            status: ActorStatus::Active,
            state,
            lane: LaneContext {
                lane: LaneId::new("l0"),
                offset: self.offset,
                station: self.pos.x,
                width: self.width,
                speed_limit: self.limit,
            },
            offroad: self.offroad,
            wrong_way: self.wrong_way,
        }
    }
}

pub fn header(task: TaskFamily, time_limit: f64, missions: &[(&str, Vec2, Vec2)], lead: Option<&str>) -> LogHeader {
    LogHeader {
        scenario_id: "synthetic".into(),
        task,
        dt: DT,
        time_limit,
        seed: 0,
        missions: missions
            .iter()
            .map(|&(id, start, goal)| MissionRecord {
                id: id.into(),
                start,
                goal: Goal::new(goal),
            })
            .collect(),
        lead: lead.map(ActorId::from),
        map: build::straight_road(1, 200.0, 3.5, 10.0),
    }
}

/// `steps[k]` lists the actors present at step `k`.
pub fn log(header: LogHeader, steps: Vec<Vec<ActorRecord>>, outcomes: &[(&str, Outcome)]) -> TrajectoryLog {
    let mut log = TrajectoryLog::new(header);
    for (k, mut actors) in steps.into_iter().enumerate() {
        actors.sort_by(|a, b| a.id.cmp(&b.id));
        log.snapshots.push(Snapshot {
            step: k as u64,
            actors,
        });
    }
    log.outcomes = outcomes
        .iter()
        .map(|(id, o)| (ActorId::from(*id), *o))
        .collect::<BTreeMap<_, _>>();
    log.validate().expect("valid synthetic log");
    log
}

/// A single mission `m0` from (0, 0) toward (100, 0) with one record per
/// step produced by `f`.
pub fn single(task: TaskFamily, time_limit: f64, n: u64, outcome: Option<Outcome>, f: impl Fn(u64) -> Rec) -> TrajectoryLog {
    let h = header(task, time_limit, &[("m0", Vec2::ZERO, Vec2::new(100.0, 0.0))], None);
    let steps = (0..=n).map(|k| vec![f(k).record("m0", Role::Mission, k)]).collect();
    let outcomes: Vec<_> = outcome.into_iter().map(|o| ("m0", o)).collect();
    log(h, steps, &outcomes)
}

/// Follower `m0` behind lead `lead`, both heading +x; `gap(k)` is the
/// bumper-to-bumper gap and `v(k)` the common speed.
pub fn following(n: u64, gap: impl Fn(u64) -> f64, v: impl Fn(u64) -> f64) -> TrajectoryLog {
    let h = header(TaskFamily::Adaptive, n as f64 * DT, &[("m0", Vec2::ZERO, Vec2::new(190.0, 0.0))], Some("lead"));
    let steps = (0..=n)
        .map(|k| {
            let lead_x = 50.0 + k as f64;
            let ego_x = lead_x - 4.5 - gap(k);
            vec![
                Rec::at(lead_x, 0.0).speed(v(k)).record("lead", Role::Lead, k),
                Rec::at(ego_x, 0.0).speed(v(k)).record("m0", Role::Mission, k),
            ]
        })
        .collect();
    log(h, steps, &[])
}

fn offroad<R: Rng>(rng: &mut R) -> OffroadStatus {
    match rng.random_range(0..10) {
        0 => OffroadStatus::FullOffroad,
        1 | 2 => OffroadStatus::PartialOffroad,
        _ => OffroadStatus::OnRoad,
    }
}

fn random_rec<R: Rng>(rng: &mut R, near: Vec2) -> Rec {
    let u = |rng: &mut R, a: f64| rng.random_range(-a..=a);
    Rec {
        pos: near + Vec2::new(u(rng, 3.0), u(rng, 3.0)),
        heading: u(rng, 3.1),
        speed: rng.random_range(0.0..30.0),
        accel: LongLat::new(u(rng, 4.0), u(rng, 3.0)),
        jerk: LongLat::new(u(rng, 2.0), u(rng, 2.0)),
        offset: u(rng, 3.0),
        width: rng.random_range(2.5..4.0),
        limit: rng.random_range(5.0..20.0),
        offroad: offroad(rng),
        wrong_way: rng.random_bool(0.1),
    }
}

/// A structurally valid log with 1 to 3 missions, random kinematics and
/// flags, and a random outcome per mission. Adaptive logs carry a lead
/// that mission vehicles often trail at following distance.
pub fn random_log<R: Rng>(rng: &mut R, task: TaskFamily) -> TrajectoryLog {
    let n: u64 = rng.random_range(5..120);
    let time_limit = n as f64 * DT * rng.random_range(0.8..1.5);
    let k = rng.random_range(1..=3);
    let ids: Vec<String> = (0..k).map(|i| format!("m{i}")).collect();
    let mut missions = Vec::new();
    for id in &ids {
        let start = Vec2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
        let dir = Vec2::from_angle(rng.random_range(-3.1..3.1));
        let goal = start + dir * rng.random_range(5.0..80.0);
        missions.push((id.as_str(), start, goal));
    }
    let lead = (task == TaskFamily::Adaptive).then_some("lead");
    let h = header(task, time_limit, &missions, lead);
    // Per mission: arrival step, termination step, or nothing.
    let outcomes: Vec<(String, Option<Outcome>)> = ids
        .iter()
        .map(|id| {
            let s = rng.random_range(0..=n);
            let o = match rng.random_range(0..4) {
                0 => Some(Outcome::GoalReached { step: s }),
                1 => Some(Outcome::TimedOut { step: n }),
                2 => Some(Outcome::Terminated {
                    step: s,
                    reason: drivebench::engine::TerminationReason::Collision,
                }),
                _ => None,
            };
            (id.clone(), o)
        })
        .collect();
    let lead_speed = rng.random_range(0.0..20.0);
    let mut steps = Vec::new();
    for step in 0..=n {
        let mut actors = Vec::new();
        let lead_pos = Vec2::new(200.0 + step as f64 * lead_speed * DT, 0.0);
        if lead.is_some() {
            actors.push(Rec::at(lead_pos.x, lead_pos.y).speed(lead_speed).record("lead", Role::Lead, step));
        }
        for (i, (id, start, goal)) in missions.iter().enumerate() {
            if step > 0 && rng.random_bool(0.03) {
                continue;
            }
            let t = step as f64 / n as f64;
            let mut r = random_rec(rng, start.lerp(*goal, t));
            if let Some(Outcome::GoalReached { step: s }) = outcomes[i].1 {
                if step == s {
                    r.pos = *goal;
                }
            }
            if lead.is_some() && rng.random_bool(0.7) {
                // Trail the lead by its length, a margin and up to ~4 s of gap.
                r.heading = 0.0;
                r.pos = Vec2::new(lead_pos.x - 4.5 - rng.random_range(0.0..2.0 + 4.0 * r.speed), 0.0);
            }
            actors.push(r.record(id, Role::Mission, step));
        }
        steps.push(actors);
    }
    let outcomes: Vec<(&str, Outcome)> = outcomes
        .iter()
        .filter_map(|(id, o)| o.map(|o| (id.as_str(), o)))
        .collect();
    log(h, steps, &outcomes)
}
