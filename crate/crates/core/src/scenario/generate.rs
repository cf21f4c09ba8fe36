use super::{
    Dimensions, LeadSpec, MapSource, MissionSpec, Scenario, ScenarioError, SocialBehavior,
    SocialSpec, StartState, TaskFamily,
};
use crate::agents::{Behavior, IdmParams, LeadScript, LeadSegment, Trigger, PATH_END_CLEARANCE};
use crate::dynamics::{DynamicsLimits, DEFAULT_DT};
use crate::geom::{Pose, Polyline, Vec2};
use crate::map::build::{self, Arm, Turn};
use crate::map::{Goal, LaneId, MapSpec, RoadNetwork, Route};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const DEFAULT_COLLABORATIVE_LIMIT: f64 = 60.0;
pub const DEFAULT_ADAPTIVE_LIMIT: f64 = 120.0;

const ARM_LENGTH: f64 = 100.0;
/// Distance from the first mission vehicle to the stop line.
const APPROACH: f64 = 60.0;
const MISSION_SPACING: f64 = 12.0;
const GOAL_DISTANCE: f64 = 40.0;
const SPAWN_STATION: f64 = 5.0;
const CROSS_SPEED: f64 = 10.0;
const LEAD_START_X: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JunctionKind {
    FourWay,
    T,
    Signalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    None,
    Low,
    Medium,
    High,
}

impl Density {
    /// Mean spawn headway per lane, seconds.
    pub fn headway(self) -> f64 {
        match self {
            Density::None => f64::INFINITY,
            Density::Low => 8.0,
            Density::Medium => 4.0,
            Density::High => 2.0,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Density::None => "none",
            Density::Low => "low",
            Density::Medium => "medium",
            Density::High => "high",
        }
    }
}

fn default_missions() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnParams {
    pub junction: JunctionKind,
    pub turn: Turn,
    pub density: Density,
    #[serde(default = "default_missions")]
    pub missions: usize,
    pub seed: u64,
}

impl TurnParams {
    /// Unprotected left at a four-way junction with no other traffic.
    pub fn empty_left(seed: u64) -> Self {
        TurnParams {
            junction: JunctionKind::FourWay,
            turn: Turn::Left,
            density: Density::None,
            missions: 1,
            seed,
        }
    }

    /// The four-scenario suite used for determinism checks and the default
    /// `run`: left, right and through at a four-way junction plus a left at a
    /// signalized one, all at low density.
    pub fn standard(seed: u64) -> Vec<TurnParams> {
        let p = |junction, turn| TurnParams {
            junction,
            turn,
            density: Density::Low,
            missions: 1,
            seed,
        };
        vec![
            p(JunctionKind::FourWay, Turn::Left),
            p(JunctionKind::FourWay, Turn::Right),
            p(JunctionKind::FourWay, Turn::Through),
            p(JunctionKind::Signalized, Turn::Left),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeadBehavior {
    Cruise,
    Merge,
    Exit,
    Turn,
    Stop,
}

impl LeadBehavior {
    pub const ALL: [LeadBehavior; 5] = [
        LeadBehavior::Cruise,
        LeadBehavior::Merge,
        LeadBehavior::Exit,
        LeadBehavior::Turn,
        LeadBehavior::Stop,
    ];

    fn tag(self) -> &'static str {
        match self {
            LeadBehavior::Cruise => "cruise",
            LeadBehavior::Merge => "merge",
            LeadBehavior::Exit => "exit",
            LeadBehavior::Turn => "turn",
            LeadBehavior::Stop => "stop",
        }
    }
}

fn default_offsets() -> Vec<f64> {
    vec![35.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowParams {
    pub behaviors: Vec<LeadBehavior>,
    #[serde(default = "default_density")]
    pub density: Density,
    /// Distance of each mission vehicle behind the lead, meters.
    #[serde(default = "default_offsets")]
    pub offsets: Vec<f64>,
    /// Put a fork on the lead's path so its destination is not evident.
    #[serde(default)]
    pub ambiguous: bool,
    pub seed: u64,
}

fn default_density() -> Density {
    Density::None
}

impl FollowParams {
    /// Cruise lead, one follower, no traffic.
    pub fn simplest(seed: u64) -> Self {
        Self {
            behaviors: vec![LeadBehavior::Cruise],
            density: Density::None,
            offsets: default_offsets(),
            ambiguous: false,
            seed,
        }
    }
}

fn lane_line(spec: &MapSpec, id: &LaneId) -> Polyline {
    let lane = spec
        .lanes
        .iter()
        .find(|l| &l.id == id)
        .expect("generator references a lane of its own map");
    Polyline::new(lane.centerline.iter().map(|p| Vec2::new(p[0], p[1])).collect())
        .expect("builder lanes have valid centerlines")
}

fn start_at(pose: Pose, speed: f64) -> StartState {
    StartState {
        x: pose.position.x,
        y: pose.position.y,
        heading: pose.heading,
        speed,
    }
}

/// Spawn times of a Poisson process with the given mean headway over
/// `[0, horizon)`. Exponential gaps come from a fixed unit-rate stream so that
/// a shorter headway only compresses the same arrivals.
fn poisson_steps(seed: u64, stream: u64, headway: f64, horizon: f64, dt: f64) -> Vec<u64> {
    if !headway.is_finite() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        let u: f64 = rng.random();
        t += -headway * (1.0 - u).ln();
        if t >= horizon {
            return out;
        }
        out.push((t / dt).round() as u64);
    }
}

/// Reactive traffic entering at the start of `lanes[0]` and leaving at the end
/// of the last lane.
fn cross_traffic(
    spec: &MapSpec,
    prefix: &str,
    lanes: &[LaneId],
    steps: &[u64],
    speed: f64,
) -> Vec<SocialSpec> {
    let first = lane_line(spec, &lanes[0]);
    let last = lane_line(spec, lanes.last().unwrap());
    let start = start_at(first.pose_at(SPAWN_STATION), speed);
    let route = Route::new(
        lanes.to_vec(),
        Goal::new(last.point_at(last.length() - PATH_END_CLEARANCE)),
    );
    steps
        .iter()
        .enumerate()
        .map(|(i, &step)| SocialSpec {
            id: format!("{prefix}{i:03}").into(),
            spawn_step: step,
            dimensions: Dimensions::default(),
            behavior: SocialBehavior::Reactive {
                start,
                route: route.clone(),
                idm: IdmParams::default(),
            },
        })
        .collect()
}

fn through_lanes(from: Arm, to: Arm) -> Vec<LaneId> {
    vec![
        build::incoming_lane(from),
        build::connection_lane(from, to),
        build::outgoing_lane(to),
    ]
}

fn turn_tag(t: Turn) -> &'static str {
    match t {
        Turn::Left => "left",
        Turn::Right => "right",
        Turn::Through => "through",
    }
}

fn junction_tag(j: JunctionKind) -> &'static str {
    match j {
        JunctionKind::FourWay => "four_way",
        JunctionKind::T => "t",
        JunctionKind::Signalized => "signalized",
    }
}

fn validated(s: Scenario) -> Result<Scenario, ScenarioError> {
    let net = s.network(std::path::Path::new("."))?;
    s.validate(&net)?;
    Ok(s)
}

pub fn turn_scenario(p: &TurnParams) -> Result<Scenario, ScenarioError> {
    let id = format!(
        "turn-{}-{}-{}-s{}",
        junction_tag(p.junction),
        turn_tag(p.turn),
        p.density.tag(),
        p.seed
    );
    let max_missions = ((ARM_LENGTH - APPROACH - 5.0) / MISSION_SPACING) as usize + 1;
    if p.missions == 0 || p.missions > max_missions {
        return Err(ScenarioError::Invalid {
            scenario: id,
            field: "missions".into(),
            reason: format!("must be between 1 and {max_missions}"),
        });
    }
    let (spec, arms, cross): (MapSpec, Vec<Arm>, [(Arm, Arm); 2]) = match p.junction {
        JunctionKind::FourWay | JunctionKind::Signalized => (
            build::four_way(ARM_LENGTH, false),
            Arm::ALL.to_vec(),
            [(Arm::East, Arm::West), (Arm::West, Arm::East)],
        ),
        JunctionKind::T => (
            build::t_junction(ARM_LENGTH),
            vec![Arm::East, Arm::North, Arm::South],
            [(Arm::North, Arm::South), (Arm::East, Arm::North)],
        ),
    };
    let from = Arm::South;
    let to = from.exit_for(p.turn);
    if !arms.contains(&to) {
        return Err(ScenarioError::Unsupported(format!(
            "{} turn at a {} junction has no exit arm",
            turn_tag(p.turn),
            junction_tag(p.junction)
        )));
    }
    let incoming = lane_line(&spec, &build::incoming_lane(from));
    let outgoing = lane_line(&spec, &build::outgoing_lane(to));
    let goal = Goal::new(outgoing.point_at(GOAL_DISTANCE));
    let missions = (0..p.missions)
        .map(|i| {
            let station = incoming.length() - APPROACH - i as f64 * MISSION_SPACING;
            MissionSpec {
                id: format!("m{i}").into(),
                start: start_at(incoming.pose_at(station), 0.0),
                route: Route::new(through_lanes(from, to), goal),
                dimensions: Dimensions::default(),
            }
        })
        .collect();
    let mut social = Vec::new();
    for (k, (a, b)) in cross.iter().enumerate() {
        let steps = poisson_steps(
            p.seed,
            k as u64,
            p.density.headway(),
            DEFAULT_COLLABORATIVE_LIMIT,
            DEFAULT_DT,
        );
        let prefix = format!("s{}{}", a.tag(), b.tag());
        social.extend(cross_traffic(&spec, &prefix, &through_lanes(*a, *b), &steps, CROSS_SPEED));
    }
    let signals = if p.junction == JunctionKind::Signalized {
        vec![build::four_phase_signal(&arms)]
    } else {
        vec![]
    };
    let tags = BTreeMap::from([
        ("junction".to_string(), junction_tag(p.junction).to_string()),
        ("turn".to_string(), turn_tag(p.turn).to_string()),
        ("density".to_string(), p.density.tag().to_string()),
    ]);
    validated(Scenario {
        id,
        map: MapSource::Inline(spec),
        dt: DEFAULT_DT,
        time_limit: DEFAULT_COLLABORATIVE_LIMIT,
        task: TaskFamily::Collaborative,
        seed: p.seed,
        missions,
        social,
        lead: None,
        signals,
        v2v: None,
        limits: DynamicsLimits::default(),
        tags,
    })
}

/// One collaborative scenario per parameter set.
pub fn turn_suite(params: &[TurnParams]) -> Result<Vec<Scenario>, ScenarioError> {
    params.iter().map(turn_scenario).collect()
}

fn follow_scenario(
    p: &FollowParams,
    behavior: LeadBehavior,
) -> Result<Scenario, ScenarioError> {
    let id = format!(
        "follow-{}-{}{}-s{}",
        behavior.tag(),
        p.density.tag(),
        if p.ambiguous { "-ambiguous" } else { "" },
        p.seed
    );
    let on_junction = behavior == LeadBehavior::Turn;
    let (spec, base, cruise, segment) = if on_junction {
        let spec = build::four_way(ARM_LENGTH, false);
        let base = through_lanes(Arm::South, Arm::North);
        let seg = Behavior::Turn {
            lane: build::connection_lane(Arm::South, Arm::West),
        };
        (spec, base, CROSS_SPEED, Some((0.0, seg)))
    } else {
        let spec = build::highway(p.ambiguous || behavior == LeadBehavior::Exit);
        let base: Vec<LaneId> = vec!["h0_0".into(), "h1_0".into()];
        let seg = match behavior {
            LeadBehavior::Cruise => Some((100.0, Behavior::Cruise { speed: 16.0 })),
            LeadBehavior::Merge => Some((120.0, Behavior::Merge { lane: "h0_1".into() })),
            LeadBehavior::Exit => Some((150.0, Behavior::Exit { lane: "x0_0".into() })),
            LeadBehavior::Stop => Some((150.0, Behavior::Stop { duration: 3.0 })),
            LeadBehavior::Turn => None,
        };
        (spec, base, 18.0, seg)
    };
    let script = LeadScript {
        segments: segment
            .into_iter()
            .map(|(station, behavior)| LeadSegment {
                trigger: Trigger::Station(station),
                behavior,
            })
            .collect(),
    };
    let first = lane_line(&spec, &base[0]);
    let lead_station = if on_junction {
        first.length() - 20.0
    } else {
        LEAD_START_X
    };
    let net = RoadNetwork::from_spec(spec.clone()).map_err(|source| ScenarioError::Map {
        scenario: id.clone(),
        source,
    })?;
    let path = script
        .resolve_path(&net, &base)
        .map_err(|source| ScenarioError::Map {
            scenario: id.clone(),
            source,
        })?;
    let last = lane_line(&spec, path.last().unwrap());
    let end = last.point_at(last.length() - 2.0 * PATH_END_CLEARANCE);
    let mut missions = Vec::new();
    for (i, &off) in p.offsets.iter().enumerate() {
        let station = lead_station - off;
        if !(off > 0.0) || station < 0.0 {
            return Err(ScenarioError::Invalid {
                scenario: id,
                field: format!("offsets[{i}]"),
                reason: format!("must be in (0, {lead_station}]"),
            });
        }
        missions.push(MissionSpec {
            id: format!("m{i}").into(),
            start: start_at(first.pose_at(station), cruise),
            route: Route::new(path.clone(), Goal::new(end)),
            dimensions: Dimensions::default(),
        });
    }
    let (traffic, traffic_speed) = if on_junction {
        (through_lanes(Arm::East, Arm::West), CROSS_SPEED)
    } else {
        (vec!["h0_1".into(), "h1_1".into()], 16.0)
    };
    let steps = poisson_steps(
        p.seed,
        0,
        p.density.headway(),
        DEFAULT_ADAPTIVE_LIMIT,
        DEFAULT_DT,
    );
    let social = cross_traffic(&spec, "s", &traffic, &steps, traffic_speed);
    let lead = LeadSpec {
        id: "lead".into(),
        start: start_at(first.pose_at(lead_station), cruise),
        lanes: base,
        script,
        cruise_speed: cruise,
        dimensions: Dimensions::default(),
    };
    let tags = BTreeMap::from([
        ("behavior".to_string(), behavior.tag().to_string()),
        ("density".to_string(), p.density.tag().to_string()),
        ("ambiguous".to_string(), p.ambiguous.to_string()),
    ]);
    validated(Scenario {
        id,
        map: MapSource::Inline(spec),
        dt: DEFAULT_DT,
        time_limit: DEFAULT_ADAPTIVE_LIMIT,
        task: TaskFamily::Adaptive,
        seed: p.seed,
        missions,
        social,
        lead: Some(lead),
        signals: vec![],
        v2v: None,
        limits: DynamicsLimits::default(),
        tags,
    })
}

/// One adaptive scenario per lead behavior.
pub fn follow_suite(p: &FollowParams) -> Result<Vec<Scenario>, ScenarioError> {
    if p.behaviors.is_empty() || p.offsets.is_empty() {
        return Err(ScenarioError::Suite {
            field: "behaviors".into(),
            reason: "need at least one behavior and one mission offset".into(),
        });
    }
    p.behaviors.iter().map(|&b| follow_scenario(p, b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(junction: JunctionKind, turn: Turn, density: Density, seed: u64) -> TurnParams {
        TurnParams {
            junction,
            turn,
            density,
            missions: 1,
            seed,
        }
    }

    #[test]
    fn empty_left_turn_has_one_actor() {
        let s = turn_scenario(&turn(JunctionKind::FourWay, Turn::Left, Density::None, 1)).unwrap();
        assert_eq!(s.missions.len(), 1);
        assert!(s.social.is_empty());
        assert_eq!(
            s.missions[0].route.lanes,
            vec![LaneId::new("s_in_0"), "c_sw_0".into(), "w_out_0".into()]
        );
    }

    #[test]
    fn left_at_t_is_unsupported() {
        let e = turn_scenario(&turn(JunctionKind::T, Turn::Left, Density::Low, 1)).unwrap_err();
        assert!(matches!(e, ScenarioError::Unsupported(_)));
    }

    #[test]
    fn signalized_has_protected_left_phase() {
        let s = turn_scenario(&turn(JunctionKind::Signalized, Turn::Left, Density::None, 1)).unwrap();
        let conn = &s.missions[0].route.lanes[1];
        assert!(s.signals[0].phases.iter().any(|ph| {
            ph.states.get(conn) == Some(&crate::map::SignalState::Green)
                && ph.states.keys().all(|l| {
                    l.as_str().starts_with("c_s") || l.as_str().starts_with("c_n")
                })
        }));
    }

    #[test]
    fn generation_is_pure() {
        let p = turn(JunctionKind::FourWay, Turn::Through, Density::High, 9);
        let a = serde_json::to_string(&turn_scenario(&p).unwrap()).unwrap();
        let b = serde_json::to_string(&turn_scenario(&p).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn density_orders_spawn_counts() {
        for seed in 0..100 {
            let counts: Vec<usize> = [Density::None, Density::Low, Density::Medium, Density::High]
                .into_iter()
                .map(|d| {
                    turn_scenario(&turn(JunctionKind::FourWay, Turn::Left, d, seed))
                        .unwrap()
                        .social
                        .len()
                })
                .collect();
            assert!(counts.windows(2).all(|w| w[0] < w[1]), "seed {seed}: {counts:?}");
        }
    }

    #[test]
    fn simplest_follow_has_two_actors() {
        let s = follow_suite(&FollowParams::simplest(3)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].missions.len() + s[0].social.len() + 1, 2);
    }

    #[test]
    fn every_behavior_generates() {
        let p = FollowParams {
            behaviors: LeadBehavior::ALL.to_vec(),
            density: Density::Medium,
            offsets: vec![35.0, 50.0],
            ambiguous: true,
            seed: 4,
        };
        let suite = follow_suite(&p).unwrap();
        assert_eq!(suite.len(), 5);
        let merge = &suite[1].lead.as_ref().unwrap().script;
        assert!(merge
            .segments
            .iter()
            .any(|s| matches!(s.behavior, Behavior::Merge { .. })));
    }

    #[test]
    fn ambiguous_path_has_reachable_fork() {
        let p = FollowParams {
            ambiguous: true,
            ..FollowParams::simplest(1)
        };
        let s = &follow_suite(&p).unwrap()[0];
        let net = s.network(std::path::Path::new(".")).unwrap();
        let path = s.lead.as_ref().unwrap().script.resolve_path(&net, &s.lead.as_ref().unwrap().lanes).unwrap();
        // Independent reachability: breadth-first over successor links.
        let fork = path
            .iter()
            .find(|l| net.lane(l).unwrap().successors.len() >= 2)
            .expect("fork on the lead path");
        for succ in &net.lane(fork).unwrap().successors {
            let mut frontier = vec![fork.clone()];
            let mut seen = std::collections::BTreeSet::new();
            let mut found = false;
            while let Some(l) = frontier.pop() {
                if &l == succ {
                    found = true;
                    break;
                }
                if seen.insert(l.clone()) {
                    frontier.extend(net.lane(&l).unwrap().successors.iter().cloned());
                }
            }
            assert!(found);
            assert!(net.lane(succ).unwrap().length() > 50.0);
        }
    }

    #[test]
    fn bad_offset_rejected() {
        let p = FollowParams {
            offsets: vec![500.0],
            ..FollowParams::simplest(1)
        };
        assert!(follow_suite(&p).is_err());
    }
}
