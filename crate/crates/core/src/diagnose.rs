//! Performance diagnostic: steps per second on synthetic ring-road worlds
//! while one variable (traffic actors, agents or road edges) is scaled.

use crate::engine::{ActorId, SimOptions, Simulation};
use crate::geom::Vec2;
use crate::map::{build, Goal, LaneId, RoadNetwork, Route};
use crate::policies::{Policy, PolicyKind};
use crate::scenario::{
    Dimensions, MapSource, MissionSpec, Scenario, SocialBehavior, SocialSpec, StartState,
    TaskFamily,
};
use crate::sensors::{Sensor, SensorConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

pub const MIN_STEPS: u64 = 100;
pub const DEFAULT_STEPS: u64 = 1000;
/// Agents driving on the road-edge diagnostic.
pub const EDGE_TEST_AGENTS: usize = 10;
/// Edges of the ring used when edges are not the scaled variable.
pub const BASE_EDGES: usize = 8;
pub const RING_RADIUS: f64 = 250.0;
const RING_LANES: usize = 2;
const START_SPEED: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnoseError {
    #[error("counts must be a non-empty list of positive integers")]
    Counts,
    #[error("steps must be at least {MIN_STEPS} (got {0})")]
    Steps(u64),
    #[error("diagnostic world failed: {0}")]
    World(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagVariable {
    TrafficActors,
    Agents,
    RoadEdges,
}

impl DiagVariable {
    pub fn label(self) -> &'static str {
        match self {
            DiagVariable::TrafficActors => "traffic_actors",
            DiagVariable::Agents => "agents",
            DiagVariable::RoadEdges => "road_edges",
        }
    }
}

impl std::str::FromStr for DiagVariable {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "traffic_actors" => Ok(DiagVariable::TrafficActors),
            "agents" => Ok(DiagVariable::Agents),
            "road_edges" => Ok(DiagVariable::RoadEdges),
            _ => Err(format!(
                "unknown variable `{s}` (expected traffic_actors, agents or road_edges)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagRow {
    pub variable: DiagVariable,
    pub count: usize,
    pub steps: u64,
    pub seconds: f64,
    pub fps: f64,
}

/// Two laps around the ring from `edge` on lane `lane`.
fn ring_route(edges: usize, edge: usize, lane: usize, goal: Goal) -> Route {
    let lanes = (0..2 * edges)
        .map(|k| LaneId::new(format!("r{}_{lane}", (edge + k) % edges)))
        .collect();
    Route::new(lanes, goal)
}

/// Evenly spaced starts on the ring, alternating lanes.
fn ring_starts(net: &RoadNetwork, n: usize, lane_offset: usize) -> Vec<(usize, StartState, usize)> {
    let edges = net.road_edge_count();
    (0..n)
        .map(|i| {
            let lane = (i + lane_offset) % RING_LANES;
            let angle = 2.0 * std::f64::consts::PI * (i as f64 + 0.5 * lane_offset as f64) / n as f64;
            let r = RING_RADIUS - lane as f64 * build::LANE_WIDTH;
            let p = Vec2::from_angle(angle) * r;
            let edge = ((angle / (2.0 * std::f64::consts::PI) * edges as f64) as usize).min(edges - 1);
            let start = StartState {
                x: p.x,
                y: p.y,
                heading: angle + std::f64::consts::FRAC_PI_2,
                speed: START_SPEED,
            };
            (edge, start, lane)
        })
        .collect()
}

/// The synthetic world for one diagnostic row.
pub fn diagnostic_scenario(
    variable: DiagVariable,
    count: usize,
    steps: u64,
) -> Result<(Scenario, Arc<RoadNetwork>), DiagnoseError> {
    let (edges, agents, traffic) = match variable {
        DiagVariable::TrafficActors => (BASE_EDGES, 1, count),
        DiagVariable::Agents => (BASE_EDGES, count, 0),
        DiagVariable::RoadEdges => (count, EDGE_TEST_AGENTS, 0),
    };
    let spec = build::ring(edges, RING_LANES, RING_RADIUS);
    let net = RoadNetwork::from_spec(spec.clone()).map_err(|e| DiagnoseError::World(e.to_string()))?;
    // Unreachable goal at the ring center keeps every vehicle driving.
    let goal = Goal::new(Vec2::ZERO);
    let missions = ring_starts(&net, agents, 0)
        .into_iter()
        .enumerate()
        .map(|(i, (edge, start, lane))| MissionSpec {
            id: format!("a{i:03}").into(),
            start,
            route: ring_route(edges, edge, lane, goal),
            dimensions: Dimensions::default(),
        })
        .collect();
    let social = ring_starts(&net, traffic, 1)
        .into_iter()
        .enumerate()
        .map(|(i, (edge, start, lane))| SocialSpec {
            id: format!("t{i:03}").into(),
            spawn_step: 0,
            dimensions: Dimensions::default(),
            behavior: SocialBehavior::Reactive {
                start,
                route: ring_route(edges, edge, lane, goal),
                idm: Default::default(),
            },
        })
        .collect();
    let scenario = Scenario {
        id: format!("diag-{}-{count}", variable.label()),
        map: MapSource::Inline(spec),
        dt: 0.1,
        time_limit: steps as f64 * 0.1,
        task: TaskFamily::Collaborative,
        seed: 0,
        missions,
        social,
        lead: None,
        signals: vec![],
        v2v: None,
        limits: Default::default(),
        tags: BTreeMap::new(),
    };
    scenario
        .validate(&net)
        .map_err(|e| DiagnoseError::World(e.to_string()))?;
    Ok((scenario, Arc::new(net)))
}

/// Steps one diagnostic world and returns the wall time of the loop.
pub fn time_world(scenario: &Scenario, net: Arc<RoadNetwork>, steps: u64) -> Result<f64, DiagnoseError> {
    let sensor = Sensor::new(SensorConfig::default()).expect("default sensor config");
    let opts = SimOptions {
        record: false,
        ..SimOptions::default()
    };
    let mut sim = Simulation::with_options(scenario, net, opts);
    let mut policies: BTreeMap<ActorId, Box<dyn Policy>> = scenario
        .missions
        .iter()
        .map(|m| (m.id.clone(), PolicyKind::WaypointFollower.build(scenario.limits)))
        .collect();
    let t0 = Instant::now();
    for _ in 0..steps {
        if sim.done() {
            break;
        }
        let mut actions = BTreeMap::new();
        for id in sim.active_missions() {
            let obs = sim
                .observe_kinematic(&id, &sensor)
                .map_err(|e| DiagnoseError::World(e.to_string()))?;
            actions.insert(id.clone(), policies.get_mut(&id).unwrap().act(&obs));
        }
        sim.step(&actions)
            .map_err(|e| DiagnoseError::World(e.to_string()))?;
    }
    Ok(t0.elapsed().as_secs_f64())
}

pub fn diagnose(
    variable: DiagVariable,
    counts: &[usize],
    steps: u64,
) -> Result<Vec<DiagRow>, DiagnoseError> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(DiagnoseError::Counts);
    }
    if steps < MIN_STEPS {
        return Err(DiagnoseError::Steps(steps));
    }
    counts
        .iter()
        .map(|&count| {
            let (scenario, net) = diagnostic_scenario(variable, count, steps)?;
            let seconds = time_world(&scenario, net, steps)?;
            Ok(DiagRow {
                variable,
                count,
                steps,
                seconds,
                fps: steps as f64 / seconds.max(1e-12),
            })
        })
        .collect()
}

pub fn format_table(rows: &[DiagRow]) -> String {
    let mut out = format!("{:<16} {:>6} {:>10}\n", "Test Var.", "No.", "FPS");
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:>6} {:>10.0}\n",
            r.variable.label(),
            r.count,
            r.fps
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_runs_and_empty_counts() {
        assert_eq!(
            diagnose(DiagVariable::Agents, &[1], 99),
            Err(DiagnoseError::Steps(99))
        );
        assert_eq!(diagnose(DiagVariable::Agents, &[], 100), Err(DiagnoseError::Counts));
    }

    #[test]
    fn worlds_build_for_each_variable() {
        for (v, n) in [
            (DiagVariable::TrafficActors, 50),
            (DiagVariable::Agents, 50),
            (DiagVariable::RoadEdges, 1),
            (DiagVariable::RoadEdges, 50),
        ] {
            let (s, net) = diagnostic_scenario(v, n, 100).unwrap();
            assert_eq!(s.missions.len() + s.social.len(), match v {
                DiagVariable::TrafficActors => 1 + n,
                DiagVariable::Agents => n,
                DiagVariable::RoadEdges => EDGE_TEST_AGENTS,
            });
            if v == DiagVariable::RoadEdges {
                assert_eq!(net.road_edge_count(), n);
            }
        }
    }

    #[test]
    fn table_has_one_row_per_count() {
        let rows = diagnose(DiagVariable::Agents, &[1, 2], 100).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(format_table(&rows).lines().count(), 3);
    }
}
