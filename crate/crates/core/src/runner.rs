//! Runs suites end to end: one episode per scenario, logs, and the report.

use crate::bridge::{Bridge, BridgeError};
use crate::dynamics::{Action, DynamicsLimits};
use crate::engine::{ActorId, EngineError, LogError, Simulation, TrajectoryLog};
use crate::map::RoadNetwork;
use crate::metrics::{evaluate, MetricConfig, MetricError, MetricReport};
use crate::policies::{Policy, PolicyKind};
use crate::scenario::{Scenario, ScenarioError, Suite};
use crate::sensors::{Observation, Sensor, SensorConfig, SensorError};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("scenario `{scenario}`: {source}")]
    Engine {
        scenario: String,
        source: EngineError,
    },
    #[error("scenario `{scenario}`: {source}")]
    Bridge {
        scenario: String,
        source: BridgeError,
    },
    /// Policy process failure outside an episode (handshake, shutdown).
    #[error("policy process: {0}")]
    Process(BridgeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit code: 3 for policy-process failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Bridge { .. } | RunError::Process(_) => 3,
            _ => 2,
        }
    }
}

/// Supplies actions for the mission vehicles of one episode at a time.
pub trait Driver {
    fn begin(&mut self, scenario: &Scenario, missions: &[ActorId]) -> Result<(), BridgeError>;
    fn act(&mut self, actor: &ActorId, obs: &Observation) -> Result<Action, BridgeError>;
}

/// One fresh builtin policy instance per mission vehicle.
pub struct BuiltinDriver {
    kind: PolicyKind,
    policies: BTreeMap<ActorId, Box<dyn Policy>>,
}

impl BuiltinDriver {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            policies: BTreeMap::new(),
        }
    }
}

impl Driver for BuiltinDriver {
    fn begin(&mut self, scenario: &Scenario, missions: &[ActorId]) -> Result<(), BridgeError> {
        self.policies = missions
            .iter()
            .map(|id| (id.clone(), self.kind.build(scenario.limits)))
            .collect();
        Ok(())
    }

    fn act(&mut self, actor: &ActorId, obs: &Observation) -> Result<Action, BridgeError> {
        let kind = self.kind;
        Ok(self
            .policies
            .entry(actor.clone())
            .or_insert_with(|| kind.build(DynamicsLimits::default()))
            .act(obs))
    }
}

impl Driver for Bridge {
    fn begin(&mut self, scenario: &Scenario, missions: &[ActorId]) -> Result<(), BridgeError> {
        self.reset(&scenario.id, missions)
    }

    fn act(&mut self, actor: &ActorId, obs: &Observation) -> Result<Action, BridgeError> {
        Bridge::act(self, actor, obs)
    }
}

/// Runs one episode to completion.
pub fn run_episode(
    scenario: &Scenario,
    net: Arc<RoadNetwork>,
    driver: &mut dyn Driver,
    sensor: &Sensor,
) -> Result<TrajectoryLog, RunError> {
    let bridge_err = |source| RunError::Bridge {
        scenario: scenario.id.clone(),
        source,
    };
    let mut sim = Simulation::new(scenario, net);
    let ids: Vec<ActorId> = scenario.missions.iter().map(|m| m.id.clone()).collect();
    driver.begin(scenario, &ids).map_err(bridge_err)?;
    while !sim.done() {
        let mut actions = BTreeMap::new();
        for id in sim.active_missions() {
            let obs = sim.observe(&id, sensor)?;
            let action = driver.act(&id, &obs).map_err(bridge_err)?;
            actions.insert(id, action);
        }
        sim.step(&actions).map_err(|source| RunError::Engine {
            scenario: scenario.id.clone(),
            source,
        })?;
    }
    Ok(sim.into_log())
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub logs: Vec<TrajectoryLog>,
    pub report: MetricReport,
}

/// Runs every scenario of the suite with a builtin policy. Scenarios are
/// spread over `workers` threads; results keep the suite order.
pub fn run_builtin(
    suite: &Suite,
    kind: PolicyKind,
    sensor: SensorConfig,
    metrics: &MetricConfig,
    workers: usize,
) -> Result<SuiteResult, RunError> {
    let sensor = Sensor::new(sensor)?;
    let n = suite.scenarios.len();
    let workers = workers.clamp(1, n.max(1));
    let mut slots: Vec<Option<Result<TrajectoryLog, RunError>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = n.div_ceil(workers);
        for (w, out) in slots.chunks_mut(chunk.max(1)).enumerate() {
            let sensor = &sensor;
            scope.spawn(move || {
                for (i, slot) in out.iter_mut().enumerate() {
                    let (scenario, net) = &suite.scenarios[w * chunk + i];
                    let mut driver = BuiltinDriver::new(kind);
                    *slot = Some(run_episode(scenario, net.clone(), &mut driver, sensor));
                }
            });
        }
    });
    let logs = slots
        .into_iter()
        .map(|s| s.expect("every scenario ran"))
        .collect::<Result<Vec<_>, _>>()?;
    finish(suite, logs, metrics)
}

/// Runs the suite through an external policy process, one episode at a time.
pub fn run_with_driver(
    suite: &Suite,
    driver: &mut dyn Driver,
    sensor: SensorConfig,
    metrics: &MetricConfig,
) -> Result<SuiteResult, RunError> {
    let sensor = Sensor::new(sensor)?;
    let logs = suite
        .scenarios
        .iter()
        .map(|(s, net)| run_episode(s, net.clone(), driver, &sensor))
        .collect::<Result<Vec<_>, _>>()?;
    finish(suite, logs, metrics)
}

fn finish(suite: &Suite, logs: Vec<TrajectoryLog>, metrics: &MetricConfig) -> Result<SuiteResult, RunError> {
    let cfg = MetricConfig {
        weights: suite.weights,
        ..*metrics
    };
    let report = evaluate(&logs, &cfg)?;
    Ok(SuiteResult { logs, report })
}

/// File name of a scenario's log inside the output directory.
pub fn log_file_name(scenario_id: &str) -> String {
    let safe: String = scenario_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.jsonl")
}

/// Writes `logs/<scenario>.jsonl`, `report.json` and `report.csv`.
pub fn write_outputs(out: &Path, result: &SuiteResult, method: &str) -> Result<Vec<PathBuf>, RunError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| RunError::Io { path, source }
    };
    let logs_dir = out.join("logs");
    std::fs::create_dir_all(&logs_dir).map_err(io(&logs_dir))?;
    let mut written = Vec::new();
    for log in &result.logs {
        let path = logs_dir.join(log_file_name(&log.header.scenario_id));
        std::fs::write(&path, log.to_jsonl()).map_err(io(&path))?;
        written.push(path);
    }
    let report = out.join("report.json");
    std::fs::write(&report, result.report.to_json() + "\n").map_err(io(&report))?;
    written.push(report);
    let csv = out.join("report.csv");
    std::fs::write(&csv, result.report.to_csv(method)).map_err(io(&csv))?;
    written.push(csv);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{turn_suite, SuiteManifest, TaskFamily, TurnParams};

    fn suite() -> Suite {
        let scenarios = turn_suite(&TurnParams::standard(4)).unwrap();
        SuiteManifest::from_scenarios("t", TaskFamily::Collaborative, scenarios)
            .resolve(Path::new("."))
            .unwrap()
    }

    struct Failing;

    impl Driver for Failing {
        fn begin(&mut self, _: &Scenario, _: &[ActorId]) -> Result<(), BridgeError> {
            Ok(())
        }

        fn act(&mut self, _: &ActorId, _: &Observation) -> Result<Action, BridgeError> {
            Err(BridgeError::Timeout(std::time::Duration::from_secs(1)))
        }
    }

    #[test]
    fn file_names_are_sanitized() {
        assert_eq!(log_file_name("turn-left_0"), "turn-left_0.jsonl");
        assert_eq!(log_file_name("a/b c.d"), "a_b_c_d.jsonl");
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let s = suite();
        let run = |w| run_builtin(&s, PolicyKind::WaypointFollower, SensorConfig::default(), &MetricConfig::default(), w).unwrap();
        let (a, b) = (run(1), run(3));
        assert_eq!(a.report, b.report);
        for (x, y) in a.logs.iter().zip(&b.logs) {
            assert_eq!(x.to_jsonl(), y.to_jsonl());
        }
    }

    #[test]
    fn driver_failure_names_the_scenario_and_exits_3() {
        let s = suite();
        let err = run_with_driver(&s, &mut Failing, SensorConfig::default(), &MetricConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().starts_with(&format!("scenario `{}`", s.scenarios[0].0.id)), "{err}");
        assert_eq!(RunError::Metric(MetricError::Empty).exit_code(), 2);
    }
}
