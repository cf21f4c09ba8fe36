//! Scenario and suite file formats, validation and the procedural
//! generators for the turn and follow families.

mod generate;

pub use generate::{
    follow_suite, turn_scenario, turn_suite, Density, FollowParams, JunctionKind, LeadBehavior, TurnParams,
    DEFAULT_ADAPTIVE_LIMIT, DEFAULT_COLLABORATIVE_LIMIT,
};

use crate::agents::{IdmParams, LeadScript, ReplayTrack};
use crate::dynamics::{DynamicsLimits, VehicleState, DEFAULT_DT, DEFAULT_LENGTH, DEFAULT_WIDTH};
use crate::engine::ActorId;
use crate::geom::Vec2;
use crate::map::{LaneId, MapError, MapSpec, RoadNetwork, Route, SignalSpec};
use crate::metrics::Weights;
use crate::v2v::V2vConfig;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed {what} {path}: {source}")]
    Parse {
        what: &'static str,
        path: String,
        source: serde_json::Error,
    },
    #[error("scenario `{scenario}`: {source}")]
    Map {
        scenario: String,
        source: MapError,
    },
    #[error("scenario `{scenario}`: invalid `{field}`: {reason}")]
    Invalid {
        scenario: String,
        field: String,
        reason: String,
    },
    #[error("suite: invalid `{field}`: {reason}")]
    Suite { field: String, reason: String },
    #[error("unsupported combination: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Collaborative,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSource {
    Path(PathBuf),
    Inline(MapSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    #[serde(default)]
    pub speed: f64,
}

fn default_length() -> f64 {
    DEFAULT_LENGTH
}

fn default_width() -> f64 {
    DEFAULT_WIDTH
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_width")]
    pub width: f64,
}

impl Default for Dimensions {
    fn default() -> Self {
        Self {
            length: DEFAULT_LENGTH,
            width: DEFAULT_WIDTH,
        }
    }
}

impl StartState {
    pub fn vehicle(&self, dims: Dimensions, step: u64) -> VehicleState {
        let mut s = VehicleState::new(Vec2::new(self.x, self.y), self.heading, self.speed)
            .with_dimensions(dims.length, dims.width);
        s.step = step;
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSpec {
    pub id: ActorId,
    pub start: StartState,
    pub route: Route,
    #[serde(default)]
    pub dimensions: Dimensions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SocialBehavior {
    Replay {
        track: ReplayTrack,
    },
    Reactive {
        start: StartState,
        route: Route,
        #[serde(default)]
        idm: IdmParams,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialSpec {
    pub id: ActorId,
    #[serde(default)]
    pub spawn_step: u64,
    #[serde(default)]
    pub dimensions: Dimensions,
    pub behavior: SocialBehavior,
}

impl SocialSpec {
    /// Initial state when spawned at `step`.
    pub fn start_state(&self, step: u64) -> VehicleState {
        match &self.behavior {
            SocialBehavior::Replay { track } => {
                let (p, v) = track.sample(step);
                StartState {
                    x: p.position.x,
                    y: p.position.y,
                    heading: p.heading,
                    speed: v,
                }
                .vehicle(self.dimensions, step)
            }
            SocialBehavior::Reactive { start, .. } => start.vehicle(self.dimensions, step),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadSpec {
    pub id: ActorId,
    pub start: StartState,
    /// Lane sequence before any script redirection.
    pub lanes: Vec<LaneId>,
    pub script: LeadScript,
    /// Initial cruise speed until a cruise segment overrides it.
    pub cruise_speed: f64,
    #[serde(default)]
    pub dimensions: Dimensions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub map: MapSource,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Scenario time limit, seconds.
    pub time_limit: f64,
    pub task: TaskFamily,
    pub seed: u64,
    pub missions: Vec<MissionSpec>,
    #[serde(default)]
    pub social: Vec<SocialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lead: Option<LeadSpec>,
    /// Signals added on top of those in the map.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub signals: Vec<SignalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v2v: Option<V2vConfig>,
    #[serde(default)]
    pub limits: DynamicsLimits,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        serde_json::from_str(&read(path)?).map_err(|source| ScenarioError::Parse {
            what: "scenario",
            path: path.display().to_string(),
            source,
        })
    }

    /// Number of steps until the time limit.
    pub fn max_steps(&self) -> u64 {
        (self.time_limit / self.dt).round() as u64
    }

    fn invalid(&self, field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
        ScenarioError::Invalid {
            scenario: self.id.clone(),
            field: field.into(),
            reason: reason.into(),
        }
    }

    fn map_err(&self, source: MapError) -> ScenarioError {
        ScenarioError::Map {
            scenario: self.id.clone(),
            source,
        }
    }

    /// Builds the road network, resolving relative map paths against
    /// `base_dir` and merging scenario signals.
    pub fn network(&self, base_dir: &Path) -> Result<RoadNetwork, ScenarioError> {
        let mut spec = match &self.map {
            MapSource::Inline(spec) => spec.clone(),
            MapSource::Path(p) => {
                let full = if p.is_absolute() {
                    p.clone()
                } else {
                    base_dir.join(p)
                };
                serde_json::from_str::<MapSpec>(&read(&full)?).map_err(|source| {
                    ScenarioError::Parse {
                        what: "map",
                        path: full.display().to_string(),
                        source,
                    }
                })?
            }
        };
        spec.signals.extend(self.signals.iter().cloned());
        RoadNetwork::from_spec(spec).map_err(|e| self.map_err(e))
    }

    /// Full validation against the resolved network.
    pub fn validate(&self, net: &RoadNetwork) -> Result<(), ScenarioError> {
        if !(self.time_limit > 0.0) {
            return Err(self.invalid("time_limit", "must be positive"));
        }
        if !(self.dt > 0.0 && self.dt <= 0.5) {
            return Err(self.invalid("dt", "must be in (0, 0.5]"));
        }
        if !self.limits.validate() {
            return Err(self.invalid("limits", "all limits must be positive"));
        }
        if let Some(v) = &self.v2v {
            v.validate().map_err(|r| self.invalid("v2v", r))?;
        }
        if self.missions.is_empty() {
            return Err(self.invalid("missions", "at least one mission is required"));
        }
        match (self.task, &self.lead) {
            (TaskFamily::Adaptive, None) => {
                return Err(self.invalid("lead", "adaptive scenarios need a lead vehicle"))
            }
            (TaskFamily::Collaborative, Some(_)) => {
                return Err(self.invalid("lead", "only adaptive scenarios have a lead vehicle"))
            }
            _ => {}
        }
        let mut ids = BTreeSet::new();
        let all_ids = self
            .missions
            .iter()
            .map(|m| &m.id)
            .chain(self.social.iter().map(|s| &s.id))
            .chain(self.lead.iter().map(|l| &l.id));
        for id in all_ids {
            if !ids.insert(id) {
                return Err(self.invalid("id", format!("duplicate actor id `{id}`")));
            }
        }
        let check_dims = |field: String, d: &Dimensions| {
            if d.length > 0.0 && d.width > 0.0 {
                Ok(())
            } else {
                Err(self.invalid(field, "dimensions must be positive"))
            }
        };
        let on_map = |field: String, s: &StartState| {
            if [s.x, s.y, s.heading, s.speed].iter().all(|v| v.is_finite())
                && s.speed >= 0.0
                && net.on_road(Vec2::new(s.x, s.y))
            {
                Ok(())
            } else {
                Err(self.invalid(field, "start must be a finite on-road pose"))
            }
        };
        for m in &self.missions {
            let f = |x: &str| format!("missions.{}.{x}", m.id);
            check_dims(f("dimensions"), &m.dimensions)?;
            on_map(f("start"), &m.start)?;
            m.route.validate(net).map_err(|e| self.map_err(e))?;
            let start = Vec2::new(m.start.x, m.start.y);
            if m.route.goal.reached(start) {
                return Err(self.invalid(f("route.goal"), "start lies inside the arrival radius"));
            }
        }
        for s in &self.social {
            let f = |x: &str| format!("social.{}.{x}", s.id);
            check_dims(f("dimensions"), &s.dimensions)?;
            match &s.behavior {
                SocialBehavior::Replay { track } => {
                    track.validate().map_err(|r| self.invalid(f("track"), r))?
                }
                SocialBehavior::Reactive { start, route, .. } => {
                    on_map(f("start"), start)?;
                    route.validate(net).map_err(|e| self.map_err(e))?;
                }
            }
        }
        if let Some(l) = &self.lead {
            let f = |x: &str| format!("lead.{x}");
            check_dims(f("dimensions"), &l.dimensions)?;
            on_map(f("start"), &l.start)?;
            if !(l.cruise_speed > 0.0) {
                return Err(self.invalid(f("cruise_speed"), "must be positive"));
            }
            Route::new(l.lanes.clone(), crate::map::Goal::new(Vec2::ZERO))
                .validate(net)
                .map_err(|e| self.map_err(e))?;
            l.script.validate(net).map_err(|r| self.invalid(f("script"), r))?;
            l.script.resolve_path(net, &l.lanes).map_err(|e| self.map_err(e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioEntry {
    Path(PathBuf),
    Inline(Box<Scenario>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub name: String,
    pub task: TaskFamily,
    #[serde(default)]
    pub weights: Weights,
    pub scenarios: Vec<ScenarioEntry>,
}

/// A manifest with every scenario loaded and validated.
#[derive(Debug, Clone)]
pub struct Suite {
    pub name: String,
    pub task: TaskFamily,
    pub weights: Weights,
    pub scenarios: Vec<(Scenario, Arc<RoadNetwork>)>,
}

impl SuiteManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        serde_json::from_str(&read(path)?).map_err(|source| ScenarioError::Parse {
            what: "suite manifest",
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_scenarios(name: &str, task: TaskFamily, scenarios: Vec<Scenario>) -> Self {
        Self {
            name: name.into(),
            task,
            weights: Weights::default(),
            scenarios: scenarios
                .into_iter()
                .map(|s| ScenarioEntry::Inline(Box::new(s)))
                .collect(),
        }
    }

    /// Loads and validates every scenario. Relative paths resolve against
    /// `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Suite, ScenarioError> {
        self.weights.validate().map_err(|reason| ScenarioError::Suite {
            field: "weights".into(),
            reason,
        })?;
        if self.scenarios.is_empty() {
            return Err(ScenarioError::Suite {
                field: "scenarios".into(),
                reason: "suite is empty".into(),
            });
        }
        let mut out = Vec::with_capacity(self.scenarios.len());
        let mut seen = BTreeSet::new();
        for entry in &self.scenarios {
            let (scenario, dir) = match entry {
                ScenarioEntry::Inline(s) => ((**s).clone(), base_dir.to_path_buf()),
                ScenarioEntry::Path(p) => {
                    let full = base_dir.join(p);
                    let dir = full.parent().map(Path::to_path_buf).unwrap_or_default();
                    (Scenario::load(&full)?, dir)
                }
            };
            if scenario.task != self.task {
                return Err(ScenarioError::Suite {
                    field: "task".into(),
                    reason: format!("scenario `{}` belongs to another task family", scenario.id),
                });
            }
            if !seen.insert(scenario.id.clone()) {
                return Err(ScenarioError::Suite {
                    field: "scenarios".into(),
                    reason: format!("duplicate scenario id `{}`", scenario.id),
                });
            }
            let net = scenario.network(&dir)?;
            scenario.validate(&net)?;
            out.push((scenario, Arc::new(net)));
        }
        Ok(Suite {
            name: self.name.clone(),
            task: self.task,
            weights: self.weights,
            scenarios: out,
        })
    }
}
