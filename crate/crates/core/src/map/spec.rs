//! On-disk map schema. See `docs/map.schema.json`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub String);

impl LaneId {
    pub fn new(s: impl Into<String>) -> Self {
        LaneId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LaneId {
    fn from(s: &str) -> Self {
        LaneId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub lanes: Vec<LaneSpec>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub junctions: Vec<JunctionSpec>,
    #[serde(default)]
    pub signals: Vec<SignalSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub id: LaneId,
    /// Centerline points in meters, in the direction of travel.
    pub centerline: Vec<[f64; 2]>,
    pub width: f64,
    pub speed_limit: f64,
    #[serde(default)]
    pub successors: Vec<LaneId>,
    #[serde(default)]
    pub predecessors: Vec<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<LaneId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub id: String,
    /// Lanes ordered right to left.
    pub lanes: Vec<LaneId>,
    /// Edges internal to a junction (connecting lanes).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub internal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JunctionSpec {
    pub id: String,
    pub incoming: Vec<String>,
    pub outgoing: Vec<String>,
    /// Connecting lanes inside the junction.
    pub connections: Vec<LaneId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalState {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    /// Seconds.
    pub duration: f64,
    /// Per-lane state; controlled lanes missing from the map are red.
    pub states: BTreeMap<LaneId, SignalState>,
}

/// Fixed-cycle signal controlling the entry of its lanes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub id: String,
    pub lanes: Vec<LaneId>,
    pub phases: Vec<PhaseSpec>,
    /// Seconds added to simulation time before phase lookup.
    #[serde(default)]
    pub offset: f64,
}
