//! Lane-level road network: loading, validation and geometric queries.

pub mod build;
mod index;
mod route;
mod spec;

pub use route::{
    waypoints_along, Goal, Route, RoutePosition, DEFAULT_ARRIVAL_RADIUS, ROUTE_CAPTURE_DISTANCE,
};
pub use spec::{
    EdgeSpec, JunctionSpec, LaneId, LaneSpec, MapSpec, PhaseSpec, SignalSpec, SignalState,
};

use crate::geom::{OrientedRect, Polyline, Projection, Vec2};
use index::LaneGrid;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("cannot read map {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed map JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("map has no lanes")]
    Empty,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("lane `{lane}` references missing lane `{missing}` as {relation}")]
    DanglingLane {
        lane: LaneId,
        missing: LaneId,
        relation: &'static str,
    },
    #[error("lane `{0}` has an invalid centerline (needs >= 2 points with positive segment lengths)")]
    DegenerateCenterline(LaneId),
    #[error("lane `{0}` is shorter than 0.5 m")]
    LaneTooShort(LaneId),
    #[error("lane `{lane}` has invalid width {width} (must be in (0, 10] m)")]
    InvalidWidth { lane: LaneId, width: f64 },
    #[error("lane `{lane}` has invalid speed limit {speed_limit} (must be > 0)")]
    InvalidSpeedLimit { lane: LaneId, speed_limit: f64 },
    #[error("lane `{0}` does not belong to any edge")]
    OrphanLane(LaneId),
    #[error("lane `{0}` belongs to more than one edge")]
    SharedLane(LaneId),
    #[error("edge `{edge}` references missing lane `{lane}`")]
    EdgeUnknownLane { edge: String, lane: LaneId },
    #[error("junction `{junction}` references missing edge `{edge}`")]
    JunctionUnknownEdge { junction: String, edge: String },
    #[error("junction `{junction}` references missing lane `{lane}`")]
    JunctionUnknownLane { junction: String, lane: LaneId },
    #[error("signal `{signal}` is invalid: {reason}")]
    InvalidSignal { signal: String, reason: String },
    #[error("unknown lane `{0}`")]
    UnknownLane(LaneId),
    #[error("route is invalid: {0}")]
    InvalidRoute(String),
    #[error("position ({x:.2}, {y:.2}) is more than {limit} m from every route lane")]
    OffRoute { x: f64, y: f64, limit: f64 },
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: LaneId,
    pub centerline: Polyline,
    pub width: f64,
    pub speed_limit: f64,
    pub successors: Vec<LaneId>,
    pub predecessors: Vec<LaneId>,
    pub left: Option<LaneId>,
    pub right: Option<LaneId>,
    /// Index into [`RoadNetwork::edges`].
    pub edge: usize,
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.centerline.length()
    }
}

#[derive(Debug, Clone)]
pub struct TrafficSignal {
    pub id: String,
    pub lanes: Vec<LaneId>,
    pub phases: Vec<PhaseSpec>,
    pub offset: f64,
    cycle: f64,
}

impl TrafficSignal {
    pub fn cycle(&self) -> f64 {
        self.cycle
    }

    /// Active phase index at simulation time `t` seconds.
    pub fn phase_at(&self, t: f64) -> usize {
        let mut local = (t + self.offset).rem_euclid(self.cycle);
        for (i, p) in self.phases.iter().enumerate() {
            if local < p.duration {
                return i;
            }
            local -= p.duration;
        }
        self.phases.len() - 1
    }

    pub fn state(&self, phase: usize, lane: &LaneId) -> SignalState {
        self.phases[phase]
            .states
            .get(lane)
            .copied()
            .unwrap_or(SignalState::Red)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffroadStatus {
    OnRoad,
    PartialOffroad,
    FullOffroad,
}

/// Result of [`RoadNetwork::nearest_lane`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneMatch {
    pub lane: usize,
    pub offset: f64,
    pub station: f64,
}

/// Immutable validated road network.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    lanes: Vec<Lane>,
    lane_index: BTreeMap<LaneId, usize>,
    edges: Vec<EdgeSpec>,
    junctions: Vec<JunctionSpec>,
    signals: Vec<TrafficSignal>,
    grid: LaneGrid,
    spec: MapSpec,
}

impl RoadNetwork {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MapError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let spec: MapSpec = serde_json::from_str(text)?;
        Self::from_spec(spec)
    }

    pub fn from_spec(spec: MapSpec) -> Result<Self, MapError> {
        if spec.lanes.is_empty() {
            return Err(MapError::Empty);
        }
        let mut lane_index = BTreeMap::new();
        for (i, l) in spec.lanes.iter().enumerate() {
            if lane_index.insert(l.id.clone(), i).is_some() {
                return Err(MapError::DuplicateId(l.id.0.clone()));
            }
        }
        let mut lanes = Vec::with_capacity(spec.lanes.len());
        for l in &spec.lanes {
            let pts = l.centerline.iter().map(|&p| Vec2::from(p)).collect();
            let centerline =
                Polyline::new(pts).ok_or_else(|| MapError::DegenerateCenterline(l.id.clone()))?;
            if centerline.length() < 0.5 {
                return Err(MapError::LaneTooShort(l.id.clone()));
            }
            if !(l.width > 0.0 && l.width <= 10.0) {
                return Err(MapError::InvalidWidth {
                    lane: l.id.clone(),
                    width: l.width,
                });
            }
            if !(l.speed_limit > 0.0 && l.speed_limit.is_finite()) {
                return Err(MapError::InvalidSpeedLimit {
                    lane: l.id.clone(),
                    speed_limit: l.speed_limit,
                });
            }
            let refs = l
                .successors
                .iter()
                .map(|r| (r, "successor"))
                .chain(l.predecessors.iter().map(|r| (r, "predecessor")))
                .chain(l.left.iter().map(|r| (r, "left neighbor")))
                .chain(l.right.iter().map(|r| (r, "right neighbor")));
            for (r, relation) in refs {
                if !lane_index.contains_key(r) {
                    return Err(MapError::DanglingLane {
                        lane: l.id.clone(),
                        missing: r.clone(),
                        relation,
                    });
                }
            }
            lanes.push(Lane {
                id: l.id.clone(),
                centerline,
                width: l.width,
                speed_limit: l.speed_limit,
                successors: l.successors.clone(),
                predecessors: l.predecessors.clone(),
                left: l.left.clone(),
                right: l.right.clone(),
                edge: usize::MAX,
            });
        }
        // Predecessors are the union of declared and implied relations.
        for i in 0..lanes.len() {
            for s in lanes[i].successors.clone() {
                let j = lane_index[&s];
                let id = lanes[i].id.clone();
                if !lanes[j].predecessors.contains(&id) {
                    lanes[j].predecessors.push(id);
                }
            }
        }

        let mut edge_ids = BTreeMap::new();
        for (ei, e) in spec.edges.iter().enumerate() {
            if edge_ids.insert(e.id.clone(), ei).is_some() {
                return Err(MapError::DuplicateId(e.id.clone()));
            }
            for l in &e.lanes {
                let li = *lane_index.get(l).ok_or_else(|| MapError::EdgeUnknownLane {
                    edge: e.id.clone(),
                    lane: l.clone(),
                })?;
                if lanes[li].edge != usize::MAX {
                    return Err(MapError::SharedLane(l.clone()));
                }
                lanes[li].edge = ei;
            }
        }
        if let Some(l) = lanes.iter().find(|l| l.edge == usize::MAX) {
            return Err(MapError::OrphanLane(l.id.clone()));
        }

        for j in &spec.junctions {
            for e in j.incoming.iter().chain(&j.outgoing) {
                if !edge_ids.contains_key(e) {
                    return Err(MapError::JunctionUnknownEdge {
                        junction: j.id.clone(),
                        edge: e.clone(),
                    });
                }
            }
            for l in &j.connections {
                if !lane_index.contains_key(l) {
                    return Err(MapError::JunctionUnknownLane {
                        junction: j.id.clone(),
                        lane: l.clone(),
                    });
                }
            }
        }

        let mut signals = Vec::with_capacity(spec.signals.len());
        for s in &spec.signals {
            let invalid = |reason: &str| MapError::InvalidSignal {
                signal: s.id.clone(),
                reason: reason.to_string(),
            };
            if s.phases.is_empty() {
                return Err(invalid("no phases"));
            }
            if s.phases.iter().any(|p| !(p.duration > 0.0)) {
                return Err(invalid("phase durations must be positive"));
            }
            for l in s.lanes.iter().chain(s.phases.iter().flat_map(|p| p.states.keys())) {
                if !lane_index.contains_key(l) {
                    return Err(invalid(&format!("unknown lane `{l}`")));
                }
            }
            signals.push(TrafficSignal {
                id: s.id.clone(),
                lanes: s.lanes.clone(),
                phases: s.phases.clone(),
                offset: s.offset,
                cycle: s.phases.iter().map(|p| p.duration).sum(),
            });
        }

        let mut segments = Vec::new();
        for (i, l) in lanes.iter().enumerate() {
            for k in 0..l.centerline.segment_count() {
                let (a, b) = l.centerline.segment(k);
                segments.push((i, a, b, 0.5 * l.width));
            }
        }
        let grid = LaneGrid::build(&segments);

        Ok(Self {
            lanes,
            lane_index,
            edges: spec.edges.clone(),
            junctions: spec.junctions.clone(),
            signals,
            grid,
            spec,
        })
    }

    pub fn spec(&self) -> &MapSpec {
        &self.spec
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn edges(&self) -> &[EdgeSpec] {
        &self.edges
    }

    /// Edges that are not junction-internal.
    pub fn road_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| !e.internal).count()
    }

    pub fn junctions(&self) -> &[JunctionSpec] {
        &self.junctions
    }

    pub fn signals(&self) -> &[TrafficSignal] {
        &self.signals
    }

    pub fn lane_idx(&self, id: &LaneId) -> Option<usize> {
        self.lane_index.get(id).copied()
    }

    pub fn lane(&self, id: &LaneId) -> Option<&Lane> {
        self.lane_idx(id).map(|i| &self.lanes[i])
    }

    pub fn lane_at(&self, idx: usize) -> &Lane {
        &self.lanes[idx]
    }

    /// Lane whose centerline is closest to `p`. Offset is positive left of the
    /// direction of travel; ties go to the smallest lane id.
    pub fn nearest_lane(&self, p: Vec2) -> LaneMatch {
        let mut best: Option<(f64, usize, Projection)> = None;
        let mut seen = vec![false; self.lanes.len()];
        self.grid.search_rings(p, |ring, bound| {
            for &li in ring {
                if std::mem::replace(&mut seen[li], true) {
                    continue;
                }
                let proj = self.lanes[li].centerline.project(p);
                let d = proj.offset.abs();
                let better = match &best {
                    None => true,
                    Some((bd, bi, _)) => {
                        d < *bd || (d == *bd && self.lanes[li].id < self.lanes[*bi].id)
                    }
                };
                if better {
                    best = Some((d, li, proj));
                }
            }
            matches!(best, Some((d, _, _)) if d < bound)
        });
        let (_, lane, proj) = best.expect("network is non-empty");
        LaneMatch {
            lane,
            offset: proj.offset,
            station: proj.station,
        }
    }

    /// Whether `p` lies on the union of lane surfaces.
    pub fn on_road(&self, p: Vec2) -> bool {
        self.grid.lanes_at(p).iter().any(|&li| {
            let l = &self.lanes[li];
            l.centerline.surface_contains(p, 0.5 * l.width)
        })
    }

    /// Counts footprint corners (wheel proxies) off the road surface.
    pub fn offroad_status(&self, footprint: &OrientedRect) -> OffroadStatus {
        let off = footprint
            .corners()
            .iter()
            .filter(|&&c| !self.on_road(c))
            .count();
        match off {
            0 => OffroadStatus::OnRoad,
            1 | 2 => OffroadStatus::PartialOffroad,
            _ => OffroadStatus::FullOffroad,
        }
    }

    /// Lanes whose surface lies within `radius` of `p`.
    pub fn lanes_near(&self, p: Vec2, radius: f64) -> Vec<usize> {
        let mut found = Vec::new();
        let mut seen = vec![false; self.lanes.len()];
        self.grid.search_rings(p, |ring, bound| {
            for &li in ring {
                if std::mem::replace(&mut seen[li], true) {
                    continue;
                }
                if self.lanes[li].centerline.project(p).offset.abs() <= radius {
                    found.push(li);
                }
            }
            bound > radius
        });
        found.sort_unstable();
        found
    }

    /// True when `b` follows `a` directly or is its lane-change neighbor.
    pub fn connected(&self, a: &LaneId, b: &LaneId) -> bool {
        self.lane(a).is_some_and(|l| {
            l.successors.contains(b) || l.left.as_ref() == Some(b) || l.right.as_ref() == Some(b)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight() -> RoadNetwork {
        RoadNetwork::from_spec(build::straight_road(2, 100.0, 3.5, 13.9)).unwrap()
    }

    #[test]
    fn point_on_centerline_has_zero_offset() {
        let net = straight();
        let l0 = net.lane_at(0).centerline.point_at(40.0);
        let m = net.nearest_lane(l0);
        assert_eq!(m.lane, 0);
        assert_eq!(m.offset, 0.0);
        assert!((m.station - 40.0).abs() < 1e-9);
    }

    #[test]
    fn left_offset_is_positive() {
        let net = RoadNetwork::from_spec(build::straight_road(1, 100.0, 3.5, 13.9)).unwrap();
        let m = net.nearest_lane(Vec2::new(30.0, 1.0));
        assert!((m.offset - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tie_breaks_on_lane_id() {
        let net = straight();
        // Exactly between the two lane centerlines.
        let y = 0.5 * (net.lane_at(0).centerline.start().y + net.lane_at(1).centerline.start().y);
        let m = net.nearest_lane(Vec2::new(50.0, y));
        let expected = if net.lane_at(0).id < net.lane_at(1).id { 0 } else { 1 };
        assert_eq!(m.lane, expected);
    }

    #[test]
    fn far_point_still_resolves() {
        let net = straight();
        let m = net.nearest_lane(Vec2::new(5000.0, -3000.0));
        assert!(m.offset.abs() > 1000.0);
    }

    #[test]
    fn offroad_classification() {
        let net = RoadNetwork::from_spec(build::straight_road(1, 100.0, 3.5, 13.9)).unwrap();
        let on = OrientedRect::new(Vec2::new(50.0, 0.0), 0.0, 4.0, 2.0);
        assert_eq!(net.offroad_status(&on), OffroadStatus::OnRoad);
        // Left edge of the road at y = 1.75; two corners beyond it.
        let straddle = OrientedRect::new(Vec2::new(50.0, 1.75), 0.0, 4.0, 2.0);
        assert_eq!(net.offroad_status(&straddle), OffroadStatus::PartialOffroad);
        let off = OrientedRect::new(Vec2::new(50.0, 20.0), 0.0, 4.0, 2.0);
        assert_eq!(net.offroad_status(&off), OffroadStatus::FullOffroad);
    }

    #[test]
    fn signal_phase_lookup() {
        let sig = TrafficSignal {
            id: "s".into(),
            lanes: vec![],
            phases: vec![
                PhaseSpec {
                    duration: 10.0,
                    states: BTreeMap::new(),
                },
                PhaseSpec {
                    duration: 5.0,
                    states: BTreeMap::new(),
                },
            ],
            offset: 0.0,
            cycle: 15.0,
        };
        assert_eq!(sig.phase_at(0.0), 0);
        assert_eq!(sig.phase_at(9.99), 0);
        assert_eq!(sig.phase_at(10.0), 1);
        assert_eq!(sig.phase_at(15.0), 0);
    }

    #[test]
    fn rejects_bad_width() {
        let mut spec = build::straight_road(1, 100.0, 3.5, 13.9);
        spec.lanes[0].width = 0.0;
        let err = RoadNetwork::from_spec(spec).unwrap_err();
        assert!(matches!(err, MapError::InvalidWidth { .. }));
    }
}
