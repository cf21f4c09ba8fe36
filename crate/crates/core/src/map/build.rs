//! Procedural map builders used by the scenario generators, fixtures and the
//! performance diagnostic.

use super::spec::{EdgeSpec, JunctionSpec, LaneId, LaneSpec, MapSpec, PhaseSpec, SignalSpec, SignalState};
use crate::geom::Vec2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

pub const LANE_WIDTH: f64 = 3.5;
/// 50 km/h.
pub const URBAN_SPEED_LIMIT: f64 = 13.89;
/// 80 km/h.
pub const HIGHWAY_SPEED_LIMIT: f64 = 22.0;
/// Half-size of the junction box.
pub const JUNCTION_RADIUS: f64 = 10.0;

fn pts(points: &[Vec2]) -> Vec<[f64; 2]> {
    points.iter().map(|&p| p.into()).collect()
}

fn lane(id: &str, points: &[Vec2], width: f64, speed: f64) -> LaneSpec {
    LaneSpec {
        id: LaneId::new(id),
        centerline: pts(points),
        width,
        speed_limit: speed,
        successors: vec![],
        predecessors: vec![],
        left: None,
        right: None,
    }
}

/// Cubic Bezier sampled into `n` segments.
fn bezier(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2, n: usize) -> Vec<Vec2> {
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let u = 1.0 - t;
            p0 * (u * u * u) + p1 * (3.0 * u * u * t) + p2 * (3.0 * u * t * t) + p3 * (t * t * t)
        })
        .collect()
}

/// Straight multi-lane road along +x starting at the origin. Lane `l{i}` has
/// its centerline at `y = i * width`; lane 0 is the rightmost.
pub fn straight_road(n_lanes: usize, length: f64, width: f64, speed: f64) -> MapSpec {
    let mut lanes = Vec::with_capacity(n_lanes);
    for i in 0..n_lanes {
        let y = i as f64 * width;
        let mut l = lane(
            &format!("l{i}"),
            &[Vec2::new(0.0, y), Vec2::new(length, y)],
            width,
            speed,
        );
        if i > 0 {
            l.right = Some(LaneId::new(format!("l{}", i - 1)));
        }
        if i + 1 < n_lanes {
            l.left = Some(LaneId::new(format!("l{}", i + 1)));
        }
        lanes.push(l);
    }
    MapSpec {
        edges: vec![EdgeSpec {
            id: "e0".into(),
            lanes: lanes.iter().map(|l| l.id.clone()).collect(),
            internal: false,
        }],
        lanes,
        junctions: vec![],
        signals: vec![],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    East,
    North,
    West,
    South,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::East, Arm::North, Arm::West, Arm::South];

    pub fn tag(self) -> &'static str {
        match self {
            Arm::East => "e",
            Arm::North => "n",
            Arm::West => "w",
            Arm::South => "s",
        }
    }

    /// Unit vector pointing from the junction center out along the arm.
    pub fn outward(self) -> Vec2 {
        match self {
            Arm::East => Vec2::new(1.0, 0.0),
            Arm::North => Vec2::new(0.0, 1.0),
            Arm::West => Vec2::new(-1.0, 0.0),
            Arm::South => Vec2::new(0.0, -1.0),
        }
    }

    fn angle(self) -> f64 {
        match self {
            Arm::East => 0.0,
            Arm::North => FRAC_PI_2,
            Arm::West => PI,
            Arm::South => -FRAC_PI_2,
        }
    }

    /// Arm reached by a maneuver from a vehicle entering on `self`.
    pub fn exit_for(self, turn: Turn) -> Arm {
        // Travel direction is inward; left of it is +90 degrees.
        let travel = self.angle() + PI;
        let out = match turn {
            Turn::Left => travel + FRAC_PI_2,
            Turn::Right => travel - FRAC_PI_2,
            Turn::Through => travel,
        };
        let v = Vec2::from_angle(out);
        *Arm::ALL
            .iter()
            .max_by(|a, b| a.outward().dot(v).partial_cmp(&b.outward().dot(v)).unwrap())
            .unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Turn {
    Left,
    Right,
    Through,
}

impl Turn {
    pub fn between(from: Arm, to: Arm) -> Option<Turn> {
        [Turn::Left, Turn::Right, Turn::Through]
            .into_iter()
            .find(|&t| from.exit_for(t) == to)
    }
}

pub fn incoming_lane(arm: Arm) -> LaneId {
    LaneId::new(format!("{}_in_0", arm.tag()))
}

pub fn outgoing_lane(arm: Arm) -> LaneId {
    LaneId::new(format!("{}_out_0", arm.tag()))
}

pub fn connection_lane(from: Arm, to: Arm) -> LaneId {
    LaneId::new(format!("c_{}{}_0", from.tag(), to.tag()))
}

/// Single-lane-per-direction intersection centered at the origin with the
/// given arms, right-hand traffic. Every incoming arm connects to every other
/// arm (no U-turns).
pub fn intersection(arms: &[Arm], arm_length: f64, signalized: bool) -> MapSpec {
    let w = LANE_WIDTH;
    let r = JUNCTION_RADIUS;
    let mut lanes = Vec::new();
    let mut edges = Vec::new();
    let mut connections = Vec::new();
    for &a in arms {
        let u = a.outward();
        let n = u.perp();
        let in_pts = [u * (r + arm_length) + n * (0.5 * w), u * r + n * (0.5 * w)];
        let out_pts = [u * r - n * (0.5 * w), u * (r + arm_length) - n * (0.5 * w)];
        let mut lin = lane(&incoming_lane(a).0, &in_pts, w, URBAN_SPEED_LIMIT);
        for &b in arms {
            if b != a {
                lin.successors.push(connection_lane(a, b));
            }
        }
        lanes.push(lin);
        lanes.push(lane(&outgoing_lane(a).0, &out_pts, w, URBAN_SPEED_LIMIT));
        edges.push(EdgeSpec {
            id: format!("{}_in", a.tag()),
            lanes: vec![incoming_lane(a)],
            internal: false,
        });
        edges.push(EdgeSpec {
            id: format!("{}_out", a.tag()),
            lanes: vec![outgoing_lane(a)],
            internal: false,
        });
    }
    for &a in arms {
        for &b in arms {
            if a == b {
                continue;
            }
            let (ua, ub) = (a.outward(), b.outward());
            let p0 = ua * r + ua.perp() * (0.5 * w);
            let p3 = ub * r - ub.perp() * (0.5 * w);
            let d = -ua;
            let geometry = if Turn::between(a, b) == Some(Turn::Through) {
                vec![p0, p3]
            } else {
                let radius = (p3 - p0).dot(d).abs();
                let k = 0.5523 * radius;
                bezier(p0, p0 + d * k, p3 - ub * k, p3, 16)
            };
            let id = connection_lane(a, b);
            let mut l = lane(&id.0, &geometry, w, URBAN_SPEED_LIMIT);
            l.successors.push(outgoing_lane(b));
            lanes.push(l);
            edges.push(EdgeSpec {
                id: format!("c_{}{}", a.tag(), b.tag()),
                lanes: vec![id.clone()],
                internal: true,
            });
            connections.push(id);
        }
    }
    let junction = JunctionSpec {
        id: "j0".into(),
        incoming: arms.iter().map(|a| format!("{}_in", a.tag())).collect(),
        outgoing: arms.iter().map(|a| format!("{}_out", a.tag())).collect(),
        connections: connections.clone(),
    };
    let signals = if signalized {
        vec![four_phase_signal(arms)]
    } else {
        vec![]
    };
    MapSpec {
        lanes,
        edges,
        junctions: vec![junction],
        signals,
    }
}

pub const GREEN_TIME: f64 = 20.0;
pub const PROTECTED_LEFT_TIME: f64 = 10.0;
pub const YELLOW_TIME: f64 = 3.0;

/// Four-phase cycle: north-south through/right, north-south protected
/// lefts, then the same for east-west. Each green is followed by yellow.
pub fn four_phase_signal(arms: &[Arm]) -> SignalSpec {
    let mut all = Vec::new();
    for &a in arms {
        for &b in arms {
            if a != b {
                all.push((a, b));
            }
        }
    }
    let group = |axis: [Arm; 2], lefts: bool| -> Vec<LaneId> {
        all.iter()
            .filter(|(a, b)| {
                axis.contains(a) && (Turn::between(*a, *b) == Some(Turn::Left)) == lefts
            })
            .map(|&(a, b)| connection_lane(a, b))
            .collect()
    };
    let mut phases = Vec::new();
    for (axis, lefts, dur) in [
        ([Arm::North, Arm::South], false, GREEN_TIME),
        ([Arm::North, Arm::South], true, PROTECTED_LEFT_TIME),
        ([Arm::East, Arm::West], false, GREEN_TIME),
        ([Arm::East, Arm::West], true, PROTECTED_LEFT_TIME),
    ] {
        let lanes = group(axis, lefts);
        for (state, d) in [(SignalState::Green, dur), (SignalState::Yellow, YELLOW_TIME)] {
            phases.push(PhaseSpec {
                duration: d,
                states: lanes.iter().map(|l| (l.clone(), state)).collect::<BTreeMap<_, _>>(),
            });
        }
    }
    SignalSpec {
        id: "sig0".into(),
        lanes: all.iter().map(|&(a, b)| connection_lane(a, b)).collect(),
        phases,
        offset: 0.0,
    }
}

pub fn four_way(arm_length: f64, signalized: bool) -> MapSpec {
    intersection(&Arm::ALL, arm_length, signalized)
}

/// T-junction without a west arm.
pub fn t_junction(arm_length: f64) -> MapSpec {
    intersection(&[Arm::East, Arm::North, Arm::South], arm_length, false)
}

pub const HIGHWAY_FORK_X: f64 = 300.0;
pub const HIGHWAY_END_X: f64 = 700.0;

/// Two-lane highway along +x with an optional right-side exit ramp that
/// forks from the right lane at `HIGHWAY_FORK_X`.
pub fn highway(with_exit: bool) -> MapSpec {
    let w = LANE_WIDTH;
    let v = HIGHWAY_SPEED_LIMIT;
    let mut lanes = Vec::new();
    for (edge, x0, x1) in [("h0", 0.0, HIGHWAY_FORK_X), ("h1", HIGHWAY_FORK_X, HIGHWAY_END_X)] {
        for i in 0..2 {
            let y = i as f64 * w;
            let mut l = lane(
                &format!("{edge}_{i}"),
                &[Vec2::new(x0, y), Vec2::new(x1, y)],
                w,
                v,
            );
            if i == 0 {
                l.left = Some(LaneId::new(format!("{edge}_1")));
            } else {
                l.right = Some(LaneId::new(format!("{edge}_0")));
            }
            if edge == "h0" {
                l.successors.push(LaneId::new(format!("h1_{i}")));
            }
            lanes.push(l);
        }
    }
    let mut edges = vec![
        EdgeSpec {
            id: "h0".into(),
            lanes: vec!["h0_0".into(), "h0_1".into()],
            internal: false,
        },
        EdgeSpec {
            id: "h1".into(),
            lanes: vec!["h1_0".into(), "h1_1".into()],
            internal: false,
        },
    ];
    if with_exit {
        let p0 = Vec2::new(HIGHWAY_FORK_X, 0.0);
        let p3 = Vec2::new(HIGHWAY_FORK_X + 120.0, -24.0);
        let mut geometry = bezier(
            p0,
            p0 + Vec2::new(50.0, 0.0),
            p3 - Vec2::new(50.0, -10.0),
            p3,
            24,
        );
        let dir = Vec2::new(50.0, -10.0).normalized();
        geometry.push(p3 + dir * 150.0);
        lanes.push(lane("x0_0", &geometry, w, 16.0));
        lanes[0].successors.push("x0_0".into());
        edges.push(EdgeSpec {
            id: "x0".into(),
            lanes: vec!["x0_0".into()],
            internal: false,
        });
    }
    MapSpec {
        lanes,
        edges,
        junctions: vec![],
        signals: vec![],
    }
}

/// Closed ring road split into `n_edges` arcs, counter-clockwise travel, with
/// `n_lanes` concentric lanes (lane 0 outermost, i.e. rightmost). Centerlines
/// are sampled roughly every 5 m, independent of the edge count.
pub fn ring(n_edges: usize, n_lanes: usize, radius: f64) -> MapSpec {
    assert!(n_edges >= 1 && n_lanes >= 1);
    let w = LANE_WIDTH;
    let total_pts = ((2.0 * PI * radius) / 5.0).ceil() as usize;
    let per_edge = (total_pts / n_edges).max(2);
    let mut lanes = Vec::new();
    let mut edges = Vec::new();
    for e in 0..n_edges {
        let a0 = 2.0 * PI * e as f64 / n_edges as f64;
        let a1 = 2.0 * PI * (e + 1) as f64 / n_edges as f64;
        let mut ids = Vec::new();
        for j in 0..n_lanes {
            let rj = radius - j as f64 * w;
            let points: Vec<Vec2> = (0..=per_edge)
                .map(|k| {
                    let a = a0 + (a1 - a0) * k as f64 / per_edge as f64;
                    Vec2::from_angle(a) * rj
                })
                .collect();
            let id = format!("r{e}_{j}");
            let mut l = lane(&id, &points, w, URBAN_SPEED_LIMIT);
            l.successors.push(LaneId::new(format!("r{}_{j}", (e + 1) % n_edges)));
            if j > 0 {
                l.right = Some(LaneId::new(format!("r{e}_{}", j - 1)));
            }
            if j + 1 < n_lanes {
                l.left = Some(LaneId::new(format!("r{e}_{}", j + 1)));
            }
            ids.push(l.id.clone());
            lanes.push(l);
        }
        edges.push(EdgeSpec {
            id: format!("r{e}"),
            lanes: ids,
            internal: false,
        });
    }
    MapSpec {
        lanes,
        edges,
        junctions: vec![],
        signals: vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::RoadNetwork;

    #[test]
    fn exits_follow_right_hand_turns() {
        assert_eq!(Arm::South.exit_for(Turn::Left), Arm::West);
        assert_eq!(Arm::South.exit_for(Turn::Right), Arm::East);
        assert_eq!(Arm::South.exit_for(Turn::Through), Arm::North);
        assert_eq!(Arm::East.exit_for(Turn::Left), Arm::South);
    }

    #[test]
    fn builders_validate() {
        for spec in [
            straight_road(3, 200.0, 3.5, 13.9),
            four_way(100.0, false),
            four_way(100.0, true),
            t_junction(100.0),
            highway(true),
            highway(false),
            ring(1, 3, 150.0),
            ring(50, 3, 150.0),
        ] {
            RoadNetwork::from_spec(spec).unwrap();
        }
    }

    #[test]
    fn four_way_counts() {
        let net = RoadNetwork::from_spec(four_way(100.0, false)).unwrap();
        assert_eq!(net.junctions().len(), 1);
        assert_eq!(net.junctions()[0].connections.len(), 12);
        assert_eq!(net.road_edge_count(), 8);
    }

    #[test]
    fn connections_are_continuous() {
        let net = RoadNetwork::from_spec(four_way(100.0, false)).unwrap();
        for l in net.lanes() {
            for s in &l.successors {
                let next = net.lane(s).unwrap();
                assert!(l.centerline.end().distance(next.centerline.start()) < 1e-9);
            }
        }
    }
}
