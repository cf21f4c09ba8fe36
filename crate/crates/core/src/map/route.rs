use super::{LaneId, MapError, RoadNetwork};
use crate::geom::{Pose, Vec2};
use serde::{Deserialize, Serialize};

pub const DEFAULT_ARRIVAL_RADIUS: f64 = 2.0;
/// Maximum distance from the route for waypoint generation.
pub const ROUTE_CAPTURE_DISTANCE: f64 = 20.0;

fn default_radius() -> f64 {
    DEFAULT_ARRIVAL_RADIUS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub position: Vec2,
    #[serde(default = "default_radius")]
    pub arrival_radius: f64,
}

impl Goal {
    pub fn new(position: Vec2) -> Self {
        Self {
            position,
            arrival_radius: DEFAULT_ARRIVAL_RADIUS,
        }
    }

    pub fn reached(&self, p: Vec2) -> bool {
        p.distance(self.position) <= self.arrival_radius
    }

    /// Distance from `p` to the arrival region.
    pub fn distance(&self, p: Vec2) -> f64 {
        (p.distance(self.position) - self.arrival_radius).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub lanes: Vec<LaneId>,
    pub goal: Goal,
}

/// A position resolved against a route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutePosition {
    /// Index into `Route::lanes`.
    pub index: usize,
    /// Station along that lane.
    pub station: f64,
    /// Absolute lateral offset from that lane.
    pub distance: f64,
}

/// Same-lane successor link vs. lane change.
fn is_successor(net: &RoadNetwork, a: &LaneId, b: &LaneId) -> bool {
    net.lane(a).is_some_and(|l| l.successors.contains(b))
}

impl Route {
    pub fn new(lanes: Vec<LaneId>, goal: Goal) -> Self {
        Self { lanes, goal }
    }

    pub fn validate(&self, net: &RoadNetwork) -> Result<(), MapError> {
        if self.lanes.is_empty() {
            return Err(MapError::InvalidRoute("no lanes".into()));
        }
        for l in &self.lanes {
            if net.lane(l).is_none() {
                return Err(MapError::UnknownLane(l.clone()));
            }
        }
        for w in self.lanes.windows(2) {
            if !net.connected(&w[0], &w[1]) {
                return Err(MapError::InvalidRoute(format!(
                    "`{}` is not connected to `{}`",
                    w[0], w[1]
                )));
            }
        }
        if !(self.goal.arrival_radius > 0.0) || !self.goal.position.is_finite() {
            return Err(MapError::InvalidRoute("invalid goal".into()));
        }
        Ok(())
    }

    /// Finds the route lane closest to `p` within the capture distance.
    /// Ties go to the earliest route index.
    pub fn locate(&self, net: &RoadNetwork, p: Vec2) -> Result<RoutePosition, MapError> {
        let mut best: Option<RoutePosition> = None;
        for li in net.lanes_near(p, ROUTE_CAPTURE_DISTANCE) {
            let id = &net.lane_at(li).id;
            let Some(index) = self.lanes.iter().position(|l| l == id) else {
                continue;
            };
            let proj = net.lane_at(li).centerline.project(p);
            let cand = RoutePosition {
                index,
                station: proj.station,
                distance: proj.offset.abs(),
            };
            let better = match best {
                None => true,
                Some(b) => {
                    cand.distance < b.distance || (cand.distance == b.distance && index < b.index)
                }
            };
            if better {
                best = Some(cand);
            }
        }
        best.ok_or(MapError::OffRoute {
            x: p.x,
            y: p.y,
            limit: ROUTE_CAPTURE_DISTANCE,
        })
    }

    /// Station of the goal's projection on the final lane.
    pub fn end_station(&self, net: &RoadNetwork) -> f64 {
        let last = net.lane(self.lanes.last().unwrap()).unwrap();
        last.centerline.project(self.goal.position).station
    }

    /// Distance travelled along the route from its start to `pos`, following
    /// successor links (lane changes contribute no length).
    pub fn distance_along(&self, net: &RoadNetwork, pos: RoutePosition) -> f64 {
        let mut total = 0.0;
        for i in 0..pos.index {
            if is_successor(net, &self.lanes[i], &self.lanes[i + 1]) {
                total += net.lane(&self.lanes[i]).unwrap().length();
            }
        }
        total + pos.station
    }
}

/// Samples poses along the route centerlines every `spacing` meters, starting
/// at the projection of `from`, up to `horizon` meters ahead. When the route
/// (ending at the goal projection) is shorter than the horizon the final pose
/// sits at the route end.
pub fn waypoints_along(
    net: &RoadNetwork,
    route: &Route,
    from: Pose,
    horizon: f64,
    spacing: f64,
) -> Result<Vec<Pose>, MapError> {
    if !(horizon > 0.0 && spacing > 0.0) {
        return Err(MapError::InvalidRoute(
            "horizon and spacing must be positive".into(),
        ));
    }
    let mut pos = route.locate(net, from.position)?;
    // Lane changes take effect immediately.
    while pos.index + 1 < route.lanes.len()
        && !is_successor(net, &route.lanes[pos.index], &route.lanes[pos.index + 1])
    {
        pos.index += 1;
        let lane = net.lane(&route.lanes[pos.index]).unwrap();
        pos.station = lane.centerline.project(from.position).station;
    }

    let last = route.lanes.len() - 1;
    let mut out = Vec::with_capacity((horizon / spacing) as usize + 2);
    let mut index = pos.index;
    let mut lane_start = pos.station;
    // Distance along the path at which the current leg begins.
    let mut leg_offset = 0.0;
    let mut next_sample = 0.0;
    loop {
        let lane = net.lane(&route.lanes[index]).unwrap();
        let lane_end = if index == last {
            route.end_station(net).max(lane_start)
        } else {
            lane.length()
        };
        let leg_len = lane_end - lane_start;
        while next_sample < horizon && next_sample <= leg_offset + leg_len {
            out.push(lane.centerline.pose_at(lane_start + next_sample - leg_offset));
            next_sample = out.len() as f64 * spacing;
        }
        if next_sample >= horizon {
            break;
        }
        if index == last {
            let end = lane.centerline.pose_at(lane_end);
            if out.last().is_none_or(|p: &Pose| p.position != end.position) {
                out.push(end);
            }
            break;
        }
        leg_offset += leg_len;
        // Entering the next lane; lane changes that follow take effect at once.
        let mut next = index + 1;
        let mut anchor = net.lane(&route.lanes[next]).unwrap().centerline.start();
        let mut start = 0.0;
        if !is_successor(net, &route.lanes[index], &route.lanes[next]) {
            anchor = lane.centerline.end();
            start = net.lane(&route.lanes[next]).unwrap().centerline.project(anchor).station;
        }
        while next < last && !is_successor(net, &route.lanes[next], &route.lanes[next + 1]) {
            next += 1;
            start = net.lane(&route.lanes[next]).unwrap().centerline.project(anchor).station;
        }
        index = next;
        lane_start = start;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::build::{self, connection_lane, incoming_lane, outgoing_lane, Arm};

    fn straight() -> RoadNetwork {
        RoadNetwork::from_spec(build::straight_road(2, 200.0, 3.5, 15.0)).unwrap()
    }

    fn route(lanes: &[&str], goal: (f64, f64)) -> Route {
        Route::new(lanes.iter().map(|&l| LaneId::new(l)).collect(), Goal::new(Vec2::new(goal.0, goal.1)))
    }

    #[test]
    fn goal_region() {
        let g = Goal::new(Vec2::new(10.0, 0.0));
        assert!(g.reached(Vec2::new(8.0, 0.0)));
        assert!(!g.reached(Vec2::new(7.9, 0.0)));
        assert_eq!(g.distance(Vec2::new(4.0, 0.0)), 4.0);
        assert_eq!(g.distance(Vec2::new(9.0, 0.0)), 0.0);
    }

    #[test]
    fn validation() {
        let net = straight();
        assert!(route(&["l0", "l1"], (100.0, 3.5)).validate(&net).is_ok());
        assert!(matches!(route(&[], (1.0, 0.0)).validate(&net), Err(MapError::InvalidRoute(_))));
        assert!(matches!(route(&["l7"], (1.0, 0.0)).validate(&net), Err(MapError::UnknownLane(_))));
        assert!(matches!(route(&["l0", "l0"], (1.0, 0.0)).validate(&net), Err(MapError::InvalidRoute(_))));
        let mut r = route(&["l0"], (1.0, 0.0));
        r.goal.arrival_radius = 0.0;
        assert!(r.validate(&net).is_err());
    }

    #[test]
    fn locate_prefers_the_nearest_route_lane() {
        let net = straight();
        let r = route(&["l0", "l1"], (150.0, 3.5));
        let p = r.locate(&net, Vec2::new(40.0, 3.0)).unwrap();
        assert_eq!(p.index, 1);
        assert!((p.station - 40.0).abs() < 1e-9);
        assert!((p.distance - 0.5).abs() < 1e-9);
        assert!(matches!(r.locate(&net, Vec2::new(40.0, 60.0)), Err(MapError::OffRoute { .. })));
    }

    #[test]
    fn waypoints_are_evenly_spaced_and_stop_at_the_goal() {
        let net = straight();
        let r = route(&["l0"], (50.0, 0.0));
        let from = Pose::new(10.0, 0.0, 0.0);
        let w = waypoints_along(&net, &r, from, 30.0, 2.0).unwrap();
        assert_eq!(w.len(), 15);
        for (i, p) in w.iter().enumerate() {
            assert!((p.position.x - (10.0 + 2.0 * i as f64)).abs() < 1e-9);
        }
        let w = waypoints_along(&net, &r, Pose::new(35.0, 0.0, 0.0), 30.0, 2.0).unwrap();
        assert_eq!(w.last().unwrap().position, Vec2::new(50.0, 0.0));
        assert!(waypoints_along(&net, &r, from, 0.0, 2.0).is_err());
    }

    #[test]
    fn waypoints_follow_a_left_turn() {
        let net = RoadNetwork::from_spec(build::four_way(60.0, false)).unwrap();
        let (a, b) = (Arm::South, Arm::West);
        let lanes = vec![incoming_lane(a), connection_lane(a, b), outgoing_lane(b)];
        let end = net.lane(&lanes[2]).unwrap().centerline.pose_at(20.0).position;
        let r = Route::new(lanes.clone(), Goal::new(end));
        r.validate(&net).unwrap();
        let start = net.lane(&lanes[0]).unwrap().centerline.pose_at(30.0);
        let w = waypoints_along(&net, &r, start, 200.0, 1.0).unwrap();
        // Arc-length sampling: chords never exceed the spacing.
        for pair in w.windows(2) {
            let d = pair[0].position.distance(pair[1].position);
            assert!(d <= 1.0 + 1e-9 && d > 0.0, "{d}");
        }
        assert!(w.last().unwrap().position.distance(end) < 1e-9);
        let along = r.distance_along(&net, r.locate(&net, end).unwrap());
        let total = net.lane(&lanes[0]).unwrap().length() + net.lane(&lanes[1]).unwrap().length() + 20.0;
        assert!((along - total).abs() < 1e-6);
    }
}
