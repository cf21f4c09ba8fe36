use drivebench::dynamics::Action;
use drivebench::engine::{ActorId, Event, EventKind, Simulation};
use drivebench::geom::Vec2;
use drivebench::render::{render_svg, Affine, DEFAULT_SCALE};
use drivebench::scenario::Scenario;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

fn straight_log(steps: u64) -> drivebench::engine::TrajectoryLog {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/scenarios");
    let s = Scenario::load(dir.join("straight.json")).unwrap();
    let mut sim = Simulation::new(&s, Arc::new(s.network(&dir).unwrap()));
    let act = Action::RelativeTargetPose {
        dx: 0.5,
        dy: 0.0,
        dheading: 0.0,
    };
    for _ in 0..steps {
        sim.step(&BTreeMap::from([(ActorId::from("m0"), act)])).unwrap();
    }
    sim.into_log()
}

fn attr<'a>(tag: &'a str, name: &str) -> &'a str {
    let key = format!("{name}=\"");
    let start = tag.find(&key).unwrap_or_else(|| panic!("no {name} in {tag}")) + key.len();
    &tag[start..start + tag[start..].find('"').unwrap()]
}

fn transform(svg: &str) -> Affine {
    Affine::parse(attr(svg, "data-world-to-svg")).unwrap()
}

#[test]
fn trajectory_points_map_back_to_logged_positions() {
    let log = straight_log(30);
    let svg = render_svg(&log, DEFAULT_SCALE);
    let t = transform(&svg);
    let line = svg.split("<polyline").nth(1).unwrap();
    assert_eq!(attr(line, "data-actor"), "m0");
    let pts: Vec<Vec2> = attr(line, "points")
        .split(' ')
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            t.invert(Vec2::new(x.parse().unwrap(), y.parse().unwrap()))
        })
        .collect();
    assert_eq!(pts.len(), 31);
    for (p, snap) in pts.iter().zip(&log.snapshots) {
        let want = snap.actor(&"m0".into()).unwrap().state.position;
        // Printed with three decimals at 4 units per meter.
        assert!((*p - want).norm() < 1e-3, "{p:?} vs {want:?}");
    }
}

#[test]
fn north_points_up() {
    let svg = render_svg(&straight_log(1), DEFAULT_SCALE);
    let t = transform(&svg);
    let (a, b) = (t.apply(Vec2::new(0.0, 0.0)), t.apply(Vec2::new(0.0, 1.0)));
    assert!(b.y < a.y);
    assert!((a.y - b.y - DEFAULT_SCALE).abs() < 1e-12);
}

#[test]
fn collisions_get_a_marker() {
    let mut log = straight_log(5);
    log.events.push(Event {
        step: 3,
        actor: "m0".into(),
        kind: EventKind::Collision { other: "x".into() },
    });
    let svg = render_svg(&log, DEFAULT_SCALE);
    let marker = svg.split("class=\"collision\"").nth(1).expect("marker");
    assert_eq!(attr(marker, "data-step"), "3");
    assert_eq!(attr(marker, "data-other"), "x");
    assert_eq!(svg.matches("class=\"lane\"").count(), log.header.map.lanes.len());
}
