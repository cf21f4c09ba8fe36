//! Static SVG rendering of a trajectory log: lanes, final footprints,
//! mission trajectories and collision markers.
//!
//! World meters map to SVG user units through the affine transform declared
//! on the root element as `data-world-to-svg="a b c d e f"`, with
//! `svg_x = a*x + c*y + e` and `svg_y = b*x + d*y + f`.

use crate::engine::{EventKind, Role, TrajectoryLog};
use crate::geom::{OrientedRect, Vec2};
use std::fmt::Write;

/// SVG units per meter.
pub const DEFAULT_SCALE: f64 = 4.0;
const MARGIN: f64 = 10.0;

/// Affine world-to-SVG map; the y axis is flipped so north points up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl Affine {
    pub fn apply(&self, p: Vec2) -> Vec2 {
        Vec2::new(
            self.a * p.x + self.c * p.y + self.e,
            self.b * p.x + self.d * p.y + self.f,
        )
    }

    pub fn invert(&self, q: Vec2) -> Vec2 {
        let det = self.a * self.d - self.b * self.c;
        let (x, y) = (q.x - self.e, q.y - self.f);
        Vec2::new((self.d * x - self.c * y) / det, (-self.b * x + self.a * y) / det)
    }

    pub fn parse(s: &str) -> Option<Self> {
        let v: Vec<f64> = s.split_whitespace().map(|t| t.parse().ok()).collect::<Option<_>>()?;
        match v[..] {
            [a, b, c, d, e, f] => Some(Affine { a, b, c, d, e, f }),
            _ => None,
        }
    }
}

fn bounds(log: &TrajectoryLog) -> (Vec2, Vec2) {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut add = |p: Vec2, r: f64| {
        lo = Vec2::new(lo.x.min(p.x - r), lo.y.min(p.y - r));
        hi = Vec2::new(hi.x.max(p.x + r), hi.y.max(p.y + r));
    };
    for lane in &log.header.map.lanes {
        for &[x, y] in &lane.centerline {
            add(Vec2::new(x, y), 0.5 * lane.width);
        }
    }
    for snap in &log.snapshots {
        for a in &snap.actors {
            add(a.state.position, 0.5 * a.state.length.hypot(a.state.width));
        }
    }
    if !lo.x.is_finite() {
        return (Vec2::ZERO, Vec2::ZERO);
    }
    (lo, hi)
}

fn points(t: &Affine, pts: impl IntoIterator<Item = Vec2>) -> String {
    let mut out = String::new();
    for (i, p) in pts.into_iter().enumerate() {
        let q = t.apply(p);
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{:.3},{:.3}", q.x, q.y);
    }
    out
}

fn fill(role: Role) -> &'static str {
    match role {
        Role::Mission => "#1f6fd1",
        Role::Lead => "#d18b1f",
        Role::Social => "#8a8a8a",
    }
}

/// Renders the whole log as one SVG document at `scale` units per meter.
pub fn render_svg(log: &TrajectoryLog, scale: f64) -> String {
    let (lo, hi) = bounds(log);
    let t = Affine {
        a: scale,
        b: 0.0,
        c: 0.0,
        d: -scale,
        e: MARGIN - scale * lo.x,
        f: MARGIN + scale * hi.y,
    };
    let w = scale * (hi.x - lo.x) + 2.0 * MARGIN;
    let h = scale * (hi.y - lo.y) + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}" data-world-to-svg="{} {} {} {} {} {}">"#,
        t.a, t.b, t.c, t.d, t.e, t.f
    );
    let _ = writeln!(s, "<title>{}</title>", escape(&log.header.scenario_id));
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);

    s.push_str("<g class=\"map\">\n");
    for lane in &log.header.map.lanes {
        let pts = lane.centerline.iter().map(|&[x, y]| Vec2::new(x, y));
        let mut d = String::from("M");
        d.push_str(&points(&t, pts).replace(' ', " L"));
        let _ = writeln!(
            s,
            r##"<path class="lane" data-lane="{}" d="{d}" fill="none" stroke="#d9d9d9" stroke-width="{:.3}"/>"##,
            escape(lane.id.as_str()),
            lane.width * scale
        );
    }
    s.push_str("</g>\n");

    s.push_str("<g class=\"trajectories\">\n");
    for m in &log.header.missions {
        let pts: Vec<Vec2> = log
            .snapshots
            .iter()
            .filter_map(|snap| snap.actor(&m.id).map(|a| a.state.position))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline class="trajectory" data-actor="{}" points="{}" fill="none" stroke="#e0301e" stroke-width="1.5"/>"##,
            escape(m.id.as_str()),
            points(&t, pts)
        );
        let g = t.apply(m.goal.position);
        let _ = writeln!(
            s,
            r##"<circle class="goal" data-actor="{}" cx="{:.3}" cy="{:.3}" r="{:.3}" fill="none" stroke="#2a9d3a"/>"##,
            escape(m.id.as_str()),
            g.x,
            g.y,
            m.goal.arrival_radius * scale
        );
    }
    s.push_str("</g>\n");

    // Each actor's footprint at the last snapshot it appears in.
    s.push_str("<g class=\"actors\">\n");
    let mut seen = std::collections::BTreeSet::new();
    for snap in log.snapshots.iter().rev() {
        for a in &snap.actors {
            if !seen.insert(a.id.clone()) {
                continue;
            }
            let st = &a.state;
            let rect = OrientedRect::new(st.position, st.heading, st.length, st.width);
            let _ = writeln!(
                s,
                r##"<polygon class="footprint" data-actor="{}" data-step="{}" points="{}" fill="{}" fill-opacity="0.8"/>"##,
                escape(a.id.as_str()),
                snap.step,
                points(&t, rect.corners()),
                fill(a.role)
            );
        }
    }
    s.push_str("</g>\n");

    s.push_str("<g class=\"events\">\n");
    for e in &log.events {
        let EventKind::Collision { other } = &e.kind else {
            continue;
        };
        let Some(a) = log.snapshot(e.step).and_then(|snap| snap.actor(&e.actor)) else {
            continue;
        };
        let q = t.apply(a.state.position);
        let _ = writeln!(
            s,
            r##"<circle class="collision" data-step="{}" data-actor="{}" data-other="{}" cx="{:.3}" cy="{:.3}" r="{:.3}" fill="none" stroke="#000000" stroke-width="2"/>"##,
            e.step,
            escape(e.actor.as_str()),
            escape(other.as_str()),
            q.x,
            q.y,
            2.0 * scale
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_round_trip() {
        let t = Affine {
            a: 4.0,
            b: 0.0,
            c: 0.0,
            d: -4.0,
            e: 12.0,
            f: 300.0,
        };
        let p = Vec2::new(-3.25, 17.5);
        let q = t.invert(t.apply(p));
        assert!((q - p).norm() < 1e-12);
        assert_eq!(Affine::parse("4 0 0 -4 12 300"), Some(t));
        assert_eq!(Affine::parse("4 0 0"), None);
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape(r#"a<b>&"c""#), "a&lt;b&gt;&amp;&quot;c&quot;");
    }
}
