use crate::geom::Vec2;

/// Uniform grid over the map bounds; each cell lists the lanes whose swept
/// surface may touch it.
#[derive(Debug, Clone)]
pub(crate) struct LaneGrid {
    origin: Vec2,
    cell: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<usize>>,
}

impl LaneGrid {
    pub(crate) const CELL_SIZE: f64 = 25.0;

    /// `segments` yields `(lane index, a, b, half width)`.
    pub(crate) fn build(segments: &[(usize, Vec2, Vec2, f64)]) -> Self {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(_, a, b, hw) in segments {
            lo.x = lo.x.min(a.x.min(b.x) - hw);
            lo.y = lo.y.min(a.y.min(b.y) - hw);
            hi.x = hi.x.max(a.x.max(b.x) + hw);
            hi.y = hi.y.max(a.y.max(b.y) + hw);
        }
        let cell = Self::CELL_SIZE;
        let cols = (((hi.x - lo.x) / cell).floor() as usize + 1).max(1);
        let rows = (((hi.y - lo.y) / cell).floor() as usize + 1).max(1);
        let mut grid = Self {
            origin: lo,
            cell,
            cols,
            rows,
            cells: vec![Vec::new(); cols * rows],
        };
        for &(lane, a, b, hw) in segments {
            let (c0, r0) = grid.cell_of_clamped(Vec2::new(a.x.min(b.x) - hw, a.y.min(b.y) - hw));
            let (c1, r1) = grid.cell_of_clamped(Vec2::new(a.x.max(b.x) + hw, a.y.max(b.y) + hw));
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let bucket = &mut grid.cells[r * cols + c];
                    if bucket.last() != Some(&lane) && !bucket.contains(&lane) {
                        bucket.push(lane);
                    }
                }
            }
        }
        for bucket in &mut grid.cells {
            bucket.sort_unstable();
        }
        grid
    }

    fn cell_coords(&self, p: Vec2) -> (i64, i64) {
        (
            ((p.x - self.origin.x) / self.cell).floor() as i64,
            ((p.y - self.origin.y) / self.cell).floor() as i64,
        )
    }

    fn cell_of_clamped(&self, p: Vec2) -> (usize, usize) {
        let (c, r) = self.cell_coords(p);
        (
            c.clamp(0, self.cols as i64 - 1) as usize,
            r.clamp(0, self.rows as i64 - 1) as usize,
        )
    }

    /// Lanes registered in the cell containing `p`; empty outside the grid.
    pub(crate) fn lanes_at(&self, p: Vec2) -> &[usize] {
        let (c, r) = self.cell_coords(p);
        if c < 0 || r < 0 || c >= self.cols as i64 || r >= self.rows as i64 {
            return &[];
        }
        &self.cells[r as usize * self.cols + c as usize]
    }

    /// Visits lanes ring by ring around `p`. `visit` receives the lanes of one
    /// ring plus the guaranteed lower bound on the distance from `p` to any
    /// lane not yet visited; it returns `true` to stop.
    pub(crate) fn search_rings(&self, p: Vec2, mut visit: impl FnMut(&[usize], f64) -> bool) {
        let (pc, pr) = self.cell_coords(p);
        // Distance from p to the nearest edge of its own cell bounds the
        // distance to everything outside the visited block.
        let fx = (p.x - self.origin.x) / self.cell - pc as f64;
        let fy = (p.y - self.origin.y) / self.cell - pr as f64;
        let inner = fx.min(1.0 - fx).min(fy).min(1.0 - fy).max(0.0) * self.cell;
        let span = self.cols.max(self.rows) as i64;
        let reach = span + pc.abs().max(pr.abs());
        let mut ring_lanes = Vec::new();
        for ring in 0..=reach {
            ring_lanes.clear();
            let rows = (pr - ring).max(0)..=(pr + ring).min(self.rows as i64 - 1);
            for r in rows {
                let cols = (pc - ring).max(0)..=(pc + ring).min(self.cols as i64 - 1);
                for c in cols {
                    if (r - pr).abs() != ring && (c - pc).abs() != ring {
                        continue;
                    }
                    ring_lanes.extend_from_slice(&self.cells[r as usize * self.cols + c as usize]);
                }
            }
            let bound = if ring >= reach {
                f64::INFINITY
            } else {
                ring as f64 * self.cell + inner
            };
            if visit(&ring_lanes, bound) {
                return;
            }
        }
    }
}
