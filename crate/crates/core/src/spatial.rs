//! Uniform bucket grid for radius and nearest-neighbour queries.
//!
//! Buckets are laid out with a counting sort, so items inside a bucket keep
//! ascending index order and every query visits points in a fixed order.

use crate::geometry::Point2D;

#[derive(Debug, Clone)]
pub struct BucketGrid {
    min_x: f64,
    min_y: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    starts: Vec<u32>,
    items: Vec<u32>,
}

/// Upper bound on buckets per indexed point.
const MAX_BUCKETS_PER_POINT: usize = 4;

impl BucketGrid {
    /// `cell_size` is a hint; it is enlarged when it would create too many
    /// buckets for the number of points.
    pub fn new(points: &[Point2D], cell_size: f64) -> Self {
        let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        if points.is_empty() {
            (min_x, min_y, max_x, max_y) = (0.0, 0.0, 0.0, 0.0);
        }
        let width = (max_x - min_x).max(0.0);
        let height = (max_y - min_y).max(0.0);
        let budget = (points.len().max(1) * MAX_BUCKETS_PER_POINT) as f64;
        let mut cell = if cell_size.is_finite() && cell_size > 0.0 {
            cell_size
        } else {
            width.max(height).max(1.0)
        };
        let floor = ((width * height) / budget).sqrt();
        if cell < floor {
            cell = floor;
        }
        let nx = ((width / cell).floor() as usize + 1).max(1);
        let ny = ((height / cell).floor() as usize + 1).max(1);

        let bucket_of = |p: &Point2D| -> usize {
            let ix = (((p.x - min_x) / cell) as usize).min(nx - 1);
            let iy = (((p.y - min_y) / cell) as usize).min(ny - 1);
            iy * nx + ix
        };
        let mut counts = vec![0u32; nx * ny + 1];
        for p in points {
            counts[bucket_of(p) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0u32; points.len()];
        for (i, p) in points.iter().enumerate() {
            let b = bucket_of(p);
            items[fill[b] as usize] = i as u32;
            fill[b] += 1;
        }
        Self {
            min_x,
            min_y,
            cell,
            nx,
            ny,
            starts,
            items,
        }
    }

    fn clamp_ix(&self, x: f64) -> isize {
        ((x - self.min_x) / self.cell).floor() as isize
    }

    fn clamp_iy(&self, y: f64) -> isize {
        ((y - self.min_y) / self.cell).floor() as isize
    }

    fn bucket(&self, ix: usize, iy: usize) -> &[u32] {
        let b = iy * self.nx + ix;
        &self.items[self.starts[b] as usize..self.starts[b + 1] as usize]
    }

    /// Visits indices of all points in buckets overlapping the square
    /// `[p - r, p + r]²`. Callers filter by exact distance.
    pub fn for_each_candidate(&self, p: Point2D, r: f64, mut f: impl FnMut(usize)) {
        let x0 = self.clamp_ix(p.x - r).max(0);
        let x1 = self.clamp_ix(p.x + r).min(self.nx as isize - 1);
        let y0 = self.clamp_iy(p.y - r).max(0);
        let y1 = self.clamp_iy(p.y + r).min(self.ny as isize - 1);
        if x0 > x1 || y0 > y1 {
            return;
        }
        for iy in y0 as usize..=y1 as usize {
            for ix in x0 as usize..=x1 as usize {
                for &i in self.bucket(ix, iy) {
                    f(i as usize);
                }
            }
        }
    }

    /// Indices of points strictly closer than `r`, ascending.
    pub fn within(&self, points: &[Point2D], p: Point2D, r: f64) -> Vec<usize> {
        let r2 = r * r;
        let mut out = Vec::new();
        self.for_each_candidate(p, r, |i| {
            if points[i].distance_sq(&p) < r2 {
                out.push(i);
            }
        });
        out.sort_unstable();
        out
    }

    /// Nearest indexed point, ties broken by lower index.
    pub fn nearest(&self, points: &[Point2D], p: Point2D) -> Option<(usize, f64)> {
        self.nearest_filtered(points, p, |_| true)
    }

    /// Nearest indexed point satisfying `keep`.
    pub fn nearest_filtered(
        &self,
        points: &[Point2D],
        p: Point2D,
        mut keep: impl FnMut(usize) -> bool,
    ) -> Option<(usize, f64)> {
        if points.is_empty() {
            return None;
        }
        let cx = self.clamp_ix(p.x);
        let cy = self.clamp_iy(p.y);
        let mut best: Option<(usize, f64)> = None;
        let max_ring =
            self.nx.max(self.ny) as isize + cx.unsigned_abs() as isize + cy.unsigned_abs() as isize;
        for ring in 0..=max_ring {
            // Anything outside ring `ring` is at least `ring - 1` cells away.
            if let Some((_, d2)) = best {
                let reach = (ring - 1).max(0) as f64 * self.cell;
                if reach * reach > d2 {
                    break;
                }
            }
            for iy in (cy - ring)..=(cy + ring) {
                if iy < 0 || iy >= self.ny as isize {
                    continue;
                }
                let on_edge_row = iy == cy - ring || iy == cy + ring;
                let step = if on_edge_row { 1 } else { (2 * ring).max(1) };
                let mut ix = cx - ring;
                while ix <= cx + ring {
                    if ix >= 0 && ix < self.nx as isize {
                        for &i in self.bucket(ix as usize, iy as usize) {
                            let i = i as usize;
                            if !keep(i) {
                                continue;
                            }
                            let d2 = points[i].distance_sq(&p);
                            match best {
                                Some((bi, bd)) if d2 > bd || (d2 == bd && i > bi) => {}
                                _ => best = Some((i, d2)),
                            }
                        }
                    }
                    ix += step;
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }
}
