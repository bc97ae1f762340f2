//! Uniform cell grid for fixed-radius neighbor queries.

use crate::geometry::Vec2;

/// Bucket grid rebuilt from scratch each step with a counting sort.
#[derive(Debug, Clone, Default)]
pub struct CellGrid {
    cell: f64,
    origin: Vec2,
    nx: usize,
    ny: usize,
    starts: Vec<usize>,
    items: Vec<usize>,
    cell_of: Vec<usize>,
}

const MAX_CELLS_PER_ITEM: usize = 4;

impl CellGrid {
    pub fn new() -> Self {
        Self::default()
    }

    /// Buckets the points `(index, position)` into cells of side at least
    /// `cutoff`, so every pair closer than `cutoff` lies in adjacent cells.
    pub fn rebuild<I>(&mut self, cutoff: f64, points: I)
    where
        I: IntoIterator<Item = (usize, Vec2)>,
    {
        let pts: Vec<(usize, Vec2)> = points.into_iter().collect();
        self.items.clear();
        self.cell_of.clear();
        if pts.is_empty() {
            self.nx = 0;
            self.ny = 0;
            self.starts.clear();
            return;
        }
        let (mut lo, mut hi) = (pts[0].1, pts[0].1);
        for &(_, p) in &pts {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        let mut cell = cutoff.max(f64::MIN_POSITIVE);
        let max_cells = (MAX_CELLS_PER_ITEM * pts.len()).max(16);
        let dims = |c: f64| {
            (
                ((hi.x - lo.x) / c).floor() as usize + 1,
                ((hi.y - lo.y) / c).floor() as usize + 1,
            )
        };
        let (mut nx, mut ny) = dims(cell);
        while nx.saturating_mul(ny) > max_cells {
            cell *= 2.0;
            (nx, ny) = dims(cell);
        }
        self.cell = cell;
        self.origin = lo;
        self.nx = nx;
        self.ny = ny;

        let ncell = nx * ny;
        self.starts.clear();
        self.starts.resize(ncell + 1, 0);
        for &(_, p) in &pts {
            let c = self.cell_index(p);
            self.cell_of.push(c);
            self.starts[c + 1] += 1;
        }
        for c in 0..ncell {
            self.starts[c + 1] += self.starts[c];
        }
        let mut fill = self.starts.clone();
        self.items.resize(pts.len(), 0);
        for (k, &(idx, _)) in pts.iter().enumerate() {
            let c = self.cell_of[k];
            self.items[fill[c]] = idx;
            fill[c] += 1;
        }
    }

    fn coords(&self, p: Vec2) -> (usize, usize) {
        let cx = (((p.x - self.origin.x) / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let cy = (((p.y - self.origin.y) / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        (cx, cy)
    }

    fn cell_index(&self, p: Vec2) -> usize {
        let (cx, cy) = self.coords(p);
        cy * self.nx + cx
    }

    /// Calls `f` with every indexed point in the 3×3 block of cells around
    /// `p`. This is a superset of the points within `cutoff` of `p`.
    pub fn for_each_near<F: FnMut(usize)>(&self, p: Vec2, mut f: F) {
        if self.nx == 0 {
            return;
        }
        let gx = (p.x - self.origin.x) / self.cell;
        let gy = (p.y - self.origin.y) / self.cell;
        // queries far outside the indexed box cannot have neighbors
        if gx < -1.0 || gy < -1.0 || gx >= (self.nx + 1) as f64 || gy >= (self.ny + 1) as f64 {
            return;
        }
        let cx = gx.floor() as i64;
        let cy = gy.floor() as i64;
        for y in (cy - 1).max(0)..=(cy + 1).min(self.ny as i64 - 1) {
            let row = y as usize * self.nx;
            for x in (cx - 1).max(0)..=(cx + 1).min(self.nx as i64 - 1) {
                let c = row + x as usize;
                for &i in &self.items[self.starts[c]..self.starts[c + 1]] {
                    f(i);
                }
            }
        }
    }
}
