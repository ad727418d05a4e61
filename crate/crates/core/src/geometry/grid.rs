use super::{bbox, dist2, Point};

/// Uniform bucket grid for exact nearest-neighbor queries.
pub struct PointGrid<'a> {
    points: &'a [Point],
    lo: Point,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl<'a> PointGrid<'a> {
    pub fn new(points: &'a [Point]) -> Self {
        let (lo, hi) = bbox(points);
        let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let max_ext = ext.iter().cloned().fold(0.0, f64::max).max(1e-12);
        // About two points per cell for a volume-filling cloud.
        let vol: f64 = ext.iter().map(|e| e.max(max_ext * 1e-3)).product();
        let cell = ((2.0 * vol / points.len().max(1) as f64).cbrt()).max(max_ext / 256.0);
        let dims = [0, 1, 2].map(|k| ((ext[k] / cell).floor() as usize + 1).min(512));
        let ncell = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; ncell + 1];
        let mut grid = PointGrid { points, lo, cell, dims, starts: Vec::new(), items: Vec::new() };
        let keys: Vec<usize> = points.iter().map(|p| grid.key(grid.cell_of(p))).collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k]] = i;
            fill[k] += 1;
        }
        grid.starts = counts;
        grid.items = items;
        grid
    }

    fn cell_of(&self, p: &Point) -> [usize; 3] {
        [0, 1, 2].map(|k| {
            let c = ((p[k] - self.lo[k]) / self.cell).floor();
            if c < 0.0 {
                0
            } else {
                (c as usize).min(self.dims[k] - 1)
            }
        })
    }

    fn key(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    /// The `k` nearest points to `q` as `(index, squared distance)`, sorted
    /// by distance with ties broken by lower index. `exclude` skips one
    /// index (the query point itself for self-queries).
    pub fn knn(&self, q: &Point, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let available = self.points.len() - usize::from(exclude.is_some());
        let k = k.min(available);
        if k == 0 {
            return Vec::new();
        }
        let c = self.cell_of(q);
        let max_r = self.dims.iter().copied().max().unwrap_or(1);
        let mut cand: Vec<(usize, f64)> = Vec::new();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        for r in 0..=max_r {
            let ri = r as isize;
            for dx in -ri..=ri {
                for dy in -ri..=ri {
                    for dz in -ri..=ri {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ri {
                            continue;
                        }
                        let idx = [c[0] as isize + dx, c[1] as isize + dy, c[2] as isize + dz];
                        if (0..3).any(|a| idx[a] < 0 || idx[a] >= self.dims[a] as isize) {
                            continue;
                        }
                        let key = self.key([idx[0] as usize, idx[1] as usize, idx[2] as usize]);
                        for &i in &self.items[self.starts[key]..self.starts[key + 1]] {
                            if Some(i) != exclude {
                                cand.push((i, dist2(q, &self.points[i])));
                            }
                        }
                    }
                }
            }
            if cand.len() >= k {
                cand.select_nth_unstable_by(k - 1, cmp);
                cand.truncate(k);
                let bound = r as f64 * self.cell;
                if cand[k - 1].1 < bound * bound {
                    break;
                }
            }
        }
        cand.sort_by(cmp);
        cand
    }

    pub fn nearest(&self, q: &Point) -> (usize, f64) {
        self.knn(q, 1, None)[0]
    }
}
