use super::{dist2, GeometryError, PointGrid, RestGeometry};

/// K nearest rest neighbors of every rest point, excluding the point itself.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnIndex {
    k: usize,
    neighbors: Vec<usize>,
    dist2: Vec<f64>,
}

impl KnnIndex {
    /// Exact Euclidean kNN; ties go to the lower point index.
    pub fn build(geom: &RestGeometry, k: usize) -> Result<Self, GeometryError> {
        let n = geom.len();
        if k == 0 || k >= n {
            return Err(GeometryError::Contract(format!("knn needs 0 < K < N, got K={k}, N={n}")));
        }
        let grid = PointGrid::new(geom.points());
        let mut neighbors = Vec::with_capacity(n * k);
        let mut d2 = Vec::with_capacity(n * k);
        for (i, p) in geom.points().iter().enumerate() {
            for (j, d) in grid.knn(p, k, Some(i)) {
                neighbors.push(j);
                d2.push(d);
            }
        }
        Ok(KnnIndex { k, neighbors, dist2: d2 })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.neighbors.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn distances_sq(&self, i: usize) -> &[f64] {
        &self.dist2[i * self.k..(i + 1) * self.k]
    }

    /// Flat `N·K` neighbor table.
    pub fn table(&self) -> &[usize] {
        &self.neighbors
    }

    /// Same index with point order permuted: new point `i` is old point
    /// `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut neighbors = Vec::with_capacity(self.neighbors.len());
        let mut d2 = Vec::with_capacity(self.dist2.len());
        for &old in perm {
            neighbors.extend(self.neighbors(old).iter().map(|&j| inv[j]));
            d2.extend_from_slice(self.distances_sq(old));
        }
        KnnIndex { k: self.k, neighbors, dist2: d2 }
    }
}

/// Exhaustive O(N²) reference used to validate the grid search.
pub fn knn_brute_force(geom: &RestGeometry, k: usize) -> Vec<Vec<usize>> {
    let pts = geom.points();
    (0..pts.len())
        .map(|i| {
            let mut all: Vec<(usize, f64)> =
                (0..pts.len()).filter(|&j| j != i).map(|j| (j, dist2(&pts[i], &pts[j]))).collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            all.into_iter().take(k).map(|(j, _)| j).collect()
        })
        .collect()
}
