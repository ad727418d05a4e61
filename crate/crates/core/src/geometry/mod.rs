//! Rest geometry, observed trajectories, neighborhoods and point-set metrics.

mod grid;
pub mod io;
mod knn;
mod lsq;
mod metrics;
pub mod scene;

pub use grid::PointGrid;
pub use knn::{knn_brute_force, KnnIndex};
pub use lsq::{LsqGradient, LsqGradientOp};
pub use metrics::{chamfer_distance, chamfer_per_point, l2_trajectory_distance, ChamferOp};
pub use scene::{gen_scene, SceneKind, SceneParams};

use thiserror::Error;

use crate::ad::Tensor;

pub type Point = [f64; 3];

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Undeformed sample points with per-point quadrature volume and mass.
#[derive(Clone, Debug, PartialEq)]
pub struct RestGeometry {
    points: Vec<Point>,
    volume: Vec<f64>,
    mass: Vec<f64>,
    bbox_diagonal: f64,
}

impl RestGeometry {
    /// Uniform quadrature: every point gets `total_volume / N` and mass
    /// `density` times that volume.
    pub fn new(points: Vec<Point>, total_volume: f64, density: f64) -> Result<Self, GeometryError> {
        if !(total_volume > 0.0) || !(density > 0.0) {
            return Err(GeometryError::Invalid(format!(
                "total_volume ({total_volume}) and density ({density}) must be positive"
            )));
        }
        let n = points.len();
        let v = total_volume / n.max(1) as f64;
        Self::with_weights(points, vec![v; n], vec![v * density; n])
    }

    pub fn with_weights(points: Vec<Point>, volume: Vec<f64>, mass: Vec<f64>) -> Result<Self, GeometryError> {
        let n = points.len();
        if n < 4 {
            return Err(GeometryError::Invalid(format!("need at least 4 points, got {n}")));
        }
        if volume.len() != n || mass.len() != n {
            return Err(GeometryError::Invalid("volume/mass length differs from point count".into()));
        }
        if volume.iter().chain(&mass).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(GeometryError::Invalid("volumes and masses must be positive".into()));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(GeometryError::Invalid("non-finite rest coordinate".into()));
        }
        let (lo, hi) = bbox(&points);
        let diag = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt();
        if !(diag > 0.0) {
            return Err(GeometryError::Invalid("degenerate bounding box".into()));
        }
        Ok(RestGeometry { points, volume, mass, bbox_diagonal: diag })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volume
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn total_volume(&self) -> f64 {
        self.volume.iter().sum()
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bbox_diagonal
    }

    pub fn bbox(&self) -> (Point, Point) {
        bbox(&self.points)
    }

    pub fn center(&self) -> Point {
        let (lo, hi) = self.bbox();
        [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0]
    }

    pub fn points_tensor(&self) -> Tensor {
        points_to_tensor(&self.points)
    }
}

pub fn bbox(points: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

pub fn points_to_tensor(points: &[Point]) -> Tensor {
    Tensor::new(vec![points.len(), 3], points.iter().flatten().copied().collect()).expect("N×3")
}

pub fn tensor_to_points(t: &Tensor) -> Vec<Point> {
    t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub(crate) fn dist2(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// One observed motion sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Vec<Point>>,
    /// Point `i` of every frame corresponds to rest point `i`.
    pub tracked: bool,
}

impl Trajectory {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub trajectories: Vec<Trajectory>,
    pub dt: f64,
}

impl TrajectoryDataset {
    pub fn new(trajectories: Vec<Trajectory>, dt: f64, num_rest_points: usize) -> Result<Self, GeometryError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(GeometryError::Invalid(format!("dt must be positive, got {dt}")));
        }
        for (o, tr) in trajectories.iter().enumerate() {
            if tr.frames.len() < 2 {
                return Err(GeometryError::Invalid(format!("trajectory {o} has {} frames, need ≥ 2", tr.frames.len())));
            }
            for (t, f) in tr.frames.iter().enumerate() {
                if f.is_empty() {
                    return Err(GeometryError::Invalid(format!("trajectory {o} frame {t} is empty")));
                }
                if tr.tracked && f.len() != num_rest_points {
                    return Err(GeometryError::Invalid(format!(
                        "tracked trajectory {o} frame {t} has {} points, rest has {num_rest_points}",
                        f.len()
                    )));
                }
            }
        }
        Ok(TrajectoryDataset { trajectories, dt })
    }

    pub fn empty(dt: f64) -> Self {
        TrajectoryDataset { trajectories: Vec::new(), dt }
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    /// Frames in the first trajectory (0 when empty).
    pub fn num_frames(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.frames.len())
    }
}
