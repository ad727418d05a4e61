//! Scripted synthetic scenes with analytic ground-truth motion.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Point, RestGeometry, Trajectory, TrajectoryDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    TwoCubeHinge,
    TwoCubeSplit,
    RopeFixedEnd,
    MultibodyDrop,
    SoftNone,
}

impl SceneKind {
    pub const ALL: [SceneKind; 5] = [
        SceneKind::TwoCubeHinge,
        SceneKind::TwoCubeSplit,
        SceneKind::RopeFixedEnd,
        SceneKind::MultibodyDrop,
        SceneKind::SoftNone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SceneKind::TwoCubeHinge => "two_cube_hinge",
            SceneKind::TwoCubeSplit => "two_cube_split",
            SceneKind::RopeFixedEnd => "rope_fixed_end",
            SceneKind::MultibodyDrop => "multibody_drop",
            SceneKind::SoftNone => "soft_none",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneKind {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SceneKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = SceneKind::ALL.iter().map(|k| k.as_str()).collect();
            GeometryError::Contract(format!("unknown scene kind '{s}', expected one of: {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub num_points: usize,
    pub num_frames: usize,
    pub dt: f64,
    /// Final hinge angle (rad), split travel distance, rope swing amplitude
    /// (rad) or lateral drop spread velocity, depending on the kind.
    pub magnitude: f64,
    pub gravity: f64,
    pub clusters: usize,
    pub density: f64,
    /// Shuffle each frame's point order so correspondence is lost.
    pub untracked: bool,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            num_points: 2000,
            num_frames: 40,
            dt: 0.04,
            magnitude: 0.5,
            gravity: 9.81,
            clusters: 3,
            density: 1.0,
            untracked: false,
            seed: 0,
        }
    }
}

pub const ROPE_SEGMENTS: usize = 8;
pub const ROPE_SEGMENT_LENGTH: f64 = 0.25;
pub const ROPE_WIDTH: f64 = 0.08;
const CLUSTER_SIZE: f64 = 0.5;
const CLUSTER_SPACING: f64 = 1.0;

fn uniform_box(rng: &mut ChaCha8Rng, lo: Point, hi: Point) -> Point {
    [0, 1, 2].map(|k| lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>())
}

/// Rotation about +z through the origin.
fn rot_z(p: &Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

/// Rotation about +y.
fn rot_y(p: &Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]]
}

/// Two-cube rest layout: the first half of the points fill the bottom cube
/// `[-1, 0]³`, the rest fill the top cube `[0, 1]³`; the cubes touch at the
/// origin.
fn two_cubes(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let bottom = n / 2;
    (0..n)
        .map(|i| if i < bottom { uniform_box(rng, [-1.0; 3], [0.0; 3]) } else { uniform_box(rng, [0.0; 3], [1.0; 3]) })
        .collect()
}

/// 1 for top-cube points, 0 for bottom-cube points.
pub fn cube_labels(points: &[Point]) -> Vec<usize> {
    points.iter().map(|p| usize::from(p[0] + p[1] + p[2] > 0.0)).collect()
}

/// Two-cube configuration with the top cube rotated by `angle` about the z
/// axis through the shared corner.
pub fn hinge_pose(rest: &[Point], angle: f64) -> Vec<Point> {
    let top = cube_labels(rest);
    rest.iter().zip(top).map(|(p, t)| if t == 1 { rot_z(p, angle) } else { *p }).collect()
}

/// Rope segment index of a rest point (segment 0 hangs from the origin).
pub fn rope_segment(p: &Point) -> usize {
    ((-p[2] / ROPE_SEGMENT_LENGTH).floor().max(0.0) as usize).min(ROPE_SEGMENTS - 1)
}

/// Relative joint angles at normalized time `s ∈ [0, 1]`.
fn rope_angles(amplitude: f64, s: f64) -> [f64; ROPE_SEGMENTS] {
    let w = 2.0 * std::f64::consts::PI * s;
    let mut a = [0.0; ROPE_SEGMENTS];
    for (k, ak) in a.iter_mut().enumerate() {
        let c1 = 1.0 - 0.08 * k as f64;
        let c2 = if k % 2 == 0 { 0.5 } else { -0.5 };
        *ak = amplitude * ((w).sin() * c1 + (2.0 * w).sin() * c2);
    }
    a
}

/// Rope posed by relative joint angles about y, pinned at the origin.
pub fn rope_pose(rest: &[Point], relative: &[f64; ROPE_SEGMENTS]) -> Vec<Point> {
    let mut joints = [[0.0; 3]; ROPE_SEGMENTS];
    let mut abs = [0.0; ROPE_SEGMENTS];
    let mut acc = 0.0;
    for k in 0..ROPE_SEGMENTS {
        acc += relative[k];
        abs[k] = acc;
        if k + 1 < ROPE_SEGMENTS {
            let d = rot_y(&[0.0, 0.0, -ROPE_SEGMENT_LENGTH], acc);
            joints[k + 1] = [joints[k][0] + d[0], joints[k][1] + d[1], joints[k][2] + d[2]];
        }
    }
    rest.iter()
        .map(|p| {
            let k = rope_segment(p);
            let local = [p[0], p[1], p[2] + ROPE_SEGMENT_LENGTH * k as f64];
            let r = rot_y(&local, abs[k]);
            [joints[k][0] + r[0], joints[k][1] + r[1], joints[k][2] + r[2]]
        })
        .collect()
}

/// Cluster index of a multibody rest point.
pub fn drop_cluster(p: &Point, clusters: usize) -> usize {
    ((p[0] / CLUSTER_SPACING).floor().max(0.0) as usize).min(clusters.max(1) - 1)
}

/// Part labels used by the scripted motion (cube, segment or cluster).
pub fn part_labels(kind: SceneKind, params: &SceneParams, points: &[Point]) -> Vec<usize> {
    match kind {
        SceneKind::TwoCubeHinge | SceneKind::TwoCubeSplit => cube_labels(points),
        SceneKind::RopeFixedEnd => points.iter().map(rope_segment).collect(),
        SceneKind::MultibodyDrop => points.iter().map(|p| drop_cluster(p, params.clusters)).collect(),
        SceneKind::SoftNone => vec![0; points.len()],
    }
}

pub fn gen_scene(kind: SceneKind, params: &SceneParams) -> Result<(RestGeometry, TrajectoryDataset), GeometryError> {
    let p = params;
    if p.num_points < 8 {
        return Err(GeometryError::Invalid(format!("need at least 8 points, got {}", p.num_points)));
    }
    if kind != SceneKind::SoftNone && p.num_frames < 2 {
        return Err(GeometryError::Invalid(format!("need at least 2 frames, got {}", p.num_frames)));
    }
    if kind == SceneKind::MultibodyDrop && p.clusters == 0 {
        return Err(GeometryError::Invalid("multibody_drop needs at least one cluster".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.num_points;
    let last = (p.num_frames.max(2) - 1) as f64;
    let (rest, volume) = match kind {
        SceneKind::TwoCubeHinge | SceneKind::TwoCubeSplit => (two_cubes(n, &mut rng), 2.0),
        SceneKind::RopeFixedEnd => {
            let len = ROPE_SEGMENT_LENGTH * ROPE_SEGMENTS as f64;
            let h = ROPE_WIDTH / 2.0;
            // Stratified along the length so every segment gets points.
            let pts = (0..n)
                .map(|i| {
                    let s = (i as f64 + rng.gen::<f64>()) / n as f64;
                    [h * (2.0 * rng.gen::<f64>() - 1.0), h * (2.0 * rng.gen::<f64>() - 1.0), -s * len]
                })
                .collect();
            (pts, len * ROPE_WIDTH * ROPE_WIDTH)
        }
        SceneKind::MultibodyDrop => {
            let k = p.clusters;
            let pts = (0..n)
                .map(|i| {
                    let c = (i * k / n) as f64 * CLUSTER_SPACING;
                    uniform_box(&mut rng, [c, 0.0, 0.0], [c + CLUSTER_SIZE, CLUSTER_SIZE, CLUSTER_SIZE])
                })
                .collect();
            (pts, k as f64 * CLUSTER_SIZE.powi(3))
        }
        SceneKind::SoftNone => ((0..n).map(|_| uniform_box(&mut rng, [-0.5; 3], [0.5; 3])).collect(), 1.0),
    };
    let frame = |t: usize| -> Vec<Point> {
        let s = t as f64 / last;
        match kind {
            SceneKind::TwoCubeHinge => hinge_pose(&rest, p.magnitude * s),
            SceneKind::TwoCubeSplit => {
                let v = p.magnitude / 3f64.sqrt() / last;
                let top = cube_labels(&rest);
                rest.iter()
                    .zip(top)
                    .map(|(x, l)| {
                        if l == 1 {
                            let d = t as f64 * v;
                            [x[0] + d, x[1] + d, x[2] + d]
                        } else {
                            *x
                        }
                    })
                    .collect()
            }
            SceneKind::RopeFixedEnd => rope_pose(&rest, &rope_angles(p.magnitude, s)),
            SceneKind::MultibodyDrop => {
                let time = t as f64 * p.dt;
                let fall = 0.5 * p.gravity * time * time;
                let mid = (p.clusters as f64 - 1.0) / 2.0;
                rest.iter()
                    .map(|x| {
                        let c = drop_cluster(x, p.clusters) as f64;
                        [x[0] + p.magnitude * (c - mid) * time, x[1], x[2] - fall]
                    })
                    .collect()
            }
            SceneKind::SoftNone => unreachable!(),
        }
    };
    let geom = RestGeometry::new(rest.clone(), volume, p.density)?;
    if kind == SceneKind::SoftNone {
        return Ok((geom, TrajectoryDataset::empty(p.dt)));
    }
    let mut frames: Vec<Vec<Point>> = (0..p.num_frames).map(frame).collect();
    if p.untracked {
        for f in frames.iter_mut() {
            f.shuffle(&mut rng);
        }
    }
    let data = TrajectoryDataset::new(vec![Trajectory { frames, tracked: !p.untracked }], p.dt, n)?;
    Ok((geom, data))
}
