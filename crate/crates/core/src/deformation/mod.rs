//! Neural eigenmode weights, quaternion handle transforms, the blended
//! deformation map and its deformation gradient.

mod ops;
mod rigid;

pub use ops::{apply_deformation, deformation_gradient, handle_rotations, BlendOp, DeformGradOp};
pub use rigid::{quat_from_axis_angle, quat_mul, rotation_second_partials, Rotation};

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::ad::nn::Mlp;
use crate::ad::{AdError, ParamStore, Tape, Tensor, Var};
use crate::geometry::{Point, RestGeometry};

pub const EIGEN_PREFIX: &str = "eigen";
pub const TRANSFORM_KEY: &str = "T";

/// Per-point blend weights as a function of rest position.
///
/// Inputs are centered on the rest bounding box and scaled by half its
/// diagonal before entering the MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenmodeNet {
    mlp: Mlp,
    center: Point,
    scale: f64,
    num_handles: usize,
}

impl EigenmodeNet {
    pub const DEFAULT_WIDTH: usize = 64;
    pub const DEFAULT_LAYERS: usize = 6;

    pub fn new(num_handles: usize, width: usize, layers: usize, geom: &RestGeometry) -> Self {
        Self::with_frame(num_handles, width, layers, geom.center(), geom.bbox_diagonal() / 2.0)
    }

    pub fn with_frame(num_handles: usize, width: usize, layers: usize, center: Point, scale: f64) -> Self {
        assert!(num_handles > 0 && layers > 0, "need at least one handle and one layer");
        let mut sizes = vec![3];
        sizes.extend(std::iter::repeat(width).take(layers - 1));
        sizes.push(num_handles);
        EigenmodeNet { mlp: Mlp::new(EIGEN_PREFIX, sizes), center, scale, num_handles }
    }

    pub fn num_handles(&self) -> usize {
        self.num_handles
    }

    pub fn center(&self) -> Point {
        self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn width(&self) -> usize {
        self.mlp.sizes()[1.min(self.mlp.sizes().len() - 1)]
    }

    pub fn layers(&self) -> usize {
        self.mlp.num_layers()
    }

    /// Glorot weights; the output bias starts at `1/J` so the initial
    /// weights roughly sum to one.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.mlp.init(store, rng);
        let last = self.mlp.layer_name(self.mlp.num_layers() - 1);
        store
            .set(&format!("{last}.bias"), Tensor::full(&[self.num_handles], 1.0 / self.num_handles as f64))
            .expect("bias shape");
    }

    pub fn output_layer(&self) -> String {
        self.mlp.layer_name(self.mlp.num_layers() - 1)
    }

    pub fn input(&self, points: &[Point]) -> Tensor {
        let data = points
            .iter()
            .flat_map(|p| (0..3).map(move |k| (p[k] - self.center[k]) / self.scale))
            .collect::<Vec<_>>();
        Tensor::new(vec![points.len(), 3], data).expect("N×3")
    }

    /// Raw `[N, J]` weights on the tape.
    pub fn forward(&self, tape: &mut Tape, vars: &BTreeMap<String, Var>, input: Var) -> Result<Var, AdError> {
        self.mlp.forward(tape, vars, input)
    }

    /// Untaped evaluation at arbitrary points.
    pub fn eval(&self, store: &ParamStore, points: &[Point]) -> Result<Tensor, AdError> {
        let mut tape = Tape::untaped();
        let vars = store.bind(&mut tape);
        let x = tape.constant(self.input(points));
        let w = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(w).clone())
    }
}

/// Handle transforms for every trajectory and frame, stored as one
/// `[O·T·J, 7]` block of `(quaternion, translation)` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct HandleTransforms {
    pub num_trajectories: usize,
    pub num_frames: usize,
    pub num_handles: usize,
    pub data: Tensor,
}

impl HandleTransforms {
    pub fn identity(num_trajectories: usize, num_frames: usize, num_handles: usize) -> Self {
        let rows = num_trajectories * num_frames * num_handles;
        let mut d = vec![0.0; rows * 7];
        for r in 0..rows {
            d[7 * r] = 1.0;
        }
        HandleTransforms { num_trajectories, num_frames, num_handles, data: Tensor::from_parts(vec![rows, 7], d) }
    }

    /// Identity plus Gaussian jitter of standard deviation `sigma` on every
    /// component.
    pub fn jittered(num_trajectories: usize, num_frames: usize, num_handles: usize, sigma: f64, rng: &mut impl Rng) -> Self {
        let mut h = Self::identity(num_trajectories, num_frames, num_handles);
        if sigma > 0.0 {
            let dist = Normal::new(0.0, sigma).expect("positive sigma");
            for v in h.data.data_mut() {
                *v += dist.sample(rng);
            }
        }
        h
    }

    pub fn from_tensor(num_trajectories: usize, num_frames: usize, num_handles: usize, data: Tensor) -> Result<Self, AdError> {
        let rows = num_trajectories * num_frames * num_handles;
        if data.numel() != rows * 7 {
            return Err(AdError::Shape {
                op: "handle_transforms",
                detail: format!("{} values for {num_trajectories}×{num_frames}×{num_handles} handles", data.numel()),
            });
        }
        let data = data.reshape(&[rows, 7])?;
        Ok(HandleTransforms { num_trajectories, num_frames, num_handles, data })
    }

    pub fn first_row(&self, trajectory: usize, frame: usize) -> usize {
        (trajectory * self.num_frames + frame) * self.num_handles
    }

    /// Row indices of one frame's handles, for gathering on the tape.
    pub fn frame_rows(&self, trajectory: usize, frame: usize) -> Arc<Vec<usize>> {
        let s = self.first_row(trajectory, frame);
        Arc::new((s..s + self.num_handles).collect())
    }

    /// One frame's `[J, 7]` block.
    pub fn frame(&self, trajectory: usize, frame: usize) -> &[f64] {
        let s = 7 * self.first_row(trajectory, frame);
        &self.data.data()[s..s + 7 * self.num_handles]
    }

    /// The block as `[O, T, J, 7]`, the checkpoint layout.
    pub fn to_checkpoint_tensor(&self) -> Tensor {
        self.data
            .reshape(&[self.num_trajectories, self.num_frames, self.num_handles, 7])
            .expect("same element count")
    }
}

/// `(1/J²) Σ (⟨w_j, w_k⟩/N − δ_jk)²` on the tape.
pub fn ortho_loss(tape: &mut Tape, w: Var) -> Result<Var, AdError> {
    let shape = tape.shape(w).to_vec();
    if shape.len() != 2 {
        return Err(AdError::Shape { op: "ortho_loss", detail: format!("weights must be [N, J], got {shape:?}") });
    }
    let (n, nh) = (shape[0], shape[1]);
    let wt = tape.transpose(w)?;
    let gram = tape.matmul(wt, w)?;
    let gram = tape.scale(gram, 1.0 / n as f64)?;
    let eye = tape.constant(Tensor::eye(nh));
    let d = tape.sub(gram, eye)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

pub fn ortho_loss_value(w: &Tensor) -> Result<f64, AdError> {
    let mut tape = Tape::untaped();
    let v = tape.constant(w.clone());
    let l = ortho_loss(&mut tape, v)?;
    Ok(tape.value(l).item())
}
