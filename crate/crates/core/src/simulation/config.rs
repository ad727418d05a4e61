use serde::{Deserialize, Serialize};

use crate::geometry::Point;

/// Which rest points a force or penalty acts on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointSelector {
    All,
    Indices(Vec<usize>),
    /// Points whose rest position lies inside the closed box.
    Box { min: Point, max: Point },
}

impl PointSelector {
    pub fn resolve(&self, rest: &[Point]) -> Result<Vec<usize>, String> {
        match self {
            PointSelector::All => Ok((0..rest.len()).collect()),
            PointSelector::Indices(ix) => {
                if let Some(bad) = ix.iter().find(|&&i| i >= rest.len()) {
                    return Err(format!("index {bad} out of range for {} points", rest.len()));
                }
                let mut ix = ix.clone();
                ix.sort_unstable();
                ix.dedup();
                Ok(ix)
            }
            PointSelector::Box { min, max } => Ok(rest
                .iter()
                .enumerate()
                .filter(|(_, p)| (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]))
                .map(|(i, _)| i)
                .collect()),
        }
    }
}

/// Constant per-point force applied while the new state's time lies in
/// `[start, end)` (seconds; open-ended when absent).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalForce {
    pub points: PointSelector,
    pub force: Point,
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub end: Option<f64>,
}

impl ExternalForce {
    pub fn active_at(&self, time: f64) -> bool {
        self.start.map_or(true, |s| time >= s) && self.end.map_or(true, |e| time < e)
    }
}

/// Quadratic tether of the selected points to targets. Targets default to
/// the initial positions shifted by `offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryPenalty {
    pub points: PointSelector,
    pub stiffness: f64,
    #[serde(default)]
    pub offset: Point,
    #[serde(default)]
    pub targets: Option<Vec<Point>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FloorConfig {
    pub enabled: bool,
    pub height: f64,
    pub normal: Point,
    pub stiffness: f64,
}

impl Default for FloorConfig {
    fn default() -> Self {
        FloorConfig { enabled: false, height: 0.0, normal: [0.0, 0.0, 1.0], stiffness: 1e4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { max_iters: 25, tol: 1e-6, backtrack: 0.5, max_backtracks: 20 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    ImplicitEuler,
    /// Average-acceleration Newmark (β = 1/4, γ = 1/2); exact for constant
    /// acceleration.
    Newmark,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialState {
    /// `[J·7]` handle parameters; identity when absent.
    pub transforms: Option<Vec<f64>>,
    pub velocity: Point,
    /// Replace the start by an elastic equilibrium found by a static solve
    /// from it. Trained weights do not sum to one, so a trained rest pose is
    /// slightly pre-stressed and drifts without this.
    pub relax: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    /// Frames in the output, the initial state included.
    pub num_frames: usize,
    pub gravity: Point,
    pub forces: Vec<ExternalForce>,
    pub boundaries: Vec<BoundaryPenalty>,
    pub floor: FloorConfig,
    pub newton: NewtonConfig,
    pub damping: f64,
    pub integrator: Integrator,
    /// Overrides the energy model stored with the trained system.
    pub corrected_neohookean: Option<bool>,
    pub initial: InitialState,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.04,
            num_frames: 40,
            gravity: [0.0, 0.0, -9.81],
            forces: Vec::new(),
            boundaries: Vec::new(),
            floor: FloorConfig::default(),
            newton: NewtonConfig::default(),
            damping: 0.0,
            integrator: Integrator::ImplicitEuler,
            corrected_neohookean: None,
            initial: InitialState::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), (String, String)> {
        let err = |f: &str, m: &str| Err((f.to_string(), m.to_string()));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return err("dt", "must be positive");
        }
        if self.num_frames == 0 {
            return err("num_frames", "must be at least 1");
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return err("gravity", "must be finite");
        }
        for (i, b) in self.boundaries.iter().enumerate() {
            if !(b.stiffness >= 0.0) {
                return err(&format!("boundaries[{i}].stiffness"), "must be non-negative");
            }
        }
        for (i, f) in self.forces.iter().enumerate() {
            if f.force.iter().any(|v| !v.is_finite()) {
                return err(&format!("forces[{i}].force"), "must be finite");
            }
        }
        if !(self.floor.stiffness >= 0.0) {
            return err("floor.stiffness", "must be non-negative");
        }
        let n = self.floor.normal;
        if self.floor.enabled && !((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]) > 0.0) {
            return err("floor.normal", "must be non-zero");
        }
        if !(self.newton.tol > 0.0) {
            return err("newton.tol", "must be positive");
        }
        if self.newton.max_iters == 0 {
            return err("newton.max_iters", "must be at least 1");
        }
        if !(self.newton.backtrack > 0.0 && self.newton.backtrack < 1.0) {
            return err("newton.backtrack", "must lie in (0, 1)");
        }
        if !(self.damping >= 0.0) || self.damping * self.dt > 1.0 {
            return err("damping", "must satisfy 0 ≤ damping·dt ≤ 1");
        }
        Ok(())
    }
}
