use super::{dist2, GeometryError, Point, PointGrid};
use crate::ad::{AdError, CustomOp, Tensor};

fn one_sided(from: &[Point], to: &PointGrid) -> f64 {
    from.iter().map(|p| to.nearest(p).1).sum()
}

/// Sum of squared nearest-neighbor distances in both directions.
pub fn chamfer_distance(a: &[Point], b: &[Point]) -> Result<f64, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::Contract("chamfer distance of an empty set".into()));
    }
    Ok(one_sided(a, &PointGrid::new(b)) + one_sided(b, &PointGrid::new(a)))
}

/// Chamfer with each direction averaged over its source set, so the value
/// does not grow with the sample count.
pub fn chamfer_per_point(a: &[Point], b: &[Point]) -> Result<f64, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::Contract("chamfer distance of an empty set".into()));
    }
    Ok(one_sided(a, &PointGrid::new(b)) / a.len() as f64 + one_sided(b, &PointGrid::new(a)) / b.len() as f64)
}

/// Σ_t Σ_i ‖a_ti − b_ti‖² over corresponding points.
pub fn l2_trajectory_distance(a: &[Vec<Point>], b: &[Vec<Point>]) -> Result<f64, GeometryError> {
    if a.len() != b.len() {
        return Err(GeometryError::Contract(format!("frame counts differ: {} vs {}", a.len(), b.len())));
    }
    let mut s = 0.0;
    for (t, (fa, fb)) in a.iter().zip(b).enumerate() {
        if fa.len() != fb.len() {
            return Err(GeometryError::Contract(format!("frame {t}: {} vs {} points", fa.len(), fb.len())));
        }
        s += fa.iter().zip(fb).map(|(p, q)| dist2(p, q)).sum::<f64>();
    }
    Ok(s)
}

/// Tape op: Chamfer distance between a predicted `[N, 3]` point set and a
/// fixed target set.
pub struct ChamferOp {
    target: Vec<Point>,
}

impl ChamferOp {
    pub fn new(target: Vec<Point>) -> Result<Self, GeometryError> {
        if target.is_empty() {
            return Err(GeometryError::Contract("chamfer target is empty".into()));
        }
        Ok(ChamferOp { target })
    }
}

fn as_points(t: &Tensor) -> Vec<Point> {
    super::tensor_to_points(t)
}

impl CustomOp for ChamferOp {
    fn name(&self) -> &'static str {
        "chamfer"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, AdError> {
        let x = inputs[0];
        if x.rank() != 2 || x.shape()[1] != 3 || x.shape()[0] == 0 {
            return Err(AdError::Shape { op: "chamfer", detail: format!("expected [N, 3], got {:?}", x.shape()) });
        }
        let pred = as_points(x);
        let d = chamfer_distance(&pred, &self.target).expect("both sets nonempty");
        Ok(Tensor::scalar(d))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let pred = as_points(inputs[0]);
        let s = grad.item();
        let mut g = vec![0.0; pred.len() * 3];
        let tgrid = PointGrid::new(&self.target);
        for (i, p) in pred.iter().enumerate() {
            let q = self.target[tgrid.nearest(p).0];
            for a in 0..3 {
                g[3 * i + a] += 2.0 * s * (p[a] - q[a]);
            }
        }
        let pgrid = PointGrid::new(&pred);
        for q in &self.target {
            let i = pgrid.nearest(q).0;
            for a in 0..3 {
                g[3 * i + a] += 2.0 * s * (pred[i][a] - q[a]);
            }
        }
        vec![Some(Tensor::from_parts(vec![pred.len(), 3], g))]
    }
}
