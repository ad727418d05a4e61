use crate::energy::Mat3;

/// Rotation of a raw (unnormalized) quaternion `(w, x, y, z)` together with
/// its partial derivatives with respect to the raw components, normalization
/// included.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    pub r: Mat3,
    pub dr: [Mat3; 4],
}

fn unit_rotation(q: &[f64; 4]) -> Mat3 {
    let [w, x, y, z] = *q;
    [
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ]
}

/// Partials of the unit-quaternion rotation formula in each component.
fn unit_partials(q: &[f64; 4]) -> [Mat3; 4] {
    let [w, x, y, z] = *q;
    let t = |v: f64| 2.0 * v;
    [
        [0.0, -t(z), t(y), t(z), 0.0, -t(x), -t(y), t(x), 0.0],
        [0.0, t(y), t(z), t(y), -2.0 * t(x), -t(w), t(z), t(w), -2.0 * t(x)],
        [-2.0 * t(y), t(x), t(w), t(x), 0.0, t(z), -t(w), t(z), -2.0 * t(y)],
        [-2.0 * t(z), -t(w), t(x), t(w), -2.0 * t(z), t(y), t(x), t(y), 0.0],
    ]
}

impl Rotation {
    /// `None` for a zero (or non-finite) quaternion.
    pub fn from_raw(q: &[f64]) -> Option<Self> {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        let r = unit_rotation(&u);
        let du = unit_partials(&u);
        let mut dr = [[0.0; 9]; 4];
        for (k, drk) in dr.iter_mut().enumerate() {
            for l in 0..4 {
                let proj = (if k == l { 1.0 } else { 0.0 } - u[l] * u[k]) / n;
                if proj == 0.0 {
                    continue;
                }
                for e in 0..9 {
                    drk[e] += du[l][e] * proj;
                }
            }
        }
        Some(Rotation { r, dr })
    }

    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let r = &self.r;
        [
            r[0] * p[0] + r[1] * p[1] + r[2] * p[2],
            r[3] * p[0] + r[4] * p[1] + r[5] * p[2],
            r[6] * p[0] + r[7] * p[1] + r[8] * p[2],
        ]
    }
}

/// `∂²R/∂q_k∂q_l` of the normalized rotation of a raw quaternion, indexed
/// `[k][l]`. `None` for a zero quaternion.
pub fn rotation_second_partials(q: &[f64]) -> Option<[[Mat3; 4]; 4]> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return None;
    }
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    // R is quadratic in u, so ∂²R/∂u_a∂u_b is constant.
    let basis: [[Mat3; 4]; 4] = std::array::from_fn(|b| {
        let mut e = [0.0; 4];
        e[b] = 1.0;
        unit_partials(&e)
    });
    let du = unit_partials(&u);
    let ju = |a: usize, k: usize| (delta(a, k) - u[a] * u[k]) / n;
    let mut out = [[[0.0; 9]; 4]; 4];
    for k in 0..4 {
        for l in 0..4 {
            let m = &mut out[k][l];
            for a in 0..4 {
                let jak = ju(a, k);
                for b in 0..4 {
                    let c = jak * ju(b, l);
                    if c != 0.0 {
                        for e in 0..9 {
                            m[e] += basis[b][a][e] * c;
                        }
                    }
                }
                let h = -(delta(a, k) * u[l] + delta(a, l) * u[k] + delta(k, l) * u[a] - 3.0 * u[a] * u[k] * u[l]) / (n * n);
                if h != 0.0 {
                    for e in 0..9 {
                        m[e] += du[a][e] * h;
                    }
                }
            }
        }
    }
    Some(out)
}

/// Unit quaternion for a rotation of `angle` about a unit `axis`.
pub fn quat_from_axis_angle(axis: [f64; 3], angle: f64) -> [f64; 4] {
    let (s, c) = (angle / 2.0).sin_cos();
    [c, axis[0] * s, axis[1] * s, axis[2] * s]
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}
