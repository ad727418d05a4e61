use nalgebra::{DMatrix, SMatrix, SymmetricEigen};
use serde::Serialize;

use crate::deformation::{handle_rotations, rotation_second_partials, Rotation};
use crate::energy::{hessian, psi_total, stress, EnergyOptions, Material};
use crate::geometry::Point;

/// Frozen per-point fields of a trained system: rest positions, quadrature,
/// blend weights, their spatial gradients and materials.
#[derive(Clone, Debug)]
pub struct ReducedModel {
    pub points: Vec<Point>,
    pub volume: Vec<f64>,
    pub mass: Vec<f64>,
    /// `[N·J]`.
    pub w: Vec<f64>,
    /// `[N·3J]`, axis fastest.
    pub g: Vec<f64>,
    pub materials: Vec<Material>,
    pub opts: EnergyOptions,
    pub num_handles: usize,
}

/// Per-step constant data entering the incremental potential.
#[derive(Clone, Debug, Default)]
pub struct StepTerms {
    /// Inertia target per point.
    pub target: Vec<Point>,
    /// Multiplies `m/2·‖x − x̃‖²`; `1/dt²` for implicit Euler.
    pub inertia: f64,
    pub gravity: Point,
    /// `(points, per-point force)`.
    pub forces: Vec<(Vec<usize>, Point)>,
    /// `(points, targets, κ)`.
    pub boundaries: Vec<(Vec<usize>, Vec<Point>, f64)>,
    /// `(height, unit normal, κ)`.
    pub floor: Option<(f64, Point, f64)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct IpParts {
    pub inertia: f64,
    pub elastic: f64,
    pub gravity: f64,
    pub external: f64,
    pub boundary: f64,
    pub floor: f64,
    pub total: f64,
}

pub struct IpEval {
    pub parts: IpParts,
    pub grad: Vec<f64>,
    /// Gauss-Newton Hessian with per-point elastic PSD projection, plus the
    /// curvature of the rotation parameterization. May be indefinite.
    pub hess: Option<DMatrix<f64>>,
    /// Exact Hessian of the potential (no per-point projection).
    pub hess_exact: Option<DMatrix<f64>>,
    /// Name of the first non-finite term, if any.
    pub non_finite: Option<&'static str>,
}

type M9 = SMatrix<f64, 9, 9>;

/// Clamps negative eigenvalues of a symmetric 9×9 block to zero.
pub fn project_psd(h: &[f64; 81]) -> [f64; 81] {
    let m = M9::from_row_slice(h);
    let m = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        let mut out = [0.0; 81];
        out.copy_from_slice(m.transpose().as_slice());
        return out;
    }
    let d = eig.eigenvalues.map(|l| l.max(0.0));
    let p = &eig.eigenvectors * M9::from_diagonal(&d) * eig.eigenvectors.transpose();
    let mut out = [0.0; 81];
    // Column-major storage of a symmetric matrix equals row-major.
    out.copy_from_slice(p.as_slice());
    out
}

impl ReducedModel {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dofs(&self) -> usize {
        7 * self.num_handles
    }

    /// Blended positions for handle parameters `z` (`[J·7]`).
    pub fn positions(&self, z: &[f64]) -> Option<Vec<Point>> {
        let rots = handle_rotations(z).ok()?;
        Some((0..self.len()).map(|i| self.position(i, z, &rots)).collect())
    }

    fn position(&self, i: usize, z: &[f64], rots: &[Rotation]) -> Point {
        let nh = self.num_handles;
        let p = &self.points[i];
        let mut x = [0.0; 3];
        for (j, rot) in rots.iter().enumerate() {
            let wij = self.w[i * nh + j];
            let rx = rot.apply(p);
            for a in 0..3 {
                x[a] += wij * (rx[a] + z[7 * j + 4 + a]);
            }
        }
        x
    }

    /// Evaluates the incremental potential, its gradient in `z` and
    /// optionally the Gauss-Newton Hessian.
    pub fn eval(&self, z: &[f64], terms: &StepTerms, with_hessian: bool) -> Option<IpEval> {
        let nh = self.num_handles;
        let d = self.dofs();
        let rots = handle_rotations(z).ok()?;
        let mut parts = IpParts::default();
        let mut grad = vec![0.0; d];
        let mut hess = with_hessian.then(|| DMatrix::<f64>::zeros(d, d));
        let mut exact = with_hessian.then(|| DMatrix::<f64>::zeros(d, d));
        let mut non_finite = None;

        // Per-point force on x (dIP/dx) and the scalar coefficient of its
        // isotropic GN Hessian, plus an optional rank-one floor part.
        let mut fx = vec![[0.0; 3]; self.len()];
        let mut kx = vec![0.0; self.len()];
        let mut floor_dir: Vec<Option<(Point, f64)>> = vec![None; self.len()];
        let xs: Vec<Point> = (0..self.len()).map(|i| self.position(i, z, &rots)).collect();

        for i in 0..self.len() {
            let m = self.mass[i];
            let x = &xs[i];
            let xt = &terms.target[i];
            let mut e_in = 0.0;
            let mut e_g = 0.0;
            for a in 0..3 {
                let dx = x[a] - xt[a];
                e_in += 0.5 * m * terms.inertia * dx * dx;
                fx[i][a] += m * terms.inertia * dx - m * terms.gravity[a];
                e_g -= m * terms.gravity[a] * x[a];
            }
            kx[i] += m * terms.inertia;
            parts.inertia += e_in;
            parts.gravity += e_g;
        }
        for (ix, f) in &terms.forces {
            for &i in ix {
                for a in 0..3 {
                    parts.external -= f[a] * xs[i][a];
                    fx[i][a] -= f[a];
                }
            }
        }
        for (ix, targets, kappa) in &terms.boundaries {
            for (&i, t) in ix.iter().zip(targets) {
                for a in 0..3 {
                    let dx = xs[i][a] - t[a];
                    parts.boundary += 0.5 * kappa * dx * dx;
                    fx[i][a] += kappa * dx;
                }
                kx[i] += kappa;
            }
        }
        if let Some((h, n, kappa)) = terms.floor {
            for i in 0..self.len() {
                let depth = h - (n[0] * xs[i][0] + n[1] * xs[i][1] + n[2] * xs[i][2]);
                if depth > 0.0 {
                    parts.floor += 0.5 * kappa * depth * depth;
                    for a in 0..3 {
                        fx[i][a] -= kappa * depth * n[a];
                    }
                    floor_dir[i] = Some((n, kappa));
                }
            }
        }
        for (name, v) in [
            ("inertia", parts.inertia),
            ("gravity", parts.gravity),
            ("external", parts.external),
            ("boundary", parts.boundary),
            ("floor", parts.floor),
        ] {
            if non_finite.is_none() && !v.is_finite() {
                non_finite = Some(name);
            }
        }

        // Per-handle 3×3 contractions of the first-order forces with the
        // rotation curvature: ∂²IP/∂q² picks up Σ ∂²R/∂q_k∂q_l : A_j.
        let mut curv = vec![[0.0; 9]; nh];
        let mut jx = vec![0.0; 3 * d];
        let mut jf = vec![0.0; 9 * d];
        let mut hj = vec![0.0; 9 * d];
        for i in 0..self.len() {
            let p = &self.points[i];
            jx.iter_mut().for_each(|v| *v = 0.0);
            jf.iter_mut().for_each(|v| *v = 0.0);
            let mut f = [0.0; 9];
            for (j, rot) in rots.iter().enumerate() {
                let wij = self.w[i * nh + j];
                let gij = &self.g[i * 3 * nh + 3 * j..i * 3 * nh + 3 * j + 3];
                let rx = rot.apply(p);
                let t = &z[7 * j + 4..7 * j + 7];
                for r in 0..3 {
                    for c in 0..3 {
                        f[r * 3 + c] += wij * rot.r[r * 3 + c] + (rx[r] + t[r]) * gij[c];
                    }
                }
                for k in 0..4 {
                    let dr = &rot.dr[k];
                    let col = 7 * j + k;
                    let drx = [
                        dr[0] * p[0] + dr[1] * p[1] + dr[2] * p[2],
                        dr[3] * p[0] + dr[4] * p[1] + dr[5] * p[2],
                        dr[6] * p[0] + dr[7] * p[1] + dr[8] * p[2],
                    ];
                    for r in 0..3 {
                        jx[r * d + col] = wij * drx[r];
                        for c in 0..3 {
                            jf[(r * 3 + c) * d + col] = wij * dr[r * 3 + c] + drx[r] * gij[c];
                        }
                    }
                }
                for a in 0..3 {
                    let col = 7 * j + 4 + a;
                    jx[a * d + col] = wij;
                    for c in 0..3 {
                        jf[(a * 3 + c) * d + col] = gij[c];
                    }
                }
            }

            // Point terms through the position Jacobian.
            for a in 0..3 {
                let fa = fx[i][a];
                if fa != 0.0 {
                    for col in 0..d {
                        grad[col] += fa * jx[a * d + col];
                    }
                }
            }
            if let (Some(hm), Some(he)) = (hess.as_mut(), exact.as_mut()) {
                let k = kx[i];
                for a in 0..3 {
                    let row = &jx[a * d..(a + 1) * d];
                    for r in 0..d {
                        if row[r] == 0.0 {
                            continue;
                        }
                        let s = k * row[r];
                        for c in 0..d {
                            hm[(r, c)] += s * row[c];
                            he[(r, c)] += s * row[c];
                        }
                    }
                }
                if let Some((n, kappa)) = floor_dir[i] {
                    let nj: Vec<f64> =
                        (0..d).map(|c| n[0] * jx[c] + n[1] * jx[d + c] + n[2] * jx[2 * d + c]).collect();
                    for r in 0..d {
                        for c in 0..d {
                            hm[(r, c)] += kappa * nj[r] * nj[c];
                            he[(r, c)] += kappa * nj[r] * nj[c];
                        }
                    }
                }
            }

            // Elastic term through the deformation-gradient Jacobian.
            let mat = &self.materials[i];
            let vol = self.volume[i];
            let psi = psi_total(&f, mat, self.opts);
            parts.elastic += vol * psi;
            let pk = stress(&f, mat, self.opts);
            for e in 0..9 {
                let s = vol * pk[e];
                if s != 0.0 {
                    for col in 0..d {
                        grad[col] += s * jf[e * d + col];
                    }
                }
            }
            if with_hessian {
                for j in 0..nh {
                    let wij = self.w[i * nh + j];
                    let gij = &self.g[i * 3 * nh + 3 * j..i * 3 * nh + 3 * j + 3];
                    let a = &mut curv[j];
                    for r in 0..3 {
                        let pg = pk[r * 3] * gij[0] + pk[r * 3 + 1] * gij[1] + pk[r * 3 + 2] * gij[2];
                        for c in 0..3 {
                            a[r * 3 + c] += wij * (vol * pk[r * 3 + c] + fx[i][r] * p[c]) + vol * p[c] * pg;
                        }
                    }
                }
            }
            if let (Some(hm), Some(he)) = (hess.as_mut(), exact.as_mut()) {
                // Point terms so far are shared; the elastic block differs.
                let raw = hessian(&f, mat, self.opts);
                let psd = project_psd(&raw);
                for (h, out) in [(&psd, &mut *hm), (&raw, &mut *he)] {
                    for e in 0..9 {
                        for col in 0..d {
                            hj[e * d + col] = (0..9).map(|b| h[e * 9 + b] * jf[b * d + col]).sum::<f64>() * vol;
                        }
                    }
                    for r in 0..d {
                        for c in 0..d {
                            let mut s = 0.0;
                            for e in 0..9 {
                                s += jf[e * d + r] * hj[e * d + c];
                            }
                            out[(r, c)] += s;
                        }
                    }
                }
            }
        }
        if let (Some(hm), Some(he)) = (hess.as_mut(), exact.as_mut()) {
            for (j, a) in curv.iter().enumerate() {
                let d2 = rotation_second_partials(&z[7 * j..7 * j + 4])?;
                for k in 0..4 {
                    for l in 0..4 {
                        let v = (0..9).map(|e| d2[k][l][e] * a[e]).sum::<f64>();
                        hm[(7 * j + k, 7 * j + l)] += v;
                        he[(7 * j + k, 7 * j + l)] += v;
                    }
                }
            }
        }
        if non_finite.is_none() && !parts.elastic.is_finite() {
            non_finite = Some("elastic");
        }
        parts.total = parts.inertia + parts.elastic + parts.gravity + parts.external + parts.boundary + parts.floor;
        if non_finite.is_none() && grad.iter().any(|v| !v.is_finite()) {
            non_finite = Some("gradient");
        }
        Some(IpEval { parts, grad, hess, hess_exact: exact, non_finite })
    }
}
