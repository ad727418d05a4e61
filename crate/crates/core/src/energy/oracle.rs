//! Finite-difference references for the analytic derivatives, and the
//! golden-value file built from them.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{psi_total, stress, EnergyOptions, Material, Mat3};
use crate::ad::det3;

/// Central-difference gradient of the scalar density.
pub fn fd_stress(f: &Mat3, m: &Material, opts: EnergyOptions, h: f64) -> Mat3 {
    let mut p = [0.0; 9];
    for a in 0..9 {
        let (mut fp, mut fm) = (*f, *f);
        fp[a] += h;
        fm[a] -= h;
        p[a] = (psi_total(&fp, m, opts) - psi_total(&fm, m, opts)) / (2.0 * h);
    }
    p
}

/// Central-difference directional derivative of the analytic stress.
pub fn fd_stress_direction(f: &Mat3, dir: &Mat3, m: &Material, opts: EnergyOptions, h: f64) -> Mat3 {
    let mut fp = *f;
    let mut fm = *f;
    for a in 0..9 {
        fp[a] += h * dir[a];
        fm[a] -= h * dir[a];
    }
    let (sp, sm) = (stress(&fp, m, opts), stress(&fm, m, opts));
    let mut out = [0.0; 9];
    for a in 0..9 {
        out[a] = (sp[a] - sm[a]) / (2.0 * h);
    }
    out
}

/// A random deformation gradient near identity with `det F > min_det`.
pub fn random_gradient(rng: &mut impl Rng, spread: f64, min_det: f64) -> Mat3 {
    loop {
        let mut f = super::IDENTITY;
        for v in f.iter_mut() {
            *v += spread * rng.sample::<f64, _>(StandardNormal);
        }
        if det3(&f) > min_det {
            return f;
        }
    }
}

pub fn random_material(rng: &mut impl Rng) -> Material {
    Material {
        mu: rng.gen_range(0.1..2.0),
        lambda: rng.gen_range(0.1..2.0),
        alpha: [rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoldenRow {
    pub f: Mat3,
    pub material: Material,
    pub psi: f64,
    /// Finite-difference stress, not the analytic one.
    pub stress: Mat3,
}

pub const GOLDEN_HEADER: &str = "F00,F01,F02,F10,F11,F12,F20,F21,F22,mu,lambda,alpha1,alpha2,alpha3,psi,\
P00,P01,P02,P10,P11,P12,P20,P21,P22";

pub fn golden_rows(seed: u64, count: usize, opts: EnergyOptions) -> Vec<GoldenRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let f = random_gradient(&mut rng, 0.3, 0.3);
            let material = random_material(&mut rng);
            GoldenRow { f, material, psi: psi_total(&f, &material, opts), stress: fd_stress(&f, &material, opts, 1e-6) }
        })
        .collect()
}

pub fn golden_csv(rows: &[GoldenRow]) -> String {
    let mut s = String::from(GOLDEN_HEADER);
    s.push('\n');
    for r in rows {
        let m = &r.material;
        let vals: Vec<String> = r
            .f
            .iter()
            .chain([m.mu, m.lambda, m.alpha[0], m.alpha[1], m.alpha[2], r.psi].iter())
            .chain(r.stress.iter())
            .map(|v| v.to_string())
            .collect();
        writeln!(s, "{}", vals.join(",")).expect("string write");
    }
    s
}

pub fn parse_golden_csv(text: &str) -> Result<Vec<GoldenRow>, String> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", ln + 1))?;
        if v.len() != 24 {
            return Err(format!("line {}: expected 24 columns, found {}", ln + 1, v.len()));
        }
        rows.push(GoldenRow {
            f: v[0..9].try_into().expect("9"),
            material: Material { mu: v[9], lambda: v[10], alpha: [v[11], v[12], v[13]] },
            psi: v[14],
            stress: v[15..24].try_into().expect("9"),
        });
    }
    Ok(rows)
}

pub fn write_golden(path: &Path, seed: u64, count: usize) -> std::io::Result<()> {
    std::fs::write(path, golden_csv(&golden_rows(seed, count, EnergyOptions::default())))
}
