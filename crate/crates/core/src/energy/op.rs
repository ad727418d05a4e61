use super::{psi_aniso, psi_iso_model, stress, EnergyOptions, Material, Mat3};
use crate::ad::{AdError, CustomOp, Tensor};

/// Tape op: per-point density from deformation gradients `[N, 9]` and
/// stiffness rows `[N, 4]`, producing `[N]`.
pub struct EnergyDensityOp {
    pub nu: f64,
    pub opts: EnergyOptions,
}

impl EnergyDensityOp {
    fn unit_lame(&self) -> (f64, f64, f64) {
        let nu = self.nu;
        (1.0 / (2.0 * (1.0 + nu)), nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), 1.0 / (2.0 * (1.0 + nu)))
    }

    fn material(&self, e: &[f64]) -> Material {
        let (mu, la, al) = self.unit_lame();
        Material { mu: mu * e[0], lambda: la * e[0], alpha: [al * e[1], al * e[2], al * e[3]] }
    }
}

fn as_mat(s: &[f64]) -> Mat3 {
    s.try_into().expect("9 entries")
}

impl CustomOp for EnergyDensityOp {
    fn name(&self) -> &'static str {
        "energy_density"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, AdError> {
        let (f, e) = (inputs[0], inputs[1]);
        let n = f.shape().first().copied().unwrap_or(0);
        if f.shape() != [n, 9] || e.shape() != [n, 4] {
            return Err(AdError::Shape {
                op: "energy_density",
                detail: format!("F {:?} and E {:?}, expected [N, 9] and [N, 4]", f.shape(), e.shape()),
            });
        }
        if !(0.0..0.5).contains(&self.nu) {
            return Err(AdError::Shape { op: "energy_density", detail: format!("Poisson ratio {}", self.nu) });
        }
        let out = (0..n)
            .map(|i| {
                let m = self.material(e.row(i));
                let fm = as_mat(f.row(i));
                psi_iso_model(&fm, m.mu, m.lambda, self.opts) + psi_aniso(&fm, &m.alpha)
            })
            .collect();
        Tensor::new(vec![n], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (f, e) = (inputs[0], inputs[1]);
        let n = f.shape()[0];
        let (mu1, la1, al1) = self.unit_lame();
        let mut gf = Vec::with_capacity(9 * n);
        let mut ge = Vec::with_capacity(4 * n);
        for i in 0..n {
            let g = grad.data()[i];
            let fm = as_mat(f.row(i));
            let p = stress(&fm, &self.material(e.row(i)), self.opts);
            gf.extend(p.iter().map(|v| g * v));
            // The density is linear in each stiffness channel.
            ge.push(g * psi_iso_model(&fm, mu1, la1, self.opts));
            for k in 0..3 {
                let mut a = [0.0; 3];
                a[k] = al1;
                ge.push(g * psi_aniso(&fm, &a));
            }
        }
        vec![Some(Tensor::from_parts(vec![n, 9], gf)), Some(Tensor::from_parts(vec![n, 4], ge))]
    }
}
