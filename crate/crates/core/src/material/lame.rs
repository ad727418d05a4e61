use super::MaterialError;

fn check_nu(nu: f64) -> Result<(), MaterialError> {
    if !(0.0..0.5).contains(&nu) {
        return Err(MaterialError::Contract(format!("Poisson ratio must lie in [0, 0.5), got {nu}")));
    }
    Ok(())
}

/// Lamé parameters `(μ, λ)` from Young's modulus and Poisson ratio.
pub fn lame_from_e(e: f64, nu: f64) -> Result<(f64, f64), MaterialError> {
    check_nu(nu)?;
    Ok((e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))))
}

/// Directional stiffness coefficient for one anisotropy axis.
pub fn alpha_from_e(e_k: f64, nu: f64) -> Result<f64, MaterialError> {
    check_nu(nu)?;
    Ok(e_k / (2.0 * (1.0 + nu)))
}
