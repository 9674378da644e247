//! Complex digamma function.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// B_{2k} / (2k) for k = 1..7.
const ASYMPTOTIC: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// Recurrence shifts the argument until |z| exceeds this before the
/// asymptotic series is applied.
const ASYMPTOTIC_RADIUS: f64 = 10.0;

/// Digamma ψ(z) for complex `z`.
///
/// Arguments with negative real part are reflected with
/// ψ(z) = ψ(1 − z) − π·cot(πz); small arguments are lifted with
/// ψ(z) = ψ(z + 1) − 1/z until |z| > 10, where the Stirling-type series
/// ln z − 1/(2z) − Σ B_{2k}/(2k z^{2k}) through B₁₄ is summed.
pub fn digamma(z: Complex64) -> Result<Complex64> {
    if !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::Domain(format!("digamma argument {z} is not finite")));
    }
    if z.im == 0.0 && z.re <= 0.0 && z.re == z.re.floor() {
        return Err(Error::Domain(format!("digamma pole at {}", z.re)));
    }
    if z.re < 0.0 {
        let reflected = digamma(1.0 - z)?;
        let pz = PI * z;
        return Ok(reflected - PI * pz.cos() / pz.sin());
    }

    let mut z = z;
    let mut acc = Complex64::new(0.0, 0.0);
    while z.norm() <= ASYMPTOTIC_RADIUS {
        acc -= z.inv();
        z += 1.0;
    }
    let inv = z.inv();
    let inv2 = inv * inv;
    // Horner in 1/z²
    let mut series = Complex64::new(0.0, 0.0);
    for c in ASYMPTOTIC.iter().rev() {
        series = (series + c) * inv2;
    }
    Ok(acc + z.ln() - 0.5 * inv - series)
}

/// Re ψ(z).
pub fn complex_digamma_real_part(z: Complex64) -> Result<f64> {
    digamma(z).map(|v| v.re)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn known_constants() {
        let psi1 = complex_digamma_real_part(Complex64::new(1.0, 0.0)).unwrap();
        assert!((psi1 + EULER_GAMMA).abs() < 1e-14);
        let psi_half = complex_digamma_real_part(Complex64::new(0.5, 0.0)).unwrap();
        let exact = -EULER_GAMMA - 2.0 * std::f64::consts::LN_2;
        assert!(((psi_half - exact) / exact).abs() < 1e-13);
    }

    #[test]
    fn poles_are_domain_errors() {
        for x in [0.0, -1.0, -7.0] {
            assert!(matches!(digamma(Complex64::new(x, 0.0)), Err(Error::Domain(_))));
        }
        assert!(digamma(Complex64::new(f64::NAN, 0.0)).is_err());
        // slightly off the pole is fine
        assert!(digamma(Complex64::new(-1.0, 1e-3)).is_ok());
    }

    #[test]
    fn recurrence_identity() {
        for z in [
            Complex64::new(0.5, 0.3),
            Complex64::new(2.0, -4.0),
            Complex64::new(0.5, 50.0),
        ] {
            let lhs = digamma(z + 1.0).unwrap();
            let rhs = digamma(z).unwrap() + z.inv();
            assert!((lhs - rhs).norm() < 1e-13 * lhs.norm().max(1.0));
        }
    }

    #[test]
    fn conjugate_symmetry() {
        let z = Complex64::new(0.5, 3.3);
        assert!((digamma(z.conj()).unwrap() - digamma(z).unwrap().conj()).norm() < 1e-15);
    }
}
