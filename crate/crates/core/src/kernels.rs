//! Helmholtz and Laplace fundamental solutions and plane-wave incident fields.
//!
//! Time convention is `e^{-iωt}`, so outgoing waves behave like `e^{ik|r|}`.
//! Normal derivatives are taken with respect to the source point `y`, with
//! `r = y - x`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CVec3, Point3, Vec3};

/// Distances below this are rejected as singular.
pub const MIN_DISTANCE: f64 = 1e-300;

/// Non-negative wavenumber; zero selects the Laplace kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Wavenumber(f64);

impl Wavenumber {
    pub fn new(k: f64) -> Result<Self> {
        if !(k >= 0.0) || !k.is_finite() {
            return Err(Error::invalid(format!("wavenumber {k} must be finite and >= 0")));
        }
        Ok(Wavenumber(k))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_laplace(self) -> bool {
        self.0 == 0.0
    }
}

fn checked_norm(r: &Vec3) -> Result<f64> {
    let d = r.norm();
    if !(d >= MIN_DISTANCE) {
        return Err(Error::SingularEvaluation(d));
    }
    Ok(d)
}

/// `e^{ik|r|} / (4π|r|)`.
pub fn helmholtz_g(r: &Vec3, k: Wavenumber) -> Result<Complex64> {
    let d = checked_norm(r)?;
    Ok(Complex64::from_polar(1.0, k.0 * d) / (4.0 * PI * d))
}

/// `∂G/∂n_y = (ik|r| - 1) e^{ik|r|} / (4π|r|²) (r̂·n_y)` with `r = y - x`.
pub fn helmholtz_dgdn(r: &Vec3, n_y: &Vec3, k: Wavenumber) -> Result<Complex64> {
    let d = checked_norm(r)?;
    let cos = r.dot(n_y) / d;
    let phase = Complex64::from_polar(1.0, k.0 * d);
    Ok(Complex64::new(-1.0, k.0 * d) * phase * (cos / (4.0 * PI * d * d)))
}

/// `∂Γ/∂n_y = -(r̂·n_y) / (4π|r|²)` for `Γ = 1/(4π|r|)`, `r = y - x`.
pub fn laplace_dgamma_dn(r: &Vec3, n_y: &Vec3) -> Result<f64> {
    let d = checked_norm(r)?;
    Ok(-r.dot(n_y) / (4.0 * PI * d * d * d))
}

/// Gradient of `G` with respect to `x` (the observation point), `r = y - x`.
pub fn helmholtz_grad_x(r: &Vec3, k: Wavenumber) -> Result<CVec3> {
    let d = checked_norm(r)?;
    let phase = Complex64::from_polar(1.0, k.0 * d);
    let radial = Complex64::new(-1.0, k.0 * d) * phase / (4.0 * PI * d * d * d);
    // dG/dx = -G'(d) r/d
    Ok(CVec3::new(-radial * r.x, -radial * r.y, -radial * r.z))
}

/// Incident plane wave `e^{ik d·x}` travelling along the unit vector `d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IncidentField {
    direction: Vec3,
    k: Wavenumber,
}

impl IncidentField {
    /// Normalises `direction`; a zero vector is rejected.
    pub fn plane_wave(direction: Vec3, k: Wavenumber) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("plane-wave direction must be a non-zero vector"));
        }
        Ok(IncidentField {
            direction: direction / n,
            k,
        })
    }

    pub fn direction(&self) -> Vec3 {
        self.direction
    }

    pub fn wavenumber(&self) -> Wavenumber {
        self.k
    }

    pub fn with_wavenumber(&self, k: Wavenumber) -> Self {
        IncidentField { k, ..*self }
    }

    pub fn eval(&self, x: &Point3) -> Complex64 {
        Complex64::from_polar(1.0, self.k.0 * self.direction.dot(x))
    }

    pub fn gradient(&self, x: &Point3) -> CVec3 {
        let ik = Complex64::new(0.0, self.k.0) * self.eval(x);
        CVec3::new(ik * self.direction.x, ik * self.direction.y, ik * self.direction.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn wn(k: f64) -> Wavenumber {
        Wavenumber::new(k).unwrap()
    }

    #[test]
    fn green_function_values() {
        let g = helmholtz_g(&Vec3::new(1.0, 0.0, 0.0), wn(0.0)).unwrap();
        assert_relative_eq!(g.re, 0.07957747154594767, epsilon = 1e-15);
        let g = helmholtz_g(&Vec3::new(0.0, 1.0, 0.0), wn(1.0)).unwrap();
        // (cos 1 + i sin 1) / (4π)
        assert_relative_eq!(g.re, 0.04299589137143181, epsilon = 1e-15);
        assert_relative_eq!(g.im, 0.06696213335029094, epsilon = 1e-15);
        let g = helmholtz_g(&Vec3::new(0.0, 0.0, 2.0), wn(PI)).unwrap();
        assert_relative_eq!(g.re, 1.0 / (8.0 * PI), epsilon = 1e-15);
        assert!(g.im.abs() < 1e-15);
    }

    #[test]
    fn tiny_distance_is_rejected() {
        assert!(matches!(
            helmholtz_g(&Vec3::zeros(), wn(1.0)),
            Err(Error::SingularEvaluation(_))
        ));
        assert!(laplace_dgamma_dn(&Vec3::zeros(), &Vec3::z()).is_err());
    }

    #[test]
    fn laplace_normal_derivative_sign() {
        let h = 0.7;
        let v = laplace_dgamma_dn(&Vec3::new(0.0, 0.0, h), &Vec3::z()).unwrap();
        assert_relative_eq!(v, -1.0 / (4.0 * PI * h * h), epsilon = 1e-15);
        let v = laplace_dgamma_dn(&Vec3::new(1.0, 2.0, 0.0), &Vec3::z()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn helmholtz_normal_derivative_limits() {
        let r = Vec3::new(0.3, -0.4, 1.1);
        let n = Vec3::new(0.0, 0.6, 0.8);
        let h = helmholtz_dgdn(&r, &n, wn(0.0)).unwrap();
        assert_relative_eq!(h.re, laplace_dgamma_dn(&r, &n).unwrap(), epsilon = 1e-15);
        assert_eq!(h.im, 0.0);
        let perp = Vec3::new(0.0, 0.0, 1.0);
        let v = helmholtz_dgdn(&Vec3::new(1.0, 1.0, 0.0), &perp, wn(2.0)).unwrap();
        assert_eq!(v, Complex64::new(0.0, 0.0));
    }

    /// Unit-sphere midpoint rule over a fine (θ, φ) grid around x.
    #[test]
    fn enclosing_sphere_solid_angle() {
        let (nt, np) = (400, 400);
        let radius = 0.8;
        let mut total = 0.0;
        for i in 0..nt {
            let th = (i as f64 + 0.5) * PI / nt as f64;
            for j in 0..np {
                let ph = (j as f64 + 0.5) * 2.0 * PI / np as f64;
                let n = Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos());
                let da = radius * radius * th.sin() * (PI / nt as f64) * (2.0 * PI / np as f64);
                total += laplace_dgamma_dn(&(n * radius), &n).unwrap() * da;
            }
        }
        assert_relative_eq!(total, -1.0, epsilon = 1e-4);
    }

    #[test]
    fn incident_examples() {
        let inc = IncidentField::plane_wave(Vec3::new(0.0, 0.0, -1.0), wn(1.0)).unwrap();
        let u = inc.eval(&Point3::new(0.0, 0.0, 8.5));
        assert_relative_eq!(u.re, (8.5f64).cos(), epsilon = 1e-15);
        assert_relative_eq!(u.im, -(8.5f64).sin(), epsilon = 1e-15);
        assert_eq!(inc.eval(&Point3::zeros()), Complex64::new(1.0, 0.0));
        assert!(IncidentField::plane_wave(Vec3::zeros(), wn(1.0)).is_err());
    }

    #[test]
    fn far_field_decay() {
        for &d in &[10.0, 100.0, 1000.0] {
            let g = helmholtz_g(&Vec3::new(d, 0.0, 0.0), wn(1.3)).unwrap();
            assert_relative_eq!(g.norm() * d, 1.0 / (4.0 * PI), epsilon = 1e-14);
            let phase = g.arg();
            let expected = (1.3 * d + PI).rem_euclid(2.0 * PI) - PI;
            assert!((phase - expected).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn normal_derivative_matches_finite_difference(
            rx in -2.0..2.0f64, ry in -2.0..2.0f64, rz in 0.3..2.0f64,
            nx in -1.0..1.0f64, ny in -1.0..1.0f64, nz in 0.1..1.0f64,
            k in 0.0..5.0f64,
        ) {
            let r = Vec3::new(rx, ry, rz);
            let n = Vec3::new(nx, ny, nz).normalize();
            let k = wn(k);
            let h = 1e-5;
            let fd = (helmholtz_g(&(r + n * h), k).unwrap() - helmholtz_g(&(r - n * h), k).unwrap()) / (2.0 * h);
            let an = helmholtz_dgdn(&r, &n, k).unwrap();
            let scale = helmholtz_g(&r, k).unwrap().norm() / r.norm();
            prop_assert!((fd - an).norm() <= 1e-6 * scale.max(an.norm()), "fd {fd} analytic {an}");

            let grad = helmholtz_grad_x(&r, k).unwrap();
            let e = Vec3::new(0.3, -0.5, 0.8).normalize();
            // moving x by +h e moves r by -h e
            let fdx = (helmholtz_g(&(r - e * h), k).unwrap() - helmholtz_g(&(r + e * h), k).unwrap()) / (2.0 * h);
            let gx = grad.x * e.x + grad.y * e.y + grad.z * e.z;
            prop_assert!((fdx - gx).norm() <= 1e-6 * scale.max(gx.norm()));
        }

        #[test]
        fn incident_has_unit_modulus(x in -50.0..50.0f64, y in -50.0..50.0f64, z in -50.0..50.0f64, k in 0.0..10.0f64) {
            let inc = IncidentField::plane_wave(Vec3::new(1.0, -2.0, 0.5), wn(k)).unwrap();
            prop_assert!((inc.eval(&Point3::new(x, y, z)).norm() - 1.0).abs() < 1e-12);
        }
    }
}
