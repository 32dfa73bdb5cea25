//! Objective `J = Σ_m |u(z_m)|² / 2`, its adjoint problem, and the shape
//! sensitivities of `J` with respect to control-point positions.
//!
//! The adjoint density solves the forward system with the incident field
//! replaced by point sources at the observers, reusing the LU factors. The
//! sensitivity of control point `ν` is
//!
//! ```text
//! s_ν = SIGN · Re ∫_S (k² q u - ∇q·∇u) R_ν n dS
//! ```
//!
//! where `q` is the adjoint density in the selected [`AdjointConvention`].

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bem::{tangential_gradient, Discretization, SurfaceSolution};
use crate::error::{Error, Result};
use crate::geometry::{cdot, Point3, Vec3};
use crate::kernels::{helmholtz_g, Wavenumber};
use crate::model::RefinementMap;
use crate::quadrature::gauss_rule;

/// Overall sign of the sensitivity integral, fixed by comparison with
/// central finite differences of `J`.
pub const SENSITIVITY_SIGN: f64 = -1.0;

/// Default Gauss order per element for the sensitivity integrals.
pub const DEFAULT_SENSITIVITY_ORDER: usize = 6;

/// How observed values enter the adjoint source and the sensitivity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AdjointConvention {
    /// Source `Σ G(x - z_m) u(z_m)`; the sensitivity uses `q = conj(λ)`.
    Literal,
    /// Source `Σ G(x - z_m) conj(u(z_m))`; the sensitivity uses `q = λ`.
    #[default]
    Conjugate,
}

/// Observation points of `J`.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub points: Vec<Point3>,
}

impl Objective {
    pub fn new(points: Vec<Point3>) -> Self {
        Objective { points }
    }

    /// `u(z_m)` for every observer; fails if one lies inside the body.
    pub fn observe(&self, solution: &SurfaceSolution) -> Result<Vec<Complex64>> {
        self.points.iter().map(|z| solution.eval_exterior(z)).collect()
    }

    pub fn value(observed: &[Complex64]) -> f64 {
        observed.iter().map(|u| 0.5 * u.norm_sqr()).sum()
    }

    /// `(J, u(z_m))`.
    pub fn evaluate(&self, solution: &SurfaceSolution) -> Result<(f64, Vec<Complex64>)> {
        let observed = self.observe(solution)?;
        Ok((Self::value(&observed), observed))
    }
}

/// Adjoint right-hand side `b̃_ν = Σ_m G(x_ν - z_m) w_m` with `w = u(z)` or
/// `conj(u(z))` depending on the convention.
pub fn adjoint_rhs(
    disc: &Discretization,
    k: Wavenumber,
    points: &[Point3],
    observed: &[Complex64],
    convention: AdjointConvention,
) -> Result<Vec<Complex64>> {
    if points.len() != observed.len() {
        return Err(Error::invalid("one observed value per observation point is required"));
    }
    for z in points {
        let near = disc.elements().iter().any(|e| {
            let d = (z - e.center).norm() - e.radius;
            d <= 0.0 || 2.0 * e.radius > disc.policy().distance_ratio * d
        });
        if near {
            log::warn!("observation point ({}, {}, {}) is close to the surface", z.x, z.y, z.z);
        }
    }
    let weights: Vec<Complex64> = observed
        .iter()
        .map(|u| match convention {
            AdjointConvention::Literal => *u,
            AdjointConvention::Conjugate => u.conj(),
        })
        .collect();
    let mut rhs = Vec::with_capacity(disc.n_unknowns());
    for c in &disc.collocation().points {
        let mut b = Complex64::new(0.0, 0.0);
        for (z, w) in points.iter().zip(&weights) {
            b += helmholtz_g(&(c.position - z), k)? * w;
        }
        rhs.push(b);
    }
    Ok(rhs)
}

/// Adjoint coefficients and sensitivities on the analysis and design nets.
#[derive(Clone, Debug)]
pub struct SensitivityField {
    pub convention: AdjointConvention,
    /// Adjoint density coefficients as solved.
    pub adjoint: Vec<Complex64>,
    /// `s_ν` per analysis control point.
    pub refined: Vec<Vec3>,
    /// `s_ν` pulled back to the design control points.
    pub coarse: Vec<Vec3>,
}

/// Integrates `s_ν` for every analysis control point and pulls the result
/// back through `map`.
pub fn sensitivities(
    primary: &SurfaceSolution,
    adjoint: &[Complex64],
    convention: AdjointConvention,
    map: &RefinementMap,
    order: usize,
) -> Result<SensitivityField> {
    let disc = primary.discretization();
    let n = disc.n_unknowns();
    if adjoint.len() != n || map.rows.len() != n {
        return Err(Error::invalid(
            "adjoint and refinement map must match the analysis model",
        ));
    }
    let rule = gauss_rule(order)?;
    let k = primary.wavenumber().value();
    let k2 = k * k;
    let u = primary.coefficients();
    let q: Vec<Complex64> = match convention {
        AdjointConvention::Literal => adjoint.iter().map(|z| z.conj()).collect(),
        AdjointConvention::Conjugate => adjoint.to_vec(),
    };
    let model = disc.model();
    let mut refined = vec![Vec3::zeros(); n];
    for e in disc.elements() {
        let patch = model.patch(e.patch);
        let (ds, dt) = (e.rect.s1 - e.rect.s0, e.rect.t1 - e.rect.t0);
        for (&(a, b), &w) in rule.nodes.iter().zip(&rule.weights) {
            let (s, t) = (e.rect.s0 + a * ds, e.rect.t0 + b * dt);
            let basis = patch.eval_basis_in_span(e.span_s, e.span_t, s, t);
            let frame = basis.frame().ok_or(Error::DegenerateElement { element: 0, s, t })?;
            let (mut uu, mut us, mut ut) = (Complex64::default(), Complex64::default(), Complex64::default());
            let (mut qq, mut qs, mut qt) = (Complex64::default(), Complex64::default(), Complex64::default());
            for (j, &g) in e.globals.iter().enumerate() {
                uu += u[g] * basis.r[j];
                us += u[g] * basis.r_s[j];
                ut += u[g] * basis.r_t[j];
                qq += q[g] * basis.r[j];
                qs += q[g] * basis.r_s[j];
                qt += q[g] * basis.r_t[j];
            }
            let (ts, tt, nn, jac) = (frame.tangent_s, frame.tangent_t, frame.normal, frame.jacobian);
            let grad_u = tangential_gradient(us, ut, &ts, &tt, &nn, jac);
            let grad_q = tangential_gradient(qs, qt, &ts, &tt, &nn, jac);
            let density = (qq * uu * k2 - cdot(&grad_q, &grad_u)).re;
            let scale = SENSITIVITY_SIGN * density * jac * w * ds * dt;
            for (j, &g) in e.globals.iter().enumerate() {
                refined[g] += nn * (scale * basis.r[j]);
            }
        }
    }
    let coarse = map.pull_back(&refined);
    Ok(SensitivityField {
        convention,
        adjoint: adjoint.to_vec(),
        refined,
        coarse,
    })
}

/// `dJ/da = Σ_ν s_ν · (C_ν - center) / a` for a net scaled uniformly about
/// `center`, where `C_ν` are the design control points at radius `a`.
pub fn radius_sensitivity(field: &SensitivityField, control_points: &[Point3], center: &Point3, a: f64) -> f64 {
    field
        .coarse
        .iter()
        .zip(control_points)
        .map(|(s, c)| s.dot(&(c - center)))
        .sum::<f64>()
        / a
}

/// Writes `cp_id,sx,sy,sz`.
pub fn write_sensitivity_csv(path: impl AsRef<Path>, values: &[Vec3]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cp_id", "sx", "sy", "sz"])?;
    for (i, s) in values.iter().enumerate() {
        w.write_record(&[i.to_string(), s.x.to_string(), s.y.to_string(), s.z.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
