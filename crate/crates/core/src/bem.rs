//! Collocation BEM for the sound-hard exterior Helmholtz problem.
//!
//! The boundary integral equation solved at every collocation point `x_ν` is
//!
//! ```text
//! C(x) u(x) - ∫_S ∂G/∂n_y(x, y) u(y) dS_y = u_in(x),   C(x) = 1 + ∫_S ∂Γ/∂n_y dS_y
//! ```
//!
//! with `∂/∂n_y` taken with respect to `y` and `r = y - x` (see [`crate::kernels`]).
//! `C` is the solid-angle fraction seen from the exterior (1/2 on smooth
//! parts). The density is expanded in the analysis model's NURBS basis, one
//! unknown per unified control point.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CVec3, Point3, Vec3};
use crate::kernels::{IncidentField, Wavenumber};
use crate::linalg::{relative_residual, DenseMatrix, LuFactors};
use crate::model::{CollocationSet, ScatteringModel};
use crate::nurbs::NurbsPatch;
use crate::quadrature::{
    closest_point_in_rect, gauss_rule, integrate_near_singular, integrate_singular, Integrand, PatchNearField,
    QuadReport, Rect, SubdivisionPolicy,
};

/// Residual above which a solve is reported as inaccurate.
pub const RESIDUAL_LIMIT: f64 = 1e-10;

/// Gauss data of one element for the regular (far-field) rule.
#[derive(Clone, Debug)]
struct ElementQuad {
    points: Vec<Point3>,
    /// Unit normal times Jacobian times weight.
    nw: Vec<Vec3>,
    /// Basis values, `points.len() x nloc` row-major.
    basis: Vec<f64>,
}

/// One Bezier cell of a patch: the rectangle between consecutive distinct knots.
#[derive(Clone, Debug)]
pub struct Element {
    pub patch: usize,
    pub span_s: usize,
    pub span_t: usize,
    pub rect: Rect,
    /// Global unknown of every basis function supported on the cell.
    pub globals: Vec<usize>,
    pub center: Point3,
    pub radius: f64,
    quad: ElementQuad,
}

impl Element {
    pub fn nloc(&self) -> usize {
        self.globals.len()
    }
}

/// Analysis model with its elements, collocation points and quadrature data.
#[derive(Clone, Debug)]
pub struct Discretization {
    model: ScatteringModel,
    elements: Vec<Element>,
    patch_elements: Vec<Vec<usize>>,
    collocation: CollocationSet,
    /// `R_μ(ŝ_ν, t̂_ν)` per collocation point as `(μ, value)`.
    collocation_basis: Vec<Vec<(usize, f64)>>,
    policy: SubdivisionPolicy,
    /// Distance below which a point counts as lying on the surface.
    surface_tol: f64,
}

impl Discretization {
    pub fn new(model: ScatteringModel, policy: SubdivisionPolicy) -> Result<Self> {
        policy.validate()?;
        let collocation = model.collocation_points()?;
        let rule = gauss_rule(policy.base_order)?;
        let mut elements = Vec::new();
        let mut patch_elements = Vec::with_capacity(model.patches().len());
        for (pi, patch) in model.patches().iter().enumerate() {
            let mut ids = Vec::new();
            let n_t = patch.n_t();
            for (span_s, span_t, s, t) in patch.bezier_cells() {
                let id = elements.len();
                let rect = Rect::new(s, t);
                let probe = patch.eval_basis_in_span(span_s, span_t, s[0], t[0]);
                let globals: Vec<usize> = (0..probe.len())
                    .map(|j| model.global_index(pi)[probe.cp_index(j, n_t)])
                    .collect();
                let nloc = globals.len();
                let mut quad = ElementQuad {
                    points: Vec::with_capacity(rule.weights.len()),
                    nw: Vec::with_capacity(rule.weights.len()),
                    basis: Vec::with_capacity(rule.weights.len() * nloc),
                };
                let (ds, dt) = (s[1] - s[0], t[1] - t[0]);
                for (&(u, v), &w) in rule.nodes.iter().zip(&rule.weights) {
                    let (ps, pt) = (s[0] + u * ds, t[0] + v * dt);
                    let b = patch.eval_basis_in_span(span_s, span_t, ps, pt);
                    let nj = b.tangent_s.cross(&b.tangent_t);
                    if !(nj.norm() > 0.0) {
                        return Err(Error::DegenerateElement {
                            element: id,
                            s: ps,
                            t: pt,
                        });
                    }
                    quad.points.push(b.point);
                    quad.nw.push(nj * (w * ds * dt));
                    quad.basis.extend_from_slice(&b.r[..nloc]);
                }
                let mut samples = Vec::with_capacity(25);
                for i in 0..5 {
                    for j in 0..5 {
                        let ps = s[0] + ds * i as f64 / 4.0;
                        let pt = t[0] + dt * j as f64 / 4.0;
                        samples.push(patch.eval_basis_in_span(span_s, span_t, ps, pt).point);
                    }
                }
                let center = samples.iter().sum::<Point3>() / samples.len() as f64;
                let radius = 1.05 * samples.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
                elements.push(Element {
                    patch: pi,
                    span_s,
                    span_t,
                    rect,
                    globals,
                    center,
                    radius,
                    quad,
                });
                ids.push(id);
            }
            patch_elements.push(ids);
        }
        let collocation_basis = collocation
            .points
            .iter()
            .map(|c| {
                let patch = model.patch(c.patch);
                let b = patch.eval_basis(c.s, c.t)?;
                Ok((0..b.len())
                    .filter(|&j| b.r[j] != 0.0)
                    .map(|j| (model.global_index(c.patch)[b.cp_index(j, patch.n_t())], b.r[j]))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let (lo, hi) = model.bounding_box();
        let surface_tol = 1e-9 * (hi - lo).norm().max(f64::MIN_POSITIVE);
        Ok(Discretization {
            model,
            elements,
            patch_elements,
            collocation,
            collocation_basis,
            policy,
            surface_tol,
        })
    }

    pub fn model(&self) -> &ScatteringModel {
        &self.model
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn collocation(&self) -> &CollocationSet {
        &self.collocation
    }

    pub fn policy(&self) -> &SubdivisionPolicy {
        &self.policy
    }

    pub fn n_unknowns(&self) -> usize {
        self.model.n_unknowns()
    }

    /// Elements whose closure contains collocation point `row`, with the
    /// parameter point of the singularity.
    fn singular_elements(&self, row: usize) -> Vec<(usize, (f64, f64))> {
        let c = &self.collocation.points[row];
        let mut out: Vec<(usize, (f64, f64))> = Vec::new();
        for &(patch, s, t) in &c.appearances {
            for &e in &self.patch_elements[patch] {
                if self.elements[e].rect.contains(s, t, 1e-13) && !out.iter().any(|o| o.0 == e) {
                    out.push((e, (s, t)));
                }
            }
        }
        out
    }

    /// Integrates the double-layer kernels over every element for the target
    /// `x` and hands each element's per-basis integrals to `sink`.
    ///
    /// For element `e`, `acc[j]` is `∫ ∂G/∂n_y R_j dS` and `acc[nloc]` is
    /// `∫ ∂Γ/∂n_y dS`.
    fn integrate_all<F>(
        &self,
        x: &Point3,
        k: f64,
        singular: &[(usize, (f64, f64))],
        allow_on_surface: bool,
        mut sink: F,
    ) -> Result<QuadReport>
    where
        F: FnMut(&Element, &[Complex64]),
    {
        let mut report = QuadReport {
            converged: true,
            ..Default::default()
        };
        let mut acc = Vec::new();
        for (id, e) in self.elements.iter().enumerate() {
            let nloc = e.nloc();
            acc.clear();
            acc.resize(nloc + 1, Complex64::new(0.0, 0.0));
            let apex = singular.iter().find(|s| s.0 == id).map(|s| s.1);
            let integrand = || KernelIntegrand {
                patch: self.model.patch(e.patch),
                element: id,
                span_s: e.span_s,
                span_t: e.span_t,
                nloc,
                x: *x,
                k,
            };
            if let Some(apex) = apex {
                report.merge(integrate_singular(&integrand(), &e.rect, apex, &self.policy, &mut acc)?);
            } else {
                let dc = (x - e.center).norm() - e.radius;
                if dc > 0.0 && 2.0 * e.radius <= self.policy.distance_ratio * dc {
                    regular_element(e, x, k, &mut acc);
                } else {
                    let patch = self.model.patch(e.patch);
                    let mut on_surface = None;
                    if dc <= 0.0 {
                        let near = PatchNearField { patch, target: *x };
                        let start = crate::quadrature::NearField::nearest(&near, &e.rect);
                        let (p, d) = closest_point_in_rect(patch, x, &e.rect, start);
                        if d <= self.surface_tol {
                            on_surface = Some(p);
                        }
                    }
                    match on_surface {
                        Some(p) if allow_on_surface => {
                            report.merge(integrate_singular(&integrand(), &e.rect, p, &self.policy, &mut acc)?);
                        }
                        Some(_) => {
                            return Err(Error::Domain(format!(
                                "point ({}, {}, {}) lies on the surface",
                                x.x, x.y, x.z
                            )));
                        }
                        None => {
                            let near = PatchNearField { patch, target: *x };
                            report.merge(integrate_near_singular(
                                &integrand(),
                                &e.rect,
                                &near,
                                &self.policy,
                                &mut acc,
                            )?);
                        }
                    }
                }
            }
            sink(e, &acc);
        }
        Ok(report)
    }

    /// Free term `C(x_ν) = 1 + ∫_S ∂Γ/∂n_y dS` at a collocation point.
    pub fn free_term(&self, row: usize) -> Result<f64> {
        let x = self.collocation.points[row].position;
        let singular = self.singular_elements(row);
        let mut total = 0.0;
        self.integrate_all(&x, 0.0, &singular, true, |e, acc| total += acc[e.nloc()].re)?;
        Ok(1.0 + total)
    }

    /// Laplace double-layer of the unit density, `∫_S ∂Γ/∂n_y dS`, at any point:
    /// 0 outside, -1 inside, -1/2 on smooth parts of the surface.
    pub fn solid_angle_potential(&self, x: &Point3) -> Result<f64> {
        let mut total = 0.0;
        self.integrate_all(x, 0.0, &[], true, |e, acc| total += acc[e.nloc()].re)?;
        Ok(total)
    }
}

/// `e^{ikρ} (ikρ - 1)` and `-1` scale factors of `(r·n) / (4πρ³)`.
#[inline]
fn kernel_factors(r: &Vec3, nw: &Vec3, k: f64) -> (Complex64, f64) {
    let rho2 = r.norm_squared();
    let rho = rho2.sqrt();
    let base = r.dot(nw) / (4.0 * PI * rho2 * rho);
    let helm = if k == 0.0 {
        Complex64::new(-base, 0.0)
    } else {
        let (sin, cos) = (k * rho).sin_cos();
        // (ikρ - 1)(cos + i sin)
        Complex64::new(-cos - k * rho * sin, k * rho * cos - sin) * base
    };
    (helm, -base)
}

fn regular_element(e: &Element, x: &Point3, k: f64, acc: &mut [Complex64]) {
    let nloc = e.nloc();
    let mut lap = 0.0;
    for (q, (y, nw)) in e.quad.points.iter().zip(&e.quad.nw).enumerate() {
        let (helm, l) = kernel_factors(&(y - x), nw, k);
        lap += l;
        let basis = &e.quad.basis[q * nloc..(q + 1) * nloc];
        for (a, &r) in acc.iter_mut().zip(basis) {
            *a += helm * r;
        }
    }
    acc[nloc] += lap;
}

struct KernelIntegrand<'a> {
    patch: &'a NurbsPatch,
    element: usize,
    span_s: usize,
    span_t: usize,
    nloc: usize,
    x: Point3,
    k: f64,
}

impl Integrand for KernelIntegrand<'_> {
    fn len(&self) -> usize {
        self.nloc + 1
    }

    fn accumulate(&self, s: f64, t: f64, weight: f64, acc: &mut [Complex64]) -> Result<()> {
        let b = self.patch.eval_basis_in_span(self.span_s, self.span_t, s, t);
        let nj = b.tangent_s.cross(&b.tangent_t);
        if !(nj.norm() > 0.0) {
            return Err(Error::DegenerateElement {
                element: self.element,
                s,
                t,
            });
        }
        let r = b.point - self.x;
        if r.norm_squared() == 0.0 {
            return Ok(());
        }
        let (helm, lap) = kernel_factors(&r, &(nj * weight), self.k);
        for (a, &rj) in acc.iter_mut().zip(&b.r[..self.nloc]) {
            *a += helm * rj;
        }
        acc[self.nloc] += lap;
        Ok(())
    }

    /// Double-layer integrals are dimensionless solid-angle fractions.
    fn absolute_scale(&self) -> f64 {
        1.0
    }
}

/// Assembled collocation system.
#[derive(Clone, Debug)]
pub struct BemSystem {
    disc: Arc<Discretization>,
    k: Wavenumber,
    incident: IncidentField,
    pub matrix: DenseMatrix,
    pub rhs: Vec<Complex64>,
    pub free_terms: Vec<f64>,
    /// Whether every singular integration converged.
    pub quadrature_converged: bool,
    lu: Option<LuFactors>,
}

/// Assembles `A` and `b = u_in(x_ν)` for the incident field's wavenumber.
pub fn assemble(disc: &Arc<Discretization>, incident: &IncidentField) -> Result<BemSystem> {
    let n = disc.n_unknowns();
    let k = incident.wavenumber();
    let kv = k.value();
    let mut matrix = DenseMatrix::zeros(n, n);
    let rows: Vec<Result<(f64, bool)>> = matrix
        .rows_mut()
        .collect::<Vec<_>>()
        .into_par_iter()
        .enumerate()
        .map(|(row, out)| {
            let x = disc.collocation.points[row].position;
            let singular = disc.singular_elements(row);
            let mut lap = 0.0;
            let report = disc.integrate_all(&x, kv, &singular, true, |e, acc| {
                for (&g, a) in e.globals.iter().zip(acc) {
                    out[g] -= a;
                }
                lap += acc[e.nloc()].re;
            })?;
            let c = 1.0 + lap;
            for &(mu, r) in &disc.collocation_basis[row] {
                out[mu] += c * r;
            }
            Ok((c, report.converged))
        })
        .collect();
    let mut free_terms = Vec::with_capacity(n);
    let mut converged = true;
    for r in rows {
        let (c, ok) = r?;
        free_terms.push(c);
        converged &= ok;
    }
    if !converged {
        log::warn!("some singular integrals did not reach the requested tolerance");
    }
    let rhs = disc
        .collocation
        .points
        .iter()
        .map(|c| incident.eval(&c.position))
        .collect();
    Ok(BemSystem {
        disc: Arc::clone(disc),
        k,
        incident: *incident,
        matrix,
        rhs,
        free_terms,
        quadrature_converged: converged,
        lu: None,
    })
}

impl BemSystem {
    pub fn discretization(&self) -> &Arc<Discretization> {
        &self.disc
    }

    pub fn wavenumber(&self) -> Wavenumber {
        self.k
    }

    /// Factors `A` once; later calls reuse the factors.
    pub fn factor(&mut self) -> Result<()> {
        if self.lu.is_none() {
            self.lu = Some(LuFactors::factor(self.matrix.clone())?);
        }
        Ok(())
    }

    /// Solves `A x = b` for an arbitrary right-hand side with the stored factors.
    pub fn solve_rhs(&mut self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        self.factor()?;
        let x = self.lu.as_ref().expect("factored").solve(b)?;
        let res = relative_residual(&self.matrix, &x, b);
        if res > RESIDUAL_LIMIT {
            log::warn!("linear solve residual {res:e} exceeds {RESIDUAL_LIMIT:e}");
        }
        Ok(x)
    }

    pub fn solve(&mut self) -> Result<SurfaceSolution> {
        let rhs = self.rhs.clone();
        let coefficients = self.solve_rhs(&rhs)?;
        Ok(SurfaceSolution {
            disc: Arc::clone(&self.disc),
            coefficients,
            k: self.k,
            incident: self.incident,
        })
    }

    pub fn residual(&self, x: &[Complex64], b: &[Complex64]) -> f64 {
        relative_residual(&self.matrix, x, b)
    }

    /// Writes `A.bin`, `b.bin` and, when given, `u.bin` into `dir`. Each file
    /// holds `rows: u64`, `cols: u64`, then row-major `(re, im)` pairs of
    /// `f64`, all little-endian.
    pub fn dump(&self, dir: impl AsRef<Path>, solution: Option<&[Complex64]>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_matrix(
            &dir.join("A.bin"),
            self.matrix.rows(),
            self.matrix.cols(),
            self.matrix.data(),
        )?;
        write_matrix(&dir.join("b.bin"), self.rhs.len(), 1, &self.rhs)?;
        if let Some(u) = solution {
            write_matrix(&dir.join("u.bin"), u.len(), 1, u)?;
        }
        Ok(())
    }
}

fn write_matrix(path: &Path, rows: usize, cols: usize, data: &[Complex64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&(rows as u64).to_le_bytes())?;
    f.write_all(&(cols as u64).to_le_bytes())?;
    for z in data {
        f.write_all(&z.re.to_le_bytes())?;
        f.write_all(&z.im.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Reads a matrix written by [`BemSystem::dump`].
pub fn read_matrix(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<Complex64>)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 {
        return Err(Error::invalid("matrix file too short"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(0) as usize, word(8) as usize);
    if bytes.len() != 16 + 16 * rows * cols {
        return Err(Error::invalid("matrix file size does not match its header"));
    }
    let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let data = (0..rows * cols)
        .map(|i| Complex64::new(f(16 + 16 * i), f(24 + 16 * i)))
        .collect();
    Ok((rows, cols, data))
}

/// Boundary density `u = Σ R_ν u_ν` on the analysis surface.
#[derive(Clone, Debug)]
pub struct SurfaceSolution {
    disc: Arc<Discretization>,
    coefficients: Vec<Complex64>,
    k: Wavenumber,
    incident: IncidentField,
}

/// Value and parametric derivatives of a surface field.
#[derive(Clone, Copy, Debug)]
pub struct SurfaceValue {
    pub u: Complex64,
    pub u_s: Complex64,
    pub u_t: Complex64,
}

impl SurfaceSolution {
    /// Wraps arbitrary coefficients (for example an adjoint solution).
    pub fn from_coefficients(
        disc: Arc<Discretization>,
        coefficients: Vec<Complex64>,
        incident: IncidentField,
    ) -> Result<Self> {
        if coefficients.len() != disc.n_unknowns() {
            return Err(Error::invalid(format!(
                "{} coefficients for {} unknowns",
                coefficients.len(),
                disc.n_unknowns()
            )));
        }
        Ok(SurfaceSolution {
            k: incident.wavenumber(),
            disc,
            coefficients,
            incident,
        })
    }

    pub fn discretization(&self) -> &Arc<Discretization> {
        &self.disc
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn wavenumber(&self) -> Wavenumber {
        self.k
    }

    pub fn incident(&self) -> &IncidentField {
        &self.incident
    }

    pub fn eval_on_surface(&self, patch: usize, s: f64, t: f64) -> Result<SurfaceValue> {
        let model = self.disc.model();
        if patch >= model.patches().len() {
            return Err(Error::invalid(format!("patch {patch} out of range")));
        }
        let p = model.patch(patch);
        let b = p.eval_basis(s, t)?;
        let idx = model.global_index(patch);
        let mut out = SurfaceValue {
            u: Complex64::new(0.0, 0.0),
            u_s: Complex64::new(0.0, 0.0),
            u_t: Complex64::new(0.0, 0.0),
        };
        for j in 0..b.len() {
            let c = self.coefficients[idx[b.cp_index(j, p.n_t())]];
            out.u += c * b.r[j];
            out.u_s += c * b.r_s[j];
            out.u_t += c * b.r_t[j];
        }
        Ok(out)
    }

    /// `∇u = (u_s (y_t × n) + u_t (n × y_s)) / J`, tangential by construction.
    pub fn surface_gradient(&self, patch: usize, s: f64, t: f64) -> Result<CVec3> {
        let frame = self.disc.model().patch(patch).eval_surface(s, t)?;
        let v = self.eval_on_surface(patch, s, t)?;
        Ok(tangential_gradient(
            v.u_s,
            v.u_t,
            &frame.tangent_s,
            &frame.tangent_t,
            &frame.normal,
            frame.jacobian,
        ))
    }

    /// `u_in(x) + ∫_S ∂G/∂n_y u dS` without checking where `x` is.
    pub fn eval_representation(&self, x: &Point3) -> Result<(Complex64, f64)> {
        let mut scattered = Complex64::new(0.0, 0.0);
        let mut lap = 0.0;
        self.disc.integrate_all(x, self.k.value(), &[], false, |e, acc| {
            for (&g, a) in e.globals.iter().zip(acc) {
                scattered += a * self.coefficients[g];
            }
            lap += acc[e.nloc()].re;
        })?;
        Ok((self.incident.eval(x) + scattered, lap))
    }

    /// Total field at a point outside the body.
    pub fn eval_exterior(&self, x: &Point3) -> Result<Complex64> {
        let (u, lap) = self.eval_representation(x)?;
        if lap < -0.5 {
            return Err(Error::Domain(format!(
                "point ({}, {}, {}) is inside the scatterer",
                x.x, x.y, x.z
            )));
        }
        Ok(u)
    }
}

pub(crate) fn tangential_gradient(u_s: Complex64, u_t: Complex64, ts: &Vec3, tt: &Vec3, n: &Vec3, jac: f64) -> CVec3 {
    let a = tt.cross(n) / jac;
    let b = n.cross(ts) / jac;
    CVec3::new(u_s * a.x + u_t * b.x, u_s * a.y + u_t * b.y, u_s * a.z + u_t * b.z)
}
