//! Quadrature on parameter rectangles: tensor Gauss–Legendre rules, a
//! triangle-fan degenerate mapping for weakly singular integrands, and
//! quadtree subdivision for nearly singular ones.
//!
//! Integrands are vector valued ([`Integrand`]) so one pass can integrate a
//! kernel against every basis function supported on an element.

use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nurbs::{NurbsPatch, SurfaceFrame};

pub const MAX_GAUSS_ORDER: usize = 64;

/// One-dimensional Gauss–Legendre rule on `[0, 1]` (weights sum to 1).
#[derive(Clone, Debug)]
pub struct Gauss1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn compute_gauss(n: usize) -> Gauss1d {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            x = 0.0;
            dp = 1.0;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map [-1, 1] -> [0, 1]
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    if n == 1 {
        weights[0] = 1.0;
    }
    Gauss1d { nodes, weights }
}

/// Cached Gauss–Legendre rule of the given order (1..=64).
pub fn gauss_legendre(order: usize) -> Result<&'static Gauss1d> {
    static RULES: OnceLock<Vec<Gauss1d>> = OnceLock::new();
    if !(1..=MAX_GAUSS_ORDER).contains(&order) {
        return Err(Error::invalid(format!(
            "Gauss order {order} outside 1..={MAX_GAUSS_ORDER}"
        )));
    }
    let rules = RULES.get_or_init(|| (1..=MAX_GAUSS_ORDER).map(compute_gauss).collect());
    Ok(&rules[order - 1])
}

/// Tensor-product rule on the unit square, exact for polynomials of degree
/// `2 * order - 1` in each variable. Weights sum to 1.
#[derive(Clone, Debug)]
pub struct QuadRule {
    pub order: usize,
    pub nodes: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
}

pub fn gauss_rule(order: usize) -> Result<QuadRule> {
    let g = gauss_legendre(order)?;
    let mut nodes = Vec::with_capacity(order * order);
    let mut weights = Vec::with_capacity(order * order);
    for i in 0..order {
        for j in 0..order {
            nodes.push((g.nodes[i], g.nodes[j]));
            weights.push(g.weights[i] * g.weights[j]);
        }
    }
    Ok(QuadRule { order, nodes, weights })
}

/// Controls singular and nearly singular integration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubdivisionPolicy {
    /// Maximum quadtree depth, for both the near-field subdivision and the
    /// adaptive refinement of mapped triangles.
    pub max_depth: usize,
    /// A cell is subdivided while `diameter / distance` exceeds this.
    pub distance_ratio: f64,
    /// Gauss order on regular cells and near-field leaves.
    pub base_order: usize,
    /// Gauss order in the mapped coordinates of singular triangles.
    pub singular_order: usize,
    /// Relative change between refinement levels accepted as converged.
    pub tolerance: f64,
}

impl Default for SubdivisionPolicy {
    fn default() -> Self {
        SubdivisionPolicy {
            max_depth: 8,
            distance_ratio: 1.0,
            base_order: 4,
            singular_order: 8,
            tolerance: 1e-8,
        }
    }
}

impl SubdivisionPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::invalid("max_depth must be at least 1"));
        }
        if !(self.distance_ratio > 0.0) {
            return Err(Error::invalid("distance_ratio must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        gauss_legendre(self.base_order)?;
        gauss_legendre(self.singular_order)?;
        Ok(())
    }
}

/// Axis-aligned parameter rectangle `[s0, s1] x [t0, t1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub s0: f64,
    pub s1: f64,
    pub t0: f64,
    pub t1: f64,
}

impl Rect {
    pub fn new(s: [f64; 2], t: [f64; 2]) -> Self {
        Rect {
            s0: s[0],
            s1: s[1],
            t0: t[0],
            t1: t[1],
        }
    }

    pub fn unit() -> Self {
        Rect::new([0.0, 1.0], [0.0, 1.0])
    }

    pub fn area(&self) -> f64 {
        (self.s1 - self.s0) * (self.t1 - self.t0)
    }

    pub fn contains(&self, s: f64, t: f64, tol: f64) -> bool {
        s >= self.s0 - tol && s <= self.s1 + tol && t >= self.t0 - tol && t <= self.t1 + tol
    }

    pub fn quadrants(&self) -> [Rect; 4] {
        let sm = 0.5 * (self.s0 + self.s1);
        let tm = 0.5 * (self.t0 + self.t1);
        [
            Rect::new([self.s0, sm], [self.t0, tm]),
            Rect::new([sm, self.s1], [self.t0, tm]),
            Rect::new([self.s0, sm], [tm, self.t1]),
            Rect::new([sm, self.s1], [tm, self.t1]),
        ]
    }

    pub fn clamp(&self, s: f64, t: f64) -> (f64, f64) {
        (s.clamp(self.s0, self.s1), t.clamp(self.t0, self.t1))
    }
}

/// Vector-valued integrand over parameter space.
pub trait Integrand {
    /// Number of output components.
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Adds `weight * f(s, t)` into `acc`.
    fn accumulate(&self, s: f64, t: f64, weight: f64, acc: &mut [Complex64]) -> Result<()>;
    /// Magnitude below which differences count as absolute rather than
    /// relative errors in adaptive refinement. Integrals that cancel to zero
    /// (a double layer over a flat element) converge against this scale.
    fn absolute_scale(&self) -> f64 {
        0.0
    }
}

/// Adapts a scalar closure to [`Integrand`].
pub struct ScalarFn<F>(pub F);

impl<F: Fn(f64, f64) -> Complex64> Integrand for ScalarFn<F> {
    fn len(&self) -> usize {
        1
    }

    fn accumulate(&self, s: f64, t: f64, weight: f64, acc: &mut [Complex64]) -> Result<()> {
        acc[0] += (self.0)(s, t) * weight;
        Ok(())
    }
}

/// Geometric information the near-field integrator needs.
pub trait NearField {
    /// `diameter / distance` of the cell as seen from the target point.
    fn ratio(&self, rect: &Rect) -> f64;
    /// Parameter point of the cell closest to the target.
    fn nearest(&self, rect: &Rect) -> (f64, f64);
}

/// Diagnostics of an adaptive integration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuadReport {
    pub converged: bool,
    pub depth: usize,
    pub evaluations: usize,
}

impl QuadReport {
    fn ok() -> Self {
        QuadReport {
            converged: true,
            depth: 0,
            evaluations: 0,
        }
    }

    pub fn merge(&mut self, other: QuadReport) {
        self.converged &= other.converged;
        self.depth = self.depth.max(other.depth);
        self.evaluations += other.evaluations;
    }
}

/// Adds the Gauss approximation of `∫_rect f ds dt` into `out`.
pub fn integrate_rect<I: Integrand + ?Sized>(f: &I, rect: &Rect, rule: &QuadRule, out: &mut [Complex64]) -> Result<()> {
    let ds = rect.s1 - rect.s0;
    let dt = rect.t1 - rect.t0;
    let area = ds * dt;
    for (&(u, v), &w) in rule.nodes.iter().zip(&rule.weights) {
        f.accumulate(rect.s0 + u * ds, rect.t0 + v * dt, w * area, out)?;
    }
    Ok(())
}

/// Triangle with apex `a` in parameter space, mapped from the unit square by
/// `P(u, v) = a + u [(b - a) + v (c - b)]`.
#[derive(Clone, Copy, Debug)]
struct MappedTriangle {
    a: (f64, f64),
    ba: (f64, f64),
    cb: (f64, f64),
    det: f64,
}

impl MappedTriangle {
    fn new(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Self {
        let ba = (b.0 - a.0, b.1 - a.1);
        let cb = (c.0 - b.0, c.1 - b.1);
        MappedTriangle {
            a,
            ba,
            cb,
            det: (ba.0 * cb.1 - ba.1 * cb.0).abs(),
        }
    }

    /// Gauss rule on the `(u, v)` cell, with the collapsed-edge Jacobian `u |det|`.
    fn integrate<I: Integrand + ?Sized>(
        &self,
        f: &I,
        cell: &Rect,
        g: &Gauss1d,
        out: &mut [Complex64],
    ) -> Result<usize> {
        let du = cell.s1 - cell.s0;
        let dv = cell.t1 - cell.t0;
        for (i, &xu) in g.nodes.iter().enumerate() {
            let u = cell.s0 + xu * du;
            let wu = g.weights[i] * du * u * self.det;
            for (j, &xv) in g.nodes.iter().enumerate() {
                let v = cell.t0 + xv * dv;
                let s = self.a.0 + u * (self.ba.0 + v * self.cb.0);
                let t = self.a.1 + u * (self.ba.1 + v * self.cb.1);
                f.accumulate(s, t, wu * g.weights[j] * dv, out)?;
            }
        }
        Ok(g.nodes.len() * g.nodes.len())
    }
}

fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn max_abs(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

struct Adaptive<'a, I: Integrand + ?Sized> {
    f: &'a I,
    g: &'a Gauss1d,
    max_depth: usize,
    abs_tol: f64,
}

impl<I: Integrand + ?Sized> Adaptive<'_, I> {
    /// Refines `cell` of `tri` until children and parent agree.
    fn refine(
        &self,
        tri: &MappedTriangle,
        cell: &Rect,
        estimate: &[Complex64],
        depth: usize,
        out: &mut [Complex64],
        report: &mut QuadReport,
    ) -> Result<()> {
        let n = estimate.len();
        let quads = cell.quadrants();
        let mut children = vec![vec![Complex64::new(0.0, 0.0); n]; 4];
        let mut sum = vec![Complex64::new(0.0, 0.0); n];
        for (q, child) in quads.iter().zip(children.iter_mut()) {
            report.evaluations += tri.integrate(self.f, q, self.g, child)?;
            for (s, c) in sum.iter_mut().zip(child.iter()) {
                *s += c;
            }
        }
        report.depth = report.depth.max(depth + 1);
        let err = max_abs_diff(&sum, estimate);
        if err <= self.abs_tol {
            for (o, s) in out.iter_mut().zip(&sum) {
                *o += s;
            }
            return Ok(());
        }
        if depth + 1 >= self.max_depth {
            report.converged = false;
            for (o, s) in out.iter_mut().zip(&sum) {
                *o += s;
            }
            return Ok(());
        }
        for (q, child) in quads.iter().zip(children.iter()) {
            self.refine(tri, q, child, depth + 1, out, report)?;
        }
        Ok(())
    }
}

/// Adds `∫_rect f ds dt` for an integrand singular at the parameter point
/// `apex` (inside or on the boundary of `rect`).
///
/// The rectangle is split into a fan of triangles meeting at the apex; each
/// is mapped from the unit square with the apex edge collapsed, so the
/// Jacobian cancels a `1/r` singularity. Mapped cells are refined until the
/// change between levels drops below `policy.tolerance` relative to the
/// magnitude of the whole integral or to [`Integrand::absolute_scale`].
pub fn integrate_singular<I: Integrand + ?Sized>(
    f: &I,
    rect: &Rect,
    apex: (f64, f64),
    policy: &SubdivisionPolicy,
    out: &mut [Complex64],
) -> Result<QuadReport> {
    let g = gauss_legendre(policy.singular_order)?;
    let (s, t) = rect.clamp(apex.0, apex.1);
    let corners = [
        (rect.s0, rect.t0),
        (rect.s1, rect.t0),
        (rect.s1, rect.t1),
        (rect.s0, rect.t1),
    ];
    let area = rect.area();
    let triangles: Vec<MappedTriangle> = (0..4)
        .map(|i| MappedTriangle::new((s, t), corners[i], corners[(i + 1) % 4]))
        .filter(|tri| tri.det > 1e-14 * area)
        .collect();
    let n = f.len();
    let unit = Rect::unit();
    let mut report = QuadReport::ok();
    let mut coarse = vec![vec![Complex64::new(0.0, 0.0); n]; triangles.len()];
    let mut total = vec![Complex64::new(0.0, 0.0); n];
    for (tri, c) in triangles.iter().zip(coarse.iter_mut()) {
        report.evaluations += tri.integrate(f, &unit, g, c)?;
        for (t, v) in total.iter_mut().zip(c.iter()) {
            *t += v;
        }
    }
    let adaptive = Adaptive {
        f,
        g,
        max_depth: policy.max_depth,
        abs_tol: policy.tolerance * max_abs(&total).max(f.absolute_scale()).max(f64::MIN_POSITIVE),
    };
    for (tri, c) in triangles.iter().zip(coarse.iter()) {
        adaptive.refine(tri, &unit, c, 0, out, &mut report)?;
    }
    if !report.converged {
        log::warn!(
            "singular quadrature at ({s}, {t}) did not converge within depth {}",
            policy.max_depth
        );
    }
    Ok(report)
}

/// Adds `∫_rect f ds dt` for an integrand that is nearly singular because the
/// target point is close to the surface.
///
/// A quadtree splits cells while `near.ratio(cell) > policy.distance_ratio`
/// and the depth is below `policy.max_depth`; leaves use the base Gauss rule.
/// Leaves that still violate the ratio at maximum depth are integrated with
/// the triangle fan around their nearest parameter point.
pub fn integrate_near_singular<I: Integrand + ?Sized, N: NearField + ?Sized>(
    f: &I,
    rect: &Rect,
    near: &N,
    policy: &SubdivisionPolicy,
    out: &mut [Complex64],
) -> Result<QuadReport> {
    let rule = gauss_rule(policy.base_order)?;
    let mut report = QuadReport::ok();
    near_recursive(f, rect, near, policy, &rule, 0, out, &mut report)?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn near_recursive<I: Integrand + ?Sized, N: NearField + ?Sized>(
    f: &I,
    rect: &Rect,
    near: &N,
    policy: &SubdivisionPolicy,
    rule: &QuadRule,
    depth: usize,
    out: &mut [Complex64],
    report: &mut QuadReport,
) -> Result<()> {
    report.depth = report.depth.max(depth);
    let ratio = near.ratio(rect);
    if ratio <= policy.distance_ratio {
        report.evaluations += rule.weights.len();
        return integrate_rect(f, rect, rule, out);
    }
    if depth >= policy.max_depth {
        let apex = near.nearest(rect);
        let sub = integrate_singular(f, rect, apex, policy, out)?;
        report.merge(sub);
        return Ok(());
    }
    for q in rect.quadrants() {
        near_recursive(f, &q, near, policy, rule, depth + 1, out, report)?;
    }
    Ok(())
}

/// Distance ratio and nearest point of a patch cell seen from a 3D point,
/// estimated from a 3x3 sample of the cell.
pub struct PatchNearField<'a> {
    pub patch: &'a NurbsPatch,
    pub target: crate::geometry::Point3,
}

impl PatchNearField<'_> {
    fn samples(&self, rect: &Rect) -> [(f64, f64, crate::geometry::Point3); 9] {
        let mut out = [(0.0, 0.0, crate::geometry::Point3::zeros()); 9];
        for i in 0..3 {
            for j in 0..3 {
                let s = rect.s0 + 0.5 * i as f64 * (rect.s1 - rect.s0);
                let t = rect.t0 + 0.5 * j as f64 * (rect.t1 - rect.t0);
                out[i * 3 + j] = (s, t, self.patch.eval_basis_unchecked(s, t).point);
            }
        }
        out
    }
}

impl NearField for PatchNearField<'_> {
    fn ratio(&self, rect: &Rect) -> f64 {
        let samples = self.samples(rect);
        let center = samples.iter().map(|p| p.2).sum::<crate::geometry::Point3>() / 9.0;
        let radius = samples.iter().map(|p| (p.2 - center).norm()).fold(0.0, f64::max);
        let dist = (self.target - center).norm() - radius;
        if dist <= 0.0 {
            f64::INFINITY
        } else {
            2.0 * radius / dist
        }
    }

    fn nearest(&self, rect: &Rect) -> (f64, f64) {
        let samples = self.samples(rect);
        let best = samples
            .iter()
            .min_by(|a, b| {
                (a.2 - self.target)
                    .norm_squared()
                    .total_cmp(&(b.2 - self.target).norm_squared())
            })
            .unwrap();
        closest_point_in_rect(self.patch, &self.target, rect, (best.0, best.1)).0
    }
}

/// Gauss–Newton projection of `x` onto the patch, restricted to `rect`.
/// Returns the parameter point and the distance.
pub fn closest_point_in_rect(
    patch: &NurbsPatch,
    x: &crate::geometry::Point3,
    rect: &Rect,
    start: (f64, f64),
) -> ((f64, f64), f64) {
    let (mut s, mut t) = rect.clamp(start.0, start.1);
    for _ in 0..30 {
        let b = patch.eval_basis_unchecked(s, t);
        let d = b.point - x;
        let (a11, a12, a22) = (
            b.tangent_s.norm_squared(),
            b.tangent_s.dot(&b.tangent_t),
            b.tangent_t.norm_squared(),
        );
        let (r1, r2) = (b.tangent_s.dot(&d), b.tangent_t.dot(&d));
        let det = a11 * a22 - a12 * a12;
        if !(det.abs() > 0.0) {
            break;
        }
        let ds = (a22 * r1 - a12 * r2) / det;
        let dt = (a11 * r2 - a12 * r1) / det;
        let (ns, nt) = rect.clamp(s - ds, t - dt);
        let step = (ns - s).abs() + (nt - t).abs();
        s = ns;
        t = nt;
        if step < 1e-15 {
            break;
        }
    }
    let dist = (patch.eval_basis_unchecked(s, t).point - x).norm();
    ((s, t), dist)
}

/// `∫ f(frame) dS` over a parameter rectangle of a patch with a fixed rule.
pub fn integrate_surface_regular<F>(patch: &NurbsPatch, rect: &Rect, rule: &QuadRule, f: F) -> Result<Complex64>
where
    F: Fn(&SurfaceFrame) -> Complex64,
{
    let integrand = SurfaceIntegrand { patch, f: &f };
    let mut out = [Complex64::new(0.0, 0.0)];
    integrate_rect(&integrand, rect, rule, &mut out)?;
    Ok(out[0])
}

/// `∫ f(frame) dS` over a patch rectangle for an integrand singular at the
/// parameter point `apex`.
pub fn integrate_surface_singular<F>(
    patch: &NurbsPatch,
    rect: &Rect,
    apex: (f64, f64),
    policy: &SubdivisionPolicy,
    f: F,
) -> Result<(Complex64, QuadReport)>
where
    F: Fn(&SurfaceFrame) -> Complex64,
{
    let integrand = SurfaceIntegrand { patch, f: &f };
    let mut out = [Complex64::new(0.0, 0.0)];
    let report = integrate_singular(&integrand, rect, apex, policy, &mut out)?;
    Ok((out[0], report))
}

/// `∫ f(frame) dS` over a patch rectangle for a target point `x` near the
/// surface.
pub fn integrate_surface_near<F>(
    patch: &NurbsPatch,
    rect: &Rect,
    x: &crate::geometry::Point3,
    policy: &SubdivisionPolicy,
    f: F,
) -> Result<(Complex64, QuadReport)>
where
    F: Fn(&SurfaceFrame) -> Complex64,
{
    let integrand = SurfaceIntegrand { patch, f: &f };
    let near = PatchNearField { patch, target: *x };
    let mut out = [Complex64::new(0.0, 0.0)];
    let report = integrate_near_singular(&integrand, rect, &near, policy, &mut out)?;
    Ok((out[0], report))
}

struct SurfaceIntegrand<'a, F> {
    patch: &'a NurbsPatch,
    f: &'a F,
}

impl<F: Fn(&SurfaceFrame) -> Complex64> Integrand for SurfaceIntegrand<'_, F> {
    fn len(&self) -> usize {
        1
    }

    fn accumulate(&self, s: f64, t: f64, weight: f64, acc: &mut [Complex64]) -> Result<()> {
        let frame = self
            .patch
            .eval_basis_unchecked(s, t)
            .frame()
            .ok_or(Error::DegenerateGeometry { s, t })?;
        acc[0] += (self.f)(&frame) * (frame.jacobian * weight);
        Ok(())
    }
}
