//! B-spline and NURBS machinery: knot vectors, Cox–de Boor basis evaluation
//! with derivatives, Greville abscissae, rational tensor-product surfaces and
//! knot insertion in homogeneous coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Vec3};

/// Largest supported polynomial degree per parameter direction.
pub const MAX_DEGREE: usize = 6;
pub(crate) const MAX_ORDER: usize = MAX_DEGREE + 1;
pub(crate) const MAX_LOCAL: usize = MAX_ORDER * MAX_ORDER;

/// Parameters within this distance outside `[0, 1]` are snapped to the end.
pub const PARAM_TOL: f64 = 1e-14;

pub(crate) fn clamp_param(u: f64) -> Result<f64> {
    if !(-PARAM_TOL..=1.0 + PARAM_TOL).contains(&u) || u.is_nan() {
        return Err(Error::invalid(format!("parameter {u} outside [0, 1]")));
    }
    Ok(u.clamp(0.0, 1.0))
}

/// Clamped knot vector on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

/// The `p + 1` non-zero basis functions at one parameter and their first two
/// derivatives. `ders[d][j]` belongs to function `span - p + j`.
#[derive(Clone, Copy, Debug)]
pub struct LocalBasis {
    pub span: usize,
    pub order: usize,
    pub ders: [[f64; MAX_ORDER]; 3],
}

impl LocalBasis {
    pub fn first_index(&self) -> usize {
        self.span + 1 - self.order
    }
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::invalid(format!(
                "degree {degree} exceeds supported maximum {MAX_DEGREE}"
            )));
        }
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::invalid(format!(
                "{} knots cannot hold a clamped degree-{degree} vector",
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("knots must be non-decreasing"));
        }
        let m = knots.len();
        if knots[..=degree].iter().any(|&k| k != 0.0) || knots[m - degree - 1..].iter().any(|&k| k != 1.0) {
            return Err(Error::invalid(
                "knot vector must be clamped: first and last p+1 knots equal 0 and 1",
            ));
        }
        let kv = KnotVector { degree, knots };
        for &u in &kv.knots[degree + 1..m - degree - 1] {
            if kv.multiplicity(u) > degree {
                return Err(Error::invalid(format!(
                    "interior knot {u} has multiplicity above the degree"
                )));
            }
        }
        Ok(kv)
    }

    /// Clamped vector with uniformly spaced interior knots `(i - p)/(n - p)`.
    pub fn clamped_uniform(degree: usize, basis_count: usize) -> Result<Self> {
        if basis_count < degree + 1 {
            return Err(Error::invalid(format!(
                "basis count {basis_count} is below degree + 1 = {}",
                degree + 1
            )));
        }
        let n = basis_count;
        let p = degree;
        let knots = (0..=n + p)
            .map(|i| {
                if i <= p {
                    0.0
                } else if i < n {
                    (i - p) as f64 / (n - p) as f64
                } else {
                    1.0
                }
            })
            .collect();
        KnotVector::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn basis_count(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn multiplicity(&self, u: f64) -> usize {
        self.knots.iter().filter(|&&k| k == u).count()
    }

    /// Index `i` with `knots[i] <= u < knots[i + 1]`; `u = 1` maps to the last
    /// non-empty span.
    pub fn find_span(&self, u: f64) -> usize {
        let n = self.basis_count();
        let p = self.degree;
        if u >= self.knots[n] {
            return n - 1;
        }
        if u <= self.knots[p] {
            return p;
        }
        // first index with knots[i] > u, minus one
        let idx = self.knots.partition_point(|&k| k <= u);
        idx - 1
    }

    /// Non-empty knot spans as `(span index, start, end)`.
    pub fn spans(&self) -> Vec<(usize, f64, f64)> {
        let n = self.basis_count();
        (self.degree..n)
            .filter(|&i| self.knots[i + 1] > self.knots[i])
            .map(|i| (i, self.knots[i], self.knots[i + 1]))
            .collect()
    }

    /// Basis values and up to two derivatives in a given span.
    ///
    /// `u` must lie in the closed span `[knots[span], knots[span + 1]]`.
    pub fn local_basis_in_span(&self, span: usize, u: f64) -> LocalBasis {
        let p = self.degree;
        let knots = &self.knots;
        let mut ndu = [[0.0f64; MAX_ORDER]; MAX_ORDER];
        let mut left = [0.0f64; MAX_ORDER];
        let mut right = [0.0f64; MAX_ORDER];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - knots[span + 1 - j];
            right[j] = knots[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                // lower triangle holds knot differences
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = [[0.0f64; MAX_ORDER]; 3];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let nders = p.min(2);
        let mut a = [[0.0f64; MAX_ORDER]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0] = [0.0; MAX_ORDER];
            a[0][0] = 1.0;
            for k in 1..=nders {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize) - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=nders {
            for v in ders[k].iter_mut().take(p + 1) {
                *v *= fac;
            }
            fac *= (p - k) as f64;
        }
        LocalBasis {
            span,
            order: p + 1,
            ders,
        }
    }

    pub fn local_basis(&self, u: f64) -> LocalBasis {
        self.local_basis_in_span(self.find_span(u), u)
    }

    /// Value, first and second derivative of basis function `k` at `u`.
    pub fn basis(&self, k: usize, u: f64) -> Result<(f64, f64, f64)> {
        if k >= self.basis_count() {
            return Err(Error::invalid(format!(
                "basis index {k} out of range 0..{}",
                self.basis_count()
            )));
        }
        let u = clamp_param(u)?;
        let lb = self.local_basis(u);
        let first = lb.first_index();
        if k < first || k > lb.span {
            return Ok((0.0, 0.0, 0.0));
        }
        let j = k - first;
        Ok((lb.ders[0][j], lb.ders[1][j], lb.ders[2][j]))
    }

    /// Knot averages `(knots[k+1] + ... + knots[k+p]) / p`, one per basis function.
    pub fn greville(&self) -> Result<Vec<f64>> {
        let p = self.degree;
        if p == 0 {
            return Err(Error::invalid("Greville abscissae are undefined for degree 0"));
        }
        Ok((0..self.basis_count())
            .map(|k| self.knots[k + 1..=k + p].iter().sum::<f64>() / p as f64)
            .collect())
    }

    /// Inserts `u` once. Returns the new vector and the matrix `A` (rows of
    /// `(old index, coefficient)`) with `new_points = A * old_points` in
    /// homogeneous coordinates.
    pub fn insert(&self, u: f64) -> Result<(KnotVector, Vec<Vec<(usize, f64)>>)> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::invalid(format!(
                "inserted knot {u} must lie strictly inside (0, 1)"
            )));
        }
        let p = self.degree;
        let mult = self.multiplicity(u);
        if mult + 1 > p {
            return Err(Error::invalid(format!(
                "inserting {u} would raise its multiplicity to {} above degree {p}",
                mult + 1
            )));
        }
        let k = self.find_span(u);
        let n = self.basis_count();
        let mut rows = Vec::with_capacity(n + 1);
        for i in 0..=n {
            if i + p <= k {
                rows.push(vec![(i, 1.0)]);
            } else if i + mult <= k {
                let alpha = (u - self.knots[i]) / (self.knots[i + p] - self.knots[i]);
                rows.push(vec![(i, alpha), (i - 1, 1.0 - alpha)]);
            } else {
                rows.push(vec![(i - 1, 1.0)]);
            }
        }
        let mut knots = self.knots.clone();
        knots.insert(k + 1, u);
        Ok((KnotVector { degree: p, knots }, rows))
    }

    /// Splits every non-empty span into `parts` equal pieces. Returns the
    /// refined vector and the dense `(n_new x n_old)` homogeneous map.
    pub fn subdivide(&self, parts: usize) -> Result<(KnotVector, Vec<Vec<f64>>)> {
        if parts == 0 {
            return Err(Error::invalid("subdivision count must be at least 1"));
        }
        let n = self.basis_count();
        let mut map: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                row[i] = 1.0;
                row
            })
            .collect();
        let mut kv = self.clone();
        let new_knots: Vec<f64> = self
            .spans()
            .iter()
            .flat_map(|&(_, a, b)| (1..parts).map(move |j| a + (b - a) * j as f64 / parts as f64))
            .collect();
        for u in new_knots {
            let (next, rows) = kv.insert(u)?;
            map = rows
                .iter()
                .map(|row| {
                    let mut out = vec![0.0; n];
                    for &(i, c) in row {
                        for (o, m) in out.iter_mut().zip(&map[i]) {
                            *o += c * m;
                        }
                    }
                    out
                })
                .collect();
            kv = next;
        }
        Ok((kv, map))
    }
}

/// Parameter direction of a patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    S,
    T,
}

/// Point, tangents and unit normal of a surface at one parameter pair.
#[derive(Clone, Copy, Debug)]
pub struct SurfaceFrame {
    pub point: Point3,
    pub tangent_s: Vec3,
    pub tangent_t: Vec3,
    pub normal: Vec3,
    pub jacobian: f64,
}

/// Rational basis `R_kl = w_kl N_kl / W` of all functions that are non-zero
/// at one point, with first derivatives and the resulting geometry.
///
/// Entry `a * order_t + b` belongs to local control point
/// `(span_s - p_s + a, span_t - p_t + b)`.
#[derive(Clone, Copy, Debug)]
pub struct RationalBasis {
    pub span_s: usize,
    pub span_t: usize,
    pub order_s: usize,
    pub order_t: usize,
    pub r: [f64; MAX_LOCAL],
    pub r_s: [f64; MAX_LOCAL],
    pub r_t: [f64; MAX_LOCAL],
    pub point: Point3,
    pub tangent_s: Vec3,
    pub tangent_t: Vec3,
}

impl RationalBasis {
    pub fn len(&self) -> usize {
        self.order_s * self.order_t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Patch-local flat control point index of local entry `j`.
    pub fn cp_index(&self, j: usize, n_t: usize) -> usize {
        let a = j / self.order_t;
        let b = j % self.order_t;
        (self.span_s + 1 - self.order_s + a) * n_t + (self.span_t + 1 - self.order_t + b)
    }

    /// Frame of the evaluated point; `None` if the tangents are parallel.
    pub fn frame(&self) -> Option<SurfaceFrame> {
        let c = self.tangent_s.cross(&self.tangent_t);
        let jac = c.norm();
        if !(jac > 0.0) || !jac.is_finite() {
            return None;
        }
        Some(SurfaceFrame {
            point: self.point,
            tangent_s: self.tangent_s,
            tangent_t: self.tangent_t,
            normal: c / jac,
            jacobian: jac,
        })
    }
}

/// One tensor-product NURBS surface.
#[derive(Clone, Debug, PartialEq)]
pub struct NurbsPatch {
    knots_s: KnotVector,
    knots_t: KnotVector,
    /// Row-major `n_s x n_t`; entry `k * n_t + l` is `C_kl`.
    control_points: Vec<Point3>,
    weights: Vec<f64>,
}

impl NurbsPatch {
    pub fn new(
        knots_s: KnotVector,
        knots_t: KnotVector,
        control_points: Vec<Point3>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = knots_s.basis_count() * knots_t.basis_count();
        if control_points.len() != n || weights.len() != n {
            return Err(Error::invalid(format!(
                "control grid has {} points and {} weights; knot vectors need {n}",
                control_points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid(format!("weight {w} is not strictly positive")));
        }
        if control_points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("control points must be finite"));
        }
        Ok(NurbsPatch {
            knots_s,
            knots_t,
            control_points,
            weights,
        })
    }

    pub fn knots_s(&self) -> &KnotVector {
        &self.knots_s
    }

    pub fn knots_t(&self) -> &KnotVector {
        &self.knots_t
    }

    pub fn n_s(&self) -> usize {
        self.knots_s.basis_count()
    }

    pub fn n_t(&self) -> usize {
        self.knots_t.basis_count()
    }

    pub fn control_points(&self) -> &[Point3] {
        &self.control_points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cp(&self, k: usize, l: usize) -> Point3 {
        self.control_points[k * self.n_t() + l]
    }

    /// Same knots and weights with a new control net.
    pub fn with_control_points(&self, control_points: Vec<Point3>) -> Result<Self> {
        NurbsPatch::new(
            self.knots_s.clone(),
            self.knots_t.clone(),
            control_points,
            self.weights.clone(),
        )
    }

    /// Rational basis in given spans; `(s, t)` must lie in the closed span box.
    pub fn eval_basis_in_span(&self, span_s: usize, span_t: usize, s: f64, t: f64) -> RationalBasis {
        let bs = self.knots_s.local_basis_in_span(span_s, s);
        let bt = self.knots_t.local_basis_in_span(span_t, t);
        self.rational(&bs, &bt)
    }

    pub(crate) fn eval_basis_unchecked(&self, s: f64, t: f64) -> RationalBasis {
        let bs = self.knots_s.local_basis(s);
        let bt = self.knots_t.local_basis(t);
        self.rational(&bs, &bt)
    }

    pub fn eval_basis(&self, s: f64, t: f64) -> Result<RationalBasis> {
        Ok(self.eval_basis_unchecked(clamp_param(s)?, clamp_param(t)?))
    }

    fn rational(&self, bs: &LocalBasis, bt: &LocalBasis) -> RationalBasis {
        let n_t = self.n_t();
        let (os, ot) = (bs.order, bt.order);
        let (fs, ft) = (bs.first_index(), bt.first_index());
        let mut out = RationalBasis {
            span_s: bs.span,
            span_t: bt.span,
            order_s: os,
            order_t: ot,
            r: [0.0; MAX_LOCAL],
            r_s: [0.0; MAX_LOCAL],
            r_t: [0.0; MAX_LOCAL],
            point: Point3::zeros(),
            tangent_s: Vec3::zeros(),
            tangent_t: Vec3::zeros(),
        };
        let (mut w, mut w_s, mut w_t) = (0.0, 0.0, 0.0);
        for a in 0..os {
            for b in 0..ot {
                let j = a * ot + b;
                let wk = self.weights[(fs + a) * n_t + ft + b];
                let n = wk * bs.ders[0][a] * bt.ders[0][b];
                let ns = wk * bs.ders[1][a] * bt.ders[0][b];
                let nt = wk * bs.ders[0][a] * bt.ders[1][b];
                out.r[j] = n;
                out.r_s[j] = ns;
                out.r_t[j] = nt;
                w += n;
                w_s += ns;
                w_t += nt;
            }
        }
        let inv = 1.0 / w;
        let inv2 = inv * inv;
        for a in 0..os {
            for b in 0..ot {
                let j = a * ot + b;
                let n = out.r[j];
                out.r[j] = n * inv;
                out.r_s[j] = (out.r_s[j] * w - n * w_s) * inv2;
                out.r_t[j] = (out.r_t[j] * w - n * w_t) * inv2;
                let c = &self.control_points[(fs + a) * n_t + ft + b];
                out.point += c * out.r[j];
                out.tangent_s += c * out.r_s[j];
                out.tangent_t += c * out.r_t[j];
            }
        }
        out
    }

    pub fn point(&self, s: f64, t: f64) -> Result<Point3> {
        Ok(self.eval_basis(s, t)?.point)
    }

    pub fn eval_surface(&self, s: f64, t: f64) -> Result<SurfaceFrame> {
        self.eval_basis(s, t)?.frame().ok_or(Error::DegenerateGeometry { s, t })
    }

    /// Second parametric derivatives `(y_ss, y_st, y_tt)`.
    pub fn second_derivatives(&self, s: f64, t: f64) -> Result<[Vec3; 3]> {
        let (s, t) = (clamp_param(s)?, clamp_param(t)?);
        let bs = self.knots_s.local_basis(s);
        let bt = self.knots_t.local_basis(t);
        let n_t = self.n_t();
        let (fs, ft) = (bs.first_index(), bt.first_index());
        // homogeneous numerator A and denominator W, derivatives indexed (ds, dt)
        let mut a = [[Vec3::zeros(); 3]; 3];
        let mut w = [[0.0f64; 3]; 3];
        for i in 0..bs.order {
            for j in 0..bt.order {
                let idx = (fs + i) * n_t + ft + j;
                let wk = self.weights[idx];
                let c = self.control_points[idx];
                for ds in 0..3 {
                    for dt in 0..3 - ds {
                        let b = wk * bs.ders[ds][i] * bt.ders[dt][j];
                        w[ds][dt] += b;
                        a[ds][dt] += c * b;
                    }
                }
            }
        }
        let y = a[0][0] / w[0][0];
        let ys = (a[1][0] - y * w[1][0]) / w[0][0];
        let yt = (a[0][1] - y * w[0][1]) / w[0][0];
        let yss = (a[2][0] - ys * (2.0 * w[1][0]) - y * w[2][0]) / w[0][0];
        let ytt = (a[0][2] - yt * (2.0 * w[0][1]) - y * w[0][2]) / w[0][0];
        let yst = (a[1][1] - ys * w[0][1] - yt * w[1][0] - y * w[1][1]) / w[0][0];
        Ok([yss, yst, ytt])
    }

    /// Non-empty parameter rectangles `(span_s, span_t, [s0, s1], [t0, t1])`.
    pub fn bezier_cells(&self) -> Vec<(usize, usize, [f64; 2], [f64; 2])> {
        let ss = self.knots_s.spans();
        let ts = self.knots_t.spans();
        let mut cells = Vec::with_capacity(ss.len() * ts.len());
        for &(is, s0, s1) in &ss {
            for &(it, t0, t1) in &ts {
                cells.push((is, it, [s0, s1], [t0, t1]));
            }
        }
        cells
    }

    /// Inserts one knot; the surface is geometrically unchanged.
    pub fn insert_knot(&self, direction: Direction, u: f64) -> Result<NurbsPatch> {
        let (kv, rows) = match direction {
            Direction::S => self.knots_s.insert(u)?,
            Direction::T => self.knots_t.insert(u)?,
        };
        let dense: Vec<Vec<f64>> = rows
            .iter()
            .map(|row| {
                let mut d = vec![
                    0.0;
                    match direction {
                        Direction::S => self.n_s(),
                        Direction::T => self.n_t(),
                    }
                ];
                for &(i, c) in row {
                    d[i] = c;
                }
                d
            })
            .collect();
        let ident = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect()
        };
        let refinement = match direction {
            Direction::S => PatchRefinement {
                knots_s: kv,
                knots_t: self.knots_t.clone(),
                map_s: dense,
                map_t: ident(self.n_t()),
            },
            Direction::T => PatchRefinement {
                knots_s: self.knots_s.clone(),
                knots_t: kv,
                map_s: ident(self.n_s()),
                map_t: dense,
            },
        };
        Ok(refinement.apply(self)?.0)
    }

    /// Splits every span into `parts_s x parts_t` pieces.
    pub fn subdivide(&self, parts_s: usize, parts_t: usize) -> Result<(NurbsPatch, PatchRefinement)> {
        let (knots_s, map_s) = self.knots_s.subdivide(parts_s)?;
        let (knots_t, map_t) = self.knots_t.subdivide(parts_t)?;
        let refinement = PatchRefinement {
            knots_s,
            knots_t,
            map_s,
            map_t,
        };
        let (patch, _) = refinement.apply(self)?;
        Ok((patch, refinement))
    }
}

/// Tensor-product knot-insertion operator of one patch, acting on
/// homogeneous control points.
#[derive(Clone, Debug)]
pub struct PatchRefinement {
    pub knots_s: KnotVector,
    pub knots_t: KnotVector,
    pub map_s: Vec<Vec<f64>>,
    pub map_t: Vec<Vec<f64>>,
}

impl PatchRefinement {
    /// Refined patch plus, for every refined control point, the Cartesian
    /// coefficients `(coarse local index, c)` with `C' = sum c * C`.
    /// The coefficients depend only on knots and weights.
    pub fn apply(&self, patch: &NurbsPatch) -> Result<(NurbsPatch, Vec<Vec<(usize, f64)>>)> {
        let (ns, nt) = (patch.n_s(), patch.n_t());
        let (ns2, nt2) = (self.map_s.len(), self.map_t.len());
        let mut cps = Vec::with_capacity(ns2 * nt2);
        let mut weights = Vec::with_capacity(ns2 * nt2);
        let mut coeffs = Vec::with_capacity(ns2 * nt2);
        for k2 in 0..ns2 {
            for l2 in 0..nt2 {
                let mut terms = Vec::new();
                let mut w = 0.0;
                for k in 0..ns {
                    let a = self.map_s[k2][k];
                    if a == 0.0 {
                        continue;
                    }
                    for l in 0..nt {
                        let b = self.map_t[l2][l];
                        if b == 0.0 {
                            continue;
                        }
                        let c = a * b * patch.weights[k * nt + l];
                        w += c;
                        terms.push((k * nt + l, c));
                    }
                }
                let mut p = Point3::zeros();
                for t in terms.iter_mut() {
                    t.1 /= w;
                    p += patch.control_points[t.0] * t.1;
                }
                cps.push(p);
                weights.push(w);
                coeffs.push(terms);
            }
        }
        let refined = NurbsPatch::new(self.knots_s.clone(), self.knots_t.clone(), cps, weights)?;
        Ok((refined, coeffs))
    }
}
