//! Multi-patch scattering models: coincident control points are unified into
//! global unknowns, Greville collocation points are merged across patch
//! boundaries, and design vectors move the global control net.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bounding_box, Point3};
use crate::nurbs::NurbsPatch;

/// Relative coincidence tolerance (times the bounding-box diagonal).
pub const DEFAULT_RELATIVE_TOL: f64 = 1e-8;

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root so labels follow first appearance
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Groups points closer than `tol` (transitively). Labels are numbered in
/// order of first appearance. A group whose members spread beyond
/// `10 * tol` from its first member is rejected as ambiguous.
pub(crate) fn cluster_points(points: &[Point3], tol: f64) -> Result<(Vec<usize>, usize)> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("coincidence tolerance {tol} must be positive")));
    }
    let key = |p: &Point3| {
        (
            (p.x / tol).floor() as i64,
            (p.y / tol).floor() as i64,
            (p.z / tol).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let mut uf = UnionFind::new(points.len());
    for (i, p) in points.iter().enumerate() {
        let (a, b, c) = key(p);
        for da in -1..=1 {
            for db in -1..=1 {
                for dc in -1..=1 {
                    if let Some(list) = grid.get(&(a + da, b + db, c + dc)) {
                        for &j in list {
                            if j > i && (points[j] - p).norm() <= tol {
                                uf.union(i, j);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut label_of_root = HashMap::new();
    let mut labels = Vec::with_capacity(points.len());
    let mut first_member = Vec::new();
    for i in 0..points.len() {
        let root = uf.find(i);
        let next = label_of_root.len();
        let label = *label_of_root.entry(root).or_insert(next);
        if label == first_member.len() {
            first_member.push(i);
        }
        let d = (points[i] - points[first_member[label]]).norm();
        if d > 10.0 * tol {
            return Err(Error::AmbiguousGeometry(format!(
                "coincidence chain joins points {} and {i} that are {d:e} apart (tolerance {tol:e})",
                first_member[label]
            )));
        }
        labels.push(label);
    }
    let count = first_member.len();
    Ok((labels, count))
}

/// Patches plus the map from patch-local control points to global unknowns.
#[derive(Clone, Debug)]
pub struct ScatteringModel {
    patches: Vec<NurbsPatch>,
    /// `global_index[patch][k * n_t + l]` is the global unknown `ν`.
    global_index: Vec<Vec<usize>>,
    global_cp: Vec<Point3>,
    coincidence_tol: f64,
}

/// One merged collocation point and every patch parameter at which it occurs.
#[derive(Clone, Debug)]
pub struct CollocationPoint {
    pub patch: usize,
    pub s: f64,
    pub t: f64,
    pub position: Point3,
    /// `(patch, s, t)` of every Greville point merged into this one.
    pub appearances: Vec<(usize, f64, f64)>,
}

/// `N` distinct collocation points, indexed like the rows of the system.
#[derive(Clone, Debug)]
pub struct CollocationSet {
    pub points: Vec<CollocationPoint>,
}

impl CollocationSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Linear map from coarse global control points to refined ones:
/// `C'_i = sum_j c_ij C_j`.
#[derive(Clone, Debug)]
pub struct RefinementMap {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub n_coarse: usize,
}

impl RefinementMap {
    pub fn identity(n: usize) -> Self {
        RefinementMap {
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
            n_coarse: n,
        }
    }

    pub fn apply(&self, coarse: &[Point3]) -> Vec<Point3> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, c)| coarse[j] * c).sum())
            .collect()
    }

    /// Transpose action: pulls refined per-CP vectors back to coarse CPs.
    pub fn pull_back(&self, refined: &[crate::geometry::Vec3]) -> Vec<crate::geometry::Vec3> {
        let mut out = vec![crate::geometry::Vec3::zeros(); self.n_coarse];
        for (row, v) in self.rows.iter().zip(refined) {
            for &(j, c) in row {
                out[j] += v * c;
            }
        }
        out
    }
}

/// Box-constrained design over all `3N` coordinates of the global net.
/// Coordinate `3 ν + axis` belongs to control point `ν`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub free_mask: Vec<bool>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub initial: Vec<f64>,
}

impl DesignSpace {
    /// Every coordinate fixed at its current value.
    pub fn fixed(model: &ScatteringModel) -> Self {
        let initial: Vec<f64> = model.global_cps().iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        DesignSpace {
            free_mask: vec![false; initial.len()],
            lower: initial.clone(),
            upper: initial.clone(),
            initial,
        }
    }

    /// Frees one coordinate within `[initial + lo, initial + hi]`.
    pub fn free(&mut self, cp: usize, axis: usize, lo: f64, hi: f64) -> Result<()> {
        if axis > 2 {
            return Err(Error::invalid(format!("axis {axis} is not 0, 1 or 2")));
        }
        let i = 3 * cp + axis;
        if i >= self.initial.len() {
            return Err(Error::invalid(format!("control point {cp} out of range")));
        }
        if !(lo <= 0.0 && hi >= 0.0) {
            return Err(Error::invalid(format!("offset bounds [{lo}, {hi}] must contain 0")));
        }
        self.free_mask[i] = true;
        self.lower[i] = self.initial[i] + lo;
        self.upper[i] = self.initial[i] + hi;
        Ok(())
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.free_mask.len()).filter(|&i| self.free_mask[i]).collect()
    }

    pub fn n_free(&self) -> usize {
        self.free_mask.iter().filter(|&&f| f).count()
    }

    /// Full `3N` vector from free-coordinate values.
    pub fn expand(&self, reduced: &[f64]) -> Result<Vec<f64>> {
        let idx = self.free_indices();
        if reduced.len() != idx.len() {
            return Err(Error::invalid(format!(
                "design vector has {} entries, expected {}",
                reduced.len(),
                idx.len()
            )));
        }
        let mut x = self.initial.clone();
        for (&i, &v) in idx.iter().zip(reduced) {
            x[i] = v;
        }
        Ok(x)
    }

    pub fn reduce(&self, full: &[f64]) -> Vec<f64> {
        self.free_indices().iter().map(|&i| full[i]).collect()
    }

    pub fn reduced_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let idx = self.free_indices();
        (
            idx.iter().map(|&i| self.lower[i]).collect(),
            idx.iter().map(|&i| self.upper[i]).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.initial.len();
        if self.free_mask.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::invalid("design vectors have inconsistent lengths"));
        }
        for i in 0..n {
            if !(self.lower[i] <= self.initial[i] && self.initial[i] <= self.upper[i]) {
                return Err(Error::invalid(format!("initial coordinate {i} violates its bounds")));
            }
            if !self.free_mask[i] && (self.lower[i] != self.initial[i] || self.upper[i] != self.initial[i]) {
                return Err(Error::invalid(format!(
                    "fixed coordinate {i} must have lower = upper = initial"
                )));
            }
        }
        Ok(())
    }
}

impl ScatteringModel {
    /// Unifies coincident control points with the default tolerance.
    pub fn new(patches: Vec<NurbsPatch>) -> Result<Self> {
        let tol = Self::default_tolerance(&patches);
        Self::unify(patches, tol)
    }

    pub fn default_tolerance(patches: &[NurbsPatch]) -> f64 {
        let (lo, hi) = bounding_box(patches.iter().flat_map(|p| p.control_points()));
        let diag = (hi - lo).norm();
        if diag.is_finite() && diag > 0.0 {
            DEFAULT_RELATIVE_TOL * diag
        } else {
            DEFAULT_RELATIVE_TOL
        }
    }

    /// Merges local control points within `tol` into global unknowns.
    pub fn unify(patches: Vec<NurbsPatch>, tol: f64) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::invalid("a model needs at least one patch"));
        }
        let all: Vec<Point3> = patches
            .iter()
            .flat_map(|p| p.control_points().iter().copied())
            .collect();
        let (labels, count) = cluster_points(&all, tol)?;
        let mut global_cp = vec![Point3::zeros(); count];
        let mut seen = vec![false; count];
        let mut global_index = Vec::with_capacity(patches.len());
        let mut offset = 0;
        for p in &patches {
            let n = p.control_points().len();
            let idx = labels[offset..offset + n].to_vec();
            for (&g, cp) in idx.iter().zip(p.control_points()) {
                if !seen[g] {
                    seen[g] = true;
                    global_cp[g] = *cp;
                }
            }
            global_index.push(idx);
            offset += n;
        }
        let mut model = ScatteringModel {
            patches,
            global_index,
            global_cp,
            coincidence_tol: tol,
        };
        // snap local copies onto the representative so shared CPs are identical
        let cps = model.global_cp.clone();
        model.rebuild_patches(&cps)?;
        Ok(model)
    }

    fn rebuild_patches(&mut self, cps: &[Point3]) -> Result<()> {
        for (patch, idx) in self.patches.iter_mut().zip(&self.global_index) {
            let local: Vec<Point3> = idx.iter().map(|&g| cps[g]).collect();
            *patch = patch.with_control_points(local)?;
        }
        self.global_cp = cps.to_vec();
        Ok(())
    }

    pub fn patches(&self) -> &[NurbsPatch] {
        &self.patches
    }

    pub fn patch(&self, i: usize) -> &NurbsPatch {
        &self.patches[i]
    }

    pub fn global_index(&self, patch: usize) -> &[usize] {
        &self.global_index[patch]
    }

    pub fn global_of(&self, patch: usize, k: usize, l: usize) -> usize {
        self.global_index[patch][k * self.patches[patch].n_t() + l]
    }

    pub fn global_cps(&self) -> &[Point3] {
        &self.global_cp
    }

    pub fn n_unknowns(&self) -> usize {
        self.global_cp.len()
    }

    pub fn coincidence_tol(&self) -> f64 {
        self.coincidence_tol
    }

    pub fn bounding_box(&self) -> (Point3, Point3) {
        bounding_box(self.global_cp.iter())
    }

    /// Number of patches referencing each global control point.
    pub fn sharing_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_unknowns()];
        for idx in &self.global_index {
            let mut local: Vec<usize> = idx.clone();
            local.sort_unstable();
            local.dedup();
            for g in local {
                counts[g] += 1;
            }
        }
        counts
    }

    /// Same topology with the global control net replaced.
    pub fn with_global_cps(&self, cps: &[Point3]) -> Result<Self> {
        if cps.len() != self.n_unknowns() {
            return Err(Error::invalid(format!(
                "{} control points given, model has {}",
                cps.len(),
                self.n_unknowns()
            )));
        }
        let mut out = self.clone();
        out.rebuild_patches(cps)?;
        Ok(out)
    }

    /// Moves the global net to the full `3N` design vector `x`.
    pub fn apply_design(&self, design: &DesignSpace, x: &[f64]) -> Result<Self> {
        let n = 3 * self.n_unknowns();
        if x.len() != n || design.initial.len() != n {
            return Err(Error::invalid(format!(
                "design vector has {} entries, model needs {n}",
                x.len()
            )));
        }
        for i in 0..n {
            let slack = 1e-12 * (1.0 + design.upper[i].abs().max(design.lower[i].abs()));
            if x[i] < design.lower[i] - slack || x[i] > design.upper[i] + slack || !x[i].is_finite() {
                return Err(Error::invalid(format!(
                    "design coordinate {i} = {} outside [{}, {}]",
                    x[i], design.lower[i], design.upper[i]
                )));
            }
        }
        let cps: Vec<Point3> = x.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
        self.with_global_cps(&cps)
    }

    /// Greville tensor-product points of every patch, merged across patch
    /// boundaries with the coincidence tolerance.
    pub fn collocation_points(&self) -> Result<CollocationSet> {
        let mut raw = Vec::new();
        for (pi, patch) in self.patches.iter().enumerate() {
            let gs = patch.knots_s().greville()?;
            let gt = patch.knots_t().greville()?;
            for &s in &gs {
                for &t in &gt {
                    raw.push((pi, s, t, patch.point(s, t)?));
                }
            }
        }
        let positions: Vec<Point3> = raw.iter().map(|r| r.3).collect();
        let (labels, count) = cluster_points(&positions, self.coincidence_tol)?;
        if count != self.n_unknowns() {
            let (a, b) = self.offending_pair(&raw, &labels);
            return Err(Error::Topology {
                patch_a: a,
                patch_b: b,
                detail: format!("{count} distinct collocation points for {} unknowns", self.n_unknowns()),
            });
        }
        let mut points: Vec<Option<CollocationPoint>> = vec![None; count];
        for (r, &lab) in raw.iter().zip(&labels) {
            match &mut points[lab] {
                Some(cp) => cp.appearances.push((r.0, r.1, r.2)),
                slot @ None => {
                    *slot = Some(CollocationPoint {
                        patch: r.0,
                        s: r.1,
                        t: r.2,
                        position: r.3,
                        appearances: vec![(r.0, r.1, r.2)],
                    })
                }
            }
        }
        Ok(CollocationSet {
            points: points
                .into_iter()
                .map(|p| p.expect("every label has a point"))
                .collect(),
        })
    }

    /// First patch pair whose shared control points and shared collocation
    /// points disagree in number.
    fn offending_pair(&self, raw: &[(usize, f64, f64, Point3)], labels: &[usize]) -> (usize, usize) {
        let np = self.patches.len();
        let mut coll_sets: Vec<Vec<usize>> = vec![Vec::new(); np];
        for (r, &l) in raw.iter().zip(labels) {
            coll_sets[r.0].push(l);
        }
        let sets: Vec<std::collections::BTreeSet<usize>> =
            self.global_index.iter().map(|v| v.iter().copied().collect()).collect();
        let csets: Vec<std::collections::BTreeSet<usize>> =
            coll_sets.into_iter().map(|v| v.into_iter().collect()).collect();
        for a in 0..np {
            for b in a + 1..np {
                let shared_cp = sets[a].intersection(&sets[b]).count();
                let shared_coll = csets[a].intersection(&csets[b]).count();
                if shared_cp != shared_coll {
                    return (a, b);
                }
            }
        }
        (0, 0)
    }

    /// Knot-inserted analysis copy. `subdivisions[p] = (m_s, m_t)` splits every
    /// knot span of patch `p` into that many equal parts.
    pub fn refine_for_analysis(&self, subdivisions: &[(usize, usize)]) -> Result<(Self, RefinementMap)> {
        if subdivisions.len() != self.patches.len() {
            return Err(Error::invalid(format!(
                "{} subdivision entries for {} patches",
                subdivisions.len(),
                self.patches.len()
            )));
        }
        let mut refined = Vec::with_capacity(self.patches.len());
        let mut coeffs = Vec::with_capacity(self.patches.len());
        for (patch, &(ms, mt)) in self.patches.iter().zip(subdivisions) {
            let (p, r) = patch.subdivide(ms, mt)?;
            let (_, c) = r.apply(patch)?;
            refined.push(p);
            coeffs.push(c);
        }
        let model = ScatteringModel::unify(refined, self.coincidence_tol)?;
        let mut rows: Vec<Option<Vec<(usize, f64)>>> = vec![None; model.n_unknowns()];
        for (pi, idx) in model.global_index.iter().enumerate() {
            for (local, &g) in idx.iter().enumerate() {
                if rows[g].is_some() {
                    continue;
                }
                let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
                for &(coarse_local, c) in &coeffs[pi][local] {
                    *acc.entry(self.global_index[pi][coarse_local]).or_insert(0.0) += c;
                }
                rows[g] = Some(acc.into_iter().collect());
            }
        }
        let map = RefinementMap {
            rows: rows
                .into_iter()
                .map(|r| r.expect("every refined CP has a row"))
                .collect(),
            n_coarse: self.n_unknowns(),
        };
        Ok((model, map))
    }

    /// Refined model for a moved coarse net, reusing an existing map.
    pub fn refined_with(&self, map: &RefinementMap, coarse_cps: &[Point3]) -> Result<Self> {
        self.with_global_cps(&map.apply(coarse_cps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nurbs::KnotVector;

    fn square(origin: Point3, du: Point3, dv: Point3, n: usize, p: usize) -> NurbsPatch {
        let kv = KnotVector::clamped_uniform(p, n).unwrap();
        let mut cps = Vec::new();
        for k in 0..n {
            for l in 0..n {
                let a = k as f64 / (n - 1) as f64;
                let b = l as f64 / (n - 1) as f64;
                cps.push(origin + du * a + dv * b);
            }
        }
        NurbsPatch::new(kv.clone(), kv, cps, vec![1.0; n * n]).unwrap()
    }

    #[test]
    fn single_patch_collocation() {
        let p = square(Point3::zeros(), Point3::x(), Point3::y(), 3, 2);
        let m = ScatteringModel::new(vec![p]).unwrap();
        assert_eq!(m.n_unknowns(), 9);
        let c = m.collocation_points().unwrap();
        assert_eq!(c.len(), 9);
        let mut params: Vec<(f64, f64)> = c.points.iter().map(|p| (p.s, p.t)).collect();
        params.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let grid = [0.0, 0.5, 1.0];
        let expected: Vec<(f64, f64)> = grid.iter().flat_map(|&s| grid.iter().map(move |&t| (s, t))).collect();
        assert_eq!(params, expected);
    }

    #[test]
    fn ambiguous_chain_is_rejected() {
        let pts: Vec<Point3> = (0..30).map(|i| Point3::new(i as f64 * 0.9, 0.0, 0.0)).collect();
        assert!(matches!(cluster_points(&pts, 1.0), Err(Error::AmbiguousGeometry(_))));
        let (labels, n) = cluster_points(&pts, 0.5).unwrap();
        assert_eq!(n, 30);
        assert_eq!(labels, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn design_space_round_trip() {
        let p = square(Point3::zeros(), Point3::x(), Point3::y(), 3, 2);
        let m = ScatteringModel::new(vec![p]).unwrap();
        let mut d = DesignSpace::fixed(&m);
        d.free(4, 2, -0.3, 0.3).unwrap();
        d.validate().unwrap();
        assert_eq!(d.free_indices(), vec![14]);
        let x = d.expand(&[0.2]).unwrap();
        let moved = m.apply_design(&d, &x).unwrap();
        assert!((moved.global_cps()[4].z - 0.2).abs() < 1e-15);
        let bad = d.expand(&[0.5]).unwrap();
        assert!(matches!(m.apply_design(&d, &bad), Err(Error::InvalidArgument(_))));
        let same = m.apply_design(&d, &d.initial).unwrap();
        assert_eq!(same.global_cps(), m.global_cps());
    }
}
