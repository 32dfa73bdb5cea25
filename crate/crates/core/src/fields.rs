//! Sampling the solved field on the surface and on planar cross-sections,
//! and writing the samples as CSV.

use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bem::SurfaceSolution;
use crate::error::{Error, Result};
use crate::geometry::Point3;

/// One surface sample.
#[derive(Clone, Debug)]
pub struct SurfaceSample {
    pub patch: usize,
    pub s: f64,
    pub t: f64,
    pub position: Point3,
    pub u: Complex64,
}

/// `u` on an `n x n` parameter grid of every patch.
pub fn sample_surface(solution: &SurfaceSolution, n: usize) -> Result<Vec<SurfaceSample>> {
    if n < 2 {
        return Err(Error::invalid("surface grid needs at least 2 samples per direction"));
    }
    let model = solution.discretization().model();
    let mut out = Vec::with_capacity(model.patches().len() * n * n);
    for (pi, patch) in model.patches().iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                let s = i as f64 / (n - 1) as f64;
                let t = j as f64 / (n - 1) as f64;
                let position = patch.point(s, t)?;
                let u = solution.eval_on_surface(pi, s, t)?.u;
                out.push(SurfaceSample {
                    patch: pi,
                    s,
                    t,
                    position,
                    u,
                });
            }
        }
    }
    Ok(out)
}

/// Writes `patch_id,s,t,x,y,z,re_u,im_u,abs_u`.
pub fn write_surface_field(path: impl AsRef<Path>, samples: &[SurfaceSample], patch_ids: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["patch_id", "s", "t", "x", "y", "z", "re_u", "im_u", "abs_u"])?;
    for p in samples {
        let id = patch_ids.get(p.patch).cloned().unwrap_or_else(|| p.patch.to_string());
        w.write_record(&[
            id,
            p.s.to_string(),
            p.t.to_string(),
            p.position.x.to_string(),
            p.position.y.to_string(),
            p.position.z.to_string(),
            p.u.re.to_string(),
            p.u.im.to_string(),
            p.u.norm().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Axis-aligned sampling plane `axis = offset` with a rectangular grid over
/// the two remaining axes in increasing order (for `y = c`: `x` then `z`).
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneGrid {
    pub axis: usize,
    pub offset: f64,
    pub range_a: (f64, f64),
    pub range_b: (f64, f64),
    pub resolution: (usize, usize),
}

impl FromStr for PlaneGrid {
    type Err = Error;

    /// Parses `y=0.5`; ranges and resolution are set separately.
    fn from_str(s: &str) -> Result<Self> {
        let (axis, value) = s
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("plane '{s}' must look like 'y=0.5'")))?;
        let axis = match axis.trim() {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            other => return Err(Error::invalid(format!("unknown plane axis '{other}'"))),
        };
        let offset: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad plane offset '{value}'")))?;
        Ok(PlaneGrid {
            axis,
            offset,
            range_a: (0.0, 1.0),
            range_b: (0.0, 1.0),
            resolution: (41, 41),
        })
    }
}

impl PlaneGrid {
    /// In-plane axes in increasing order.
    pub fn in_plane_axes(&self) -> (usize, usize) {
        match self.axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    /// Ranges spanning the box `[lo, hi]` widened by `margin` on each side.
    pub fn fit_to_box(mut self, lo: &Point3, hi: &Point3, margin: f64) -> Self {
        let (a, b) = self.in_plane_axes();
        self.range_a = (lo[a] - margin, hi[a] + margin);
        self.range_b = (lo[b] - margin, hi[b] + margin);
        self
    }

    pub fn points(&self) -> Result<Vec<Point3>> {
        let (na, nb) = self.resolution;
        if na < 2 || nb < 2 || self.axis > 2 {
            return Err(Error::invalid("plane grid needs at least 2 x 2 samples"));
        }
        let (a, b) = self.in_plane_axes();
        let mut out = Vec::with_capacity(na * nb);
        for j in 0..nb {
            for i in 0..na {
                let mut p = Point3::zeros();
                p[self.axis] = self.offset;
                p[a] = self.range_a.0 + (self.range_a.1 - self.range_a.0) * i as f64 / (na - 1) as f64;
                p[b] = self.range_b.0 + (self.range_b.1 - self.range_b.0) * j as f64 / (nb - 1) as f64;
                out.push(p);
            }
        }
        Ok(out)
    }
}

/// Total field on the plane; `None` inside the body or on its surface.
pub fn sample_plane(solution: &SurfaceSolution, grid: &PlaneGrid) -> Result<Vec<(Point3, Option<Complex64>)>> {
    let points = grid.points()?;
    points
        .into_par_iter()
        .map(|p| match solution.eval_exterior(&p) {
            Ok(u) => Ok((p, Some(u))),
            Err(Error::Domain(_)) => Ok((p, None)),
            Err(e) => Err(e),
        })
        .collect()
}

/// Writes `x,y,z,re_u,im_u,abs_u`; points inside the body get `NaN`.
pub fn write_plane_field(path: impl AsRef<Path>, samples: &[(Point3, Option<Complex64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "z", "re_u", "im_u", "abs_u"])?;
    for (p, u) in samples {
        let u = u.unwrap_or(Complex64::new(f64::NAN, f64::NAN));
        w.write_record(&[
            p.x.to_string(),
            p.y.to_string(),
            p.z.to_string(),
            u.re.to_string(),
            u.im.to_string(),
            u.norm().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `index,x,y,z,re_u,im_u,abs_u` for observation points.
pub fn write_observations(path: impl AsRef<Path>, points: &[Point3], values: &[Complex64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "x", "y", "z", "re_u", "im_u", "abs_u"])?;
    for (i, (p, u)) in points.iter().zip(values).enumerate() {
        w.write_record(&[
            i.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.z.to_string(),
            u.re.to_string(),
            u.im.to_string(),
            u.norm().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_parses_and_orders_axes() {
        let g: PlaneGrid = "y=0.5".parse().unwrap();
        assert_eq!((g.axis, g.offset), (1, 0.5));
        assert_eq!(g.in_plane_axes(), (0, 2));
        assert!("w=1".parse::<PlaneGrid>().is_err());
        assert!("y".parse::<PlaneGrid>().is_err());
    }

    #[test]
    fn plane_points_cover_ranges() {
        let mut g: PlaneGrid = "z=2".parse().unwrap();
        g.range_a = (-1.0, 1.0);
        g.range_b = (0.0, 3.0);
        g.resolution = (3, 4);
        let p = g.points().unwrap();
        assert_eq!(p.len(), 12);
        assert_eq!(p[0], Point3::new(-1.0, 0.0, 2.0));
        assert_eq!(p[11], Point3::new(1.0, 3.0, 2.0));
    }
}
