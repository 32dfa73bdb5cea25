//! Generators for the shipped scenes: the exact six-patch NURBS sphere, unit
//! cube, reflector, resonator and bending duct.
//!
//! Polyhedral bodies are built from a rectilinear grid of solid cells; every
//! face between a solid cell and empty space becomes one patch with uniformly
//! spaced control points and an outward normal.

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::nurbs::{KnotVector, NurbsPatch};
use crate::scene::{DesignSpec, DesignVariable, IncidentSpec, PatchSpec, RefinementSpec, Scene};

/// Control net of the `+z` face of the exact quartic sphere of radius 1, in
/// homogeneous coordinates `(wx, wy, wz, w)`. `net[i][j]` runs along `y`
/// with `i` and along `x` with `j`.
fn sphere_face_net() -> [[[f64; 4]; 5]; 5] {
    let s2 = 2f64.sqrt();
    let s3 = 3f64.sqrt();
    let s6 = 6f64.sqrt();
    // unique entries for 0 <= a <= b <= 2
    let key = |a: usize, b: usize| -> [f64; 4] {
        match (a, b) {
            (0, 0) => [4.0 * (1.0 - s3), 4.0 * (1.0 - s3), 4.0 * (s3 - 1.0), 4.0 * (3.0 - s3)],
            (0, 1) => [-s2, s2 * (s3 - 4.0), s2 * (4.0 - s3), s2 * (3.0 * s3 - 2.0)],
            (0, 2) => [
                0.0,
                4.0 * (1.0 - 2.0 * s3) / 3.0,
                4.0 * (2.0 * s3 - 1.0) / 3.0,
                4.0 * (5.0 - s3) / 3.0,
            ],
            (1, 1) => [
                (2.0 - 3.0 * s3) / 2.0,
                (2.0 - 3.0 * s3) / 2.0,
                (s3 + 6.0) / 2.0,
                (s3 + 6.0) / 2.0,
            ],
            (1, 2) => [0.0, s2 * (2.0 * s3 - 7.0) / 3.0, 5.0 * s6 / 3.0, s2 * (s3 + 6.0) / 3.0],
            (2, 2) => [0.0, 0.0, 4.0 * (5.0 - s3) / 3.0, 4.0 * (5.0 * s3 - 1.0) / 9.0],
            _ => unreachable!(),
        }
    };
    let mut net = [[[0.0; 4]; 5]; 5];
    for (i, row) in net.iter_mut().enumerate() {
        for (j, entry) in row.iter_mut().enumerate() {
            let a = i.min(4 - i);
            let b = j.min(4 - j);
            let mut h = if a <= b {
                key(a, b)
            } else {
                let h = key(b, a);
                [h[1], h[0], h[2], h[3]]
            };
            if j > 2 {
                h[0] = -h[0];
            }
            if i > 2 {
                h[1] = -h[1];
            }
            *entry = h;
        }
    }
    net
}

/// Proper rotations taking `+z` to each face normal.
const SPHERE_FACES: [(&str, [[f64; 3]; 3]); 6] = [
    ("+z", [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
    ("-z", [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]),
    ("+x", [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]]),
    ("-x", [[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]),
    ("+y", [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]]),
    ("-y", [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]),
];

/// Six degree-4 patches (5x5 nets) representing the sphere of the given
/// radius about the origin exactly; normals point outward.
pub fn sphere_patches(radius: f64) -> Result<Vec<(String, NurbsPatch)>> {
    if !(radius > 0.0) {
        return Err(Error::invalid("sphere radius must be positive"));
    }
    let net = sphere_face_net();
    let kv = KnotVector::clamped_uniform(4, 5)?;
    SPHERE_FACES
        .iter()
        .map(|(name, rot)| {
            let mut cps = Vec::with_capacity(25);
            let mut w = Vec::with_capacity(25);
            // s runs along x (j), t along y (i)
            for j in 0..5 {
                for i in 0..5 {
                    let h = net[i][j];
                    let p = Point3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
                    let q = Point3::new(
                        rot[0][0] * p.x + rot[0][1] * p.y + rot[0][2] * p.z,
                        rot[1][0] * p.x + rot[1][1] * p.y + rot[1][2] * p.z,
                        rot[2][0] * p.x + rot[2][1] * p.y + rot[2][2] * p.z,
                    );
                    cps.push(q * radius);
                    w.push(h[3]);
                }
            }
            Ok((name.to_string(), NurbsPatch::new(kv.clone(), kv.clone(), cps, w)?))
        })
        .collect()
}

/// Rectilinear grid of cells, some of them solid.
#[derive(Clone, Debug)]
pub struct BoxGrid {
    /// Cell boundaries along x, y, z.
    pub coords: [Vec<f64>; 3],
    /// Control points per interval along each axis, end points included.
    pub cps_per_interval: [Vec<usize>; 3],
    /// Solid flag per cell, index `(i * ny + j) * nz + k`.
    pub solid: Vec<bool>,
    pub degree: usize,
}

const AXIS: [char; 3] = ['x', 'y', 'z'];

impl BoxGrid {
    /// Grid with every cell solid.
    pub fn filled(coords: [Vec<f64>; 3], cps_per_interval: [Vec<usize>; 3], degree: usize) -> Result<Self> {
        for a in 0..3 {
            if coords[a].len() < 2 || cps_per_interval[a].len() + 1 != coords[a].len() {
                return Err(Error::invalid("grid needs one CP count per interval"));
            }
            if coords[a].windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::invalid("grid coordinates must increase"));
            }
        }
        let n = (coords[0].len() - 1) * (coords[1].len() - 1) * (coords[2].len() - 1);
        Ok(BoxGrid {
            coords,
            cps_per_interval,
            solid: vec![true; n],
            degree,
        })
    }

    fn cells(&self) -> [usize; 3] {
        [
            self.coords[0].len() - 1,
            self.coords[1].len() - 1,
            self.coords[2].len() - 1,
        ]
    }

    fn cell_index(&self, c: [usize; 3]) -> usize {
        let n = self.cells();
        (c[0] * n[1] + c[1]) * n[2] + c[2]
    }

    /// Marks the cells inside the axis-aligned box `[lo, hi]` as empty.
    pub fn carve(&mut self, lo: [f64; 3], hi: [f64; 3]) {
        let n = self.cells();
        for i in 0..n[0] {
            for j in 0..n[1] {
                for k in 0..n[2] {
                    let c = [i, j, k];
                    let inside = (0..3).all(|a| {
                        let mid = 0.5 * (self.coords[a][c[a]] + self.coords[a][c[a] + 1]);
                        mid > lo[a] && mid < hi[a]
                    });
                    if inside {
                        let idx = self.cell_index(c);
                        self.solid[idx] = false;
                    }
                }
            }
        }
    }

    fn is_solid(&self, c: [isize; 3]) -> bool {
        let n = self.cells();
        if (0..3).any(|a| c[a] < 0 || c[a] >= n[a] as isize) {
            return false;
        }
        self.solid[self.cell_index([c[0] as usize, c[1] as usize, c[2] as usize])]
    }

    /// One patch per solid/empty interface, named `"<axis><sign>_<plane>_<i>_<j>"`.
    pub fn patches(&self) -> Result<Vec<(String, NurbsPatch)>> {
        let n = self.cells();
        let mut out = Vec::new();
        for a in 0..3 {
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            for q in 0..=n[a] {
                for ib in 0..n[b] {
                    for ic in 0..n[c] {
                        let mut minus = [0isize; 3];
                        minus[a] = q as isize - 1;
                        minus[b] = ib as isize;
                        minus[c] = ic as isize;
                        let mut plus = minus;
                        plus[a] = q as isize;
                        let (sm, sp) = (self.is_solid(minus), self.is_solid(plus));
                        if sm == sp {
                            continue;
                        }
                        // outward normal +e_a when the solid is on the minus side
                        let (u, iu, v, iv) = if sm { (b, ib, c, ic) } else { (c, ic, b, ib) };
                        let nu = self.cps_per_interval[u][iu];
                        let nv = self.cps_per_interval[v][iv];
                        let (u0, u1) = (self.coords[u][iu], self.coords[u][iu + 1]);
                        let (v0, v1) = (self.coords[v][iv], self.coords[v][iv + 1]);
                        let mut cps = Vec::with_capacity(nu * nv);
                        for k in 0..nu {
                            for l in 0..nv {
                                let mut p = [0.0; 3];
                                p[a] = self.coords[a][q];
                                p[u] = u0 + (u1 - u0) * k as f64 / (nu - 1) as f64;
                                p[v] = v0 + (v1 - v0) * l as f64 / (nv - 1) as f64;
                                cps.push(Point3::from(p));
                            }
                        }
                        let patch = NurbsPatch::new(
                            KnotVector::clamped_uniform(self.degree, nu)?,
                            KnotVector::clamped_uniform(self.degree, nv)?,
                            cps,
                            vec![1.0; nu * nv],
                        )?;
                        let name = format!("{}{}_{}_{}_{}", AXIS[a], if sm { '+' } else { '-' }, q, ib, ic);
                        out.push((name, patch));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn to_specs(patches: &[(String, NurbsPatch)]) -> Vec<PatchSpec> {
    patches
        .iter()
        .map(|(id, p)| PatchSpec::from_patch(id.clone(), p))
        .collect()
}

/// Patch id and `(k, l)` of the first control point at `position`.
pub fn find_control_point(
    patches: &[(String, NurbsPatch)],
    position: Point3,
    tol: f64,
) -> Option<(String, usize, usize)> {
    for (id, p) in patches {
        let nt = p.n_t();
        if let Some(i) = p.control_points().iter().position(|c| (c - position).norm() <= tol) {
            return Some((id.clone(), i / nt, i % nt));
        }
    }
    None
}

fn design_variables(
    patches: &[(String, NurbsPatch)],
    positions: &[Point3],
    axes: &str,
    bound: f64,
) -> Result<Vec<DesignVariable>> {
    positions
        .iter()
        .map(|p| {
            let (patch, k, l) = find_control_point(patches, *p, 1e-9)
                .ok_or_else(|| Error::Scene(format!("no control point at {p:?}")))?;
            Ok(DesignVariable {
                patch,
                k,
                l,
                axes: axes.to_string(),
                lower: -bound,
                upper: bound,
            })
        })
        .collect()
}

fn plane_wave(direction: [f64; 3], k: f64) -> IncidentSpec {
    IncidentSpec::Planewave {
        direction,
        wavenumber: k,
    }
}

/// Sound-hard sphere of radius `radius`, `k = 1`, wave along `-z`, observer
/// at `(0, 0, 8.5)`, radial design on `[1, 7]`; every span is split into
/// `subdivisions` parts for analysis (9 gives `N = 866`).
pub fn sphere(radius: f64, subdivisions: usize) -> Result<Scene> {
    let patches = sphere_patches(radius)?;
    Ok(Scene {
        name: "sphere".into(),
        description: "Exact six-patch quartic NURBS sphere about the origin".into(),
        patches: to_specs(&patches),
        incident: plane_wave([0.0, 0.0, -1.0], 1.0),
        observation_points: vec![[0.0, 0.0, 8.5]],
        design: DesignSpec::Radial {
            radius,
            lower: 1.0,
            upper: 7.0,
            center: [0.0; 3],
        },
        refinement: RefinementSpec {
            default: [subdivisions, subdivisions],
            ..Default::default()
        },
        coincidence_tol: None,
        quadrature: None,
    })
}

/// Unit cube `[0, 1]^3` of six bilinear patches (`N = 8`).
pub fn cube(k: f64) -> Result<Scene> {
    let grid = BoxGrid::filled(
        [vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]],
        [vec![2], vec![2], vec![2]],
        1,
    )?;
    let patches = grid.patches()?;
    Ok(Scene {
        name: "cube".into(),
        description: "Unit cube of bilinear patches".into(),
        patches: to_specs(&patches),
        incident: plane_wave([0.0, 0.0, -1.0], k),
        observation_points: vec![[0.5, 0.5, 2.0]],
        design: DesignSpec::None,
        refinement: RefinementSpec {
            default: [4, 4],
            ..Default::default()
        },
        coincidence_tol: None,
        quadrature: None,
    })
}

/// Box `1 x 1 x 0.5` of degree-2 patches with 6, 6 and 3 control points along
/// x, y and z (`N = 92`, refined `548`). The 16 interior control points of
/// the top face move vertically by at most 0.3. `k = 3`, wave along `-z`,
/// observer at `(0.5, 0.5, 1.0)`.
pub fn reflector() -> Result<Scene> {
    let grid = BoxGrid::filled(
        [vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.5]],
        [vec![6], vec![6], vec![3]],
        2,
    )?;
    let patches = grid.patches()?;
    let mut top = Vec::new();
    for i in 1..5 {
        for j in 1..5 {
            top.push(Point3::new(i as f64 * 0.2, j as f64 * 0.2, 0.5));
        }
    }
    Ok(Scene {
        name: "reflector".into(),
        description: "Reflector box with a designable top face".into(),
        patches: to_specs(&patches),
        incident: plane_wave([0.0, 0.0, -1.0], 3.0),
        observation_points: vec![[0.5, 0.5, 1.0]],
        design: DesignSpec::Cp {
            variables: design_variables(&patches, &top, "z", 0.3)?,
        },
        refinement: RefinementSpec {
            default: [3, 3],
            ..Default::default()
        },
        coincidence_tol: None,
        quadrature: None,
    })
}

/// Direction of the incident wave for the resonator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Incidence {
    /// Travelling along `-z`, into the cavity opening.
    Vertical,
    /// Travelling along `-x`.
    Horizontal,
}

/// Box `3 x 3 x 3` with an open `1 x 1 x 2` cavity in the top centre
/// (`N = 282`, refined `1314`). The 32 cavity-wall control points at heights
/// 1.4 to 2.6 move by at most 0.15 in every coordinate. `k = 3`, observers
/// on the cavity axis at heights 1.4, 1.5, 1.6.
pub fn resonator(incidence: Incidence) -> Result<Scene> {
    let mut grid = BoxGrid::filled(
        [vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 3.0]],
        [vec![3, 3, 3], vec![3, 3, 3], vec![3, 6]],
        2,
    )?;
    grid.carve([1.0, 1.0, 1.0], [2.0, 2.0, 3.0]);
    let patches = grid.patches()?;
    let ring = [
        (1.0, 1.0),
        (1.5, 1.0),
        (2.0, 1.0),
        (2.0, 1.5),
        (2.0, 2.0),
        (1.5, 2.0),
        (1.0, 2.0),
        (1.0, 1.5),
    ];
    let mut walls = Vec::new();
    for &z in &[1.4, 1.8, 2.2, 2.6] {
        for &(x, y) in &ring {
            walls.push(Point3::new(x, y, z));
        }
    }
    let (direction, name) = match incidence {
        Incidence::Vertical => ([0.0, 0.0, -1.0], "resonator_vertical"),
        Incidence::Horizontal => ([-1.0, 0.0, 0.0], "resonator_horizontal"),
    };
    Ok(Scene {
        name: name.into(),
        description: "Cube with an open cavity; cavity walls are designable".into(),
        patches: to_specs(&patches),
        incident: plane_wave(direction, 3.0),
        observation_points: vec![[1.5, 1.5, 1.4], [1.5, 1.5, 1.5], [1.5, 1.5, 1.6]],
        design: DesignSpec::Cp {
            variables: design_variables(&patches, &walls, "xyz", 0.15)?,
        },
        refinement: RefinementSpec {
            default: [3, 3],
            ..Default::default()
        },
        coincidence_tol: None,
        quadrature: None,
    })
}

/// Block `3 x 3 x 5` pierced by a bent duct of unit cross-section
/// (`y in [1, 2]`): it enters at `x = 3`, `z in [3, 4]`, turns down the
/// vertical leg `x in [1, 2]` and leaves at `x = 0`, `z in [1, 2]`. The floor
/// of the lower leg and the ceiling of the upper leg (30 control points)
/// move vertically by at most 0.2. Wave along `-x`; a 3x3 grid of observers
/// sits just outside the exit at `x = -0.5`.
pub fn duct(k: f64, subdivisions: usize) -> Result<Scene> {
    let mut grid = BoxGrid::filled(
        [
            vec![0.0, 1.0, 2.0, 3.0],
            vec![0.0, 1.0, 2.0, 3.0],
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        ],
        [vec![3; 3], vec![3; 3], vec![3; 5]],
        2,
    )?;
    grid.carve([0.0, 1.0, 1.0], [2.0, 2.0, 2.0]);
    grid.carve([1.0, 1.0, 1.0], [2.0, 2.0, 4.0]);
    grid.carve([1.0, 1.0, 3.0], [3.0, 2.0, 4.0]);
    let patches = grid.patches()?;
    let mut moving = Vec::new();
    for &y in &[1.0, 1.5, 2.0] {
        for &x in &[0.0, 0.5, 1.0, 1.5, 2.0] {
            moving.push(Point3::new(x, y, 1.0));
        }
        for &x in &[1.0, 1.5, 2.0, 2.5, 3.0] {
            moving.push(Point3::new(x, y, 4.0));
        }
    }
    let mut observers = Vec::new();
    for &y in &[1.25, 1.5, 1.75] {
        for &z in &[1.25, 1.5, 1.75] {
            observers.push([-0.5, y, z]);
        }
    }
    Ok(Scene {
        name: "duct".into(),
        description: "Block with a bent duct; floor and ceiling are designable".into(),
        patches: to_specs(&patches),
        incident: plane_wave([-1.0, 0.0, 0.0], k),
        observation_points: observers,
        design: DesignSpec::Cp {
            variables: design_variables(&patches, &moving, "z", 0.2)?,
        },
        refinement: RefinementSpec {
            default: [subdivisions, subdivisions],
            ..Default::default()
        },
        coincidence_tol: None,
        quadrature: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScatteringModel;

    #[test]
    fn sphere_is_exact() {
        let patches = sphere_patches(1.0).unwrap();
        let mut worst: f64 = 0.0;
        for (_, p) in &patches {
            assert!(p.weights().iter().all(|&w| w > 0.0));
            for i in 0..=40 {
                for j in 0..=40 {
                    let f = p.eval_surface(i as f64 / 40.0, j as f64 / 40.0).unwrap();
                    worst = worst.max((f.point.norm() - 1.0).abs());
                    // outward normal
                    assert!(f.normal.dot(&f.point) > 0.99);
                }
            }
        }
        assert!(worst < 1e-13, "{worst}");
    }

    #[test]
    fn unknown_counts() {
        let n = |s: Scene| s.model().unwrap().n_unknowns();
        assert_eq!(n(sphere(1.0, 1).unwrap()), 98);
        assert_eq!(n(cube(1.0).unwrap()), 8);
        assert_eq!(n(reflector().unwrap()), 92);
        assert_eq!(n(resonator(Incidence::Vertical).unwrap()), 282);
    }

    #[test]
    fn refined_counts() {
        let refined = |s: Scene| {
            let m: ScatteringModel = s.model().unwrap();
            m.refine_for_analysis(&s.subdivisions()).unwrap().0.n_unknowns()
        };
        assert_eq!(refined(sphere(1.0, 9).unwrap()), 866);
        assert_eq!(refined(reflector().unwrap()), 548);
        assert_eq!(refined(resonator(Incidence::Horizontal).unwrap()), 1314);
    }

    #[test]
    fn design_variable_counts() {
        let count = |s: &Scene| match &s.design {
            DesignSpec::Cp { variables } => variables.iter().map(|v| v.axes.len()).sum::<usize>(),
            _ => 0,
        };
        assert_eq!(count(&reflector().unwrap()), 16);
        assert_eq!(count(&resonator(Incidence::Vertical).unwrap()), 96);
        assert_eq!(count(&duct(1.0, 1).unwrap()), 30);
    }
}
