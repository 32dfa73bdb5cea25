//! JSON scene files: patches, incident wave, observation points, design
//! variables and analysis refinement.
//!
//! ```json
//! {
//!   "name": "reflector",
//!   "patches": [{"id": "top", "degrees": [2, 2], "knots_s": [...], "knots_t": [...],
//!                "control_points": [[[x, y, z], ...], ...], "weights": [[1.0, ...], ...]}],
//!   "incident": {"type": "planewave", "direction": [0, 0, -1], "wavenumber": 3.0},
//!   "observation_points": [[0.5, 0.5, 1.0]],
//!   "design": {"mode": "cp", "variables": [{"patch": "top", "k": 1, "l": 1, "axes": "z",
//!                                            "lower": -0.3, "upper": 0.3}]},
//!   "refinement": {"default": [3, 3], "patches": {"top": [3, 3]}}
//! }
//! ```
//!
//! `control_points[k][l]` and `weights[k][l]` index the `s` direction first.
//! Design bounds are offsets from the initial coordinate. A `"radial"` design
//! scales the whole net about `center` with the radius as the only variable.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Vec3};
use crate::kernels::{IncidentField, Wavenumber};
use crate::model::{DesignSpace, ScatteringModel};
use crate::nurbs::{KnotVector, NurbsPatch};
use crate::quadrature::SubdivisionPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub id: String,
    pub degrees: [usize; 2],
    pub knots_s: Vec<f64>,
    pub knots_t: Vec<f64>,
    pub control_points: Vec<Vec<[f64; 3]>>,
    pub weights: Vec<Vec<f64>>,
}

impl PatchSpec {
    pub fn from_patch(id: impl Into<String>, patch: &NurbsPatch) -> Self {
        let (ns, nt) = (patch.n_s(), patch.n_t());
        let cps = patch.control_points();
        let w = patch.weights();
        PatchSpec {
            id: id.into(),
            degrees: [patch.knots_s().degree(), patch.knots_t().degree()],
            knots_s: patch.knots_s().knots().to_vec(),
            knots_t: patch.knots_t().knots().to_vec(),
            control_points: (0..ns)
                .map(|k| (0..nt).map(|l| cps[k * nt + l].into()).collect())
                .collect(),
            weights: (0..ns).map(|k| w[k * nt..(k + 1) * nt].to_vec()).collect(),
        }
    }

    pub fn to_patch(&self) -> Result<NurbsPatch> {
        let ks = KnotVector::new(self.degrees[0], self.knots_s.clone())?;
        let kt = KnotVector::new(self.degrees[1], self.knots_t.clone())?;
        let (ns, nt) = (ks.basis_count(), kt.basis_count());
        if self.control_points.len() != ns
            || self.control_points.iter().any(|r| r.len() != nt)
            || self.weights.len() != ns
            || self.weights.iter().any(|r| r.len() != nt)
        {
            return Err(Error::Scene(format!(
                "patch '{}': control grid must be {ns} x {nt}",
                self.id
            )));
        }
        let cps = self
            .control_points
            .iter()
            .flatten()
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect();
        let weights = self.weights.iter().flatten().copied().collect();
        NurbsPatch::new(ks, kt, cps, weights)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum IncidentSpec {
    Planewave { direction: [f64; 3], wavenumber: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignVariable {
    pub patch: String,
    pub k: usize,
    pub l: usize,
    /// Any combination of `x`, `y`, `z`.
    pub axes: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DesignSpec {
    #[default]
    None,
    Cp {
        variables: Vec<DesignVariable>,
    },
    Radial {
        radius: f64,
        lower: f64,
        upper: f64,
        #[serde(default)]
        center: [f64; 3],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementSpec {
    /// Span subdivision factors `[m_s, m_t]` for patches not listed.
    pub default: [usize; 2],
    #[serde(default)]
    pub patches: BTreeMap<String, [usize; 2]>,
}

impl Default for RefinementSpec {
    fn default() -> Self {
        RefinementSpec {
            default: [1, 1],
            patches: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub patches: Vec<PatchSpec>,
    pub incident: IncidentSpec,
    #[serde(default)]
    pub observation_points: Vec<[f64; 3]>,
    #[serde(default)]
    pub design: DesignSpec,
    #[serde(default)]
    pub refinement: RefinementSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coincidence_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<SubdivisionPolicy>,
}

/// Design parametrisation resolved against a model.
#[derive(Clone, Debug, PartialEq)]
pub enum DesignMode {
    /// No design variables; only forward solves are possible.
    Fixed,
    ControlPoints(DesignSpace),
    /// The net is `center + (a / radius) (C - center)`.
    Radial {
        radius: f64,
        lower: f64,
        upper: f64,
        center: Point3,
    },
}

impl Scene {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let scene: Scene = serde_json::from_str(&text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.patches.is_empty() {
            return Err(Error::Scene("scene has no patches".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for p in &self.patches {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::Scene(format!("duplicate patch id '{}'", p.id)));
            }
        }
        for id in self.refinement.patches.keys() {
            self.patch_index(id)?;
        }
        let [ms, mt] = self.refinement.default;
        if ms == 0 || mt == 0 || self.refinement.patches.values().any(|r| r[0] == 0 || r[1] == 0) {
            return Err(Error::Scene("refinement factors must be at least 1".into()));
        }
        self.incident()?;
        if let Some(q) = &self.quadrature {
            q.validate()?;
        }
        Ok(())
    }

    pub fn patch_index(&self, id: &str) -> Result<usize> {
        self.patches
            .iter()
            .position(|p| p.id == id)
            .ok_or_else(|| Error::Scene(format!("unknown patch id '{id}'")))
    }

    pub fn incident(&self) -> Result<IncidentField> {
        match &self.incident {
            IncidentSpec::Planewave { direction, wavenumber } => {
                IncidentField::plane_wave(Vec3::from(*direction), Wavenumber::new(*wavenumber)?)
            }
        }
    }

    pub fn observation_points(&self) -> Vec<Point3> {
        self.observation_points.iter().map(|p| Point3::from(*p)).collect()
    }

    pub fn policy(&self) -> SubdivisionPolicy {
        self.quadrature.unwrap_or_default()
    }

    pub fn model(&self) -> Result<ScatteringModel> {
        let patches = self.patches.iter().map(|p| p.to_patch()).collect::<Result<Vec<_>>>()?;
        match self.coincidence_tol {
            Some(tol) => ScatteringModel::unify(patches, tol),
            None => ScatteringModel::new(patches),
        }
    }

    pub fn subdivisions(&self) -> Vec<(usize, usize)> {
        self.patches
            .iter()
            .map(|p| {
                let [a, b] = self
                    .refinement
                    .patches
                    .get(&p.id)
                    .copied()
                    .unwrap_or(self.refinement.default);
                (a, b)
            })
            .collect()
    }

    pub fn design_mode(&self, model: &ScatteringModel) -> Result<DesignMode> {
        match &self.design {
            DesignSpec::None => Ok(DesignMode::Fixed),
            DesignSpec::Radial {
                radius,
                lower,
                upper,
                center,
            } => {
                if !(*lower > 0.0 && lower <= radius && radius <= upper) {
                    return Err(Error::Scene(format!(
                        "radial design needs 0 < lower <= radius <= upper, got {lower}, {radius}, {upper}"
                    )));
                }
                Ok(DesignMode::Radial {
                    radius: *radius,
                    lower: *lower,
                    upper: *upper,
                    center: Point3::from(*center),
                })
            }
            DesignSpec::Cp { variables } => {
                let mut space = DesignSpace::fixed(model);
                for v in variables {
                    let pi = self.patch_index(&v.patch)?;
                    let patch = model.patch(pi);
                    if v.k >= patch.n_s() || v.l >= patch.n_t() {
                        return Err(Error::Scene(format!(
                            "design CP ({}, {}) outside patch '{}'",
                            v.k, v.l, v.patch
                        )));
                    }
                    let g = model.global_of(pi, v.k, v.l);
                    for c in v.axes.chars() {
                        let axis = match c {
                            'x' => 0,
                            'y' => 1,
                            'z' => 2,
                            other => return Err(Error::Scene(format!("unknown axis '{other}'"))),
                        };
                        space
                            .free(g, axis, v.lower, v.upper)
                            .map_err(|e| Error::Scene(e.to_string()))?;
                    }
                }
                space.validate()?;
                Ok(DesignMode::ControlPoints(space))
            }
        }
    }
}
