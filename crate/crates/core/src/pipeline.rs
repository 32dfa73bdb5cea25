//! Design vector to objective and gradient: geometry update, refinement,
//! assembly, forward and adjoint solves, and sensitivity integration.

use std::sync::Arc;
use std::time::{Duration, Instant};

use num_complex::Complex64;

use crate::adjoint::{
    adjoint_rhs, radius_sensitivity, sensitivities, AdjointConvention, Objective, SensitivityField,
    DEFAULT_SENSITIVITY_ORDER,
};
use crate::bem::{assemble, BemSystem, Discretization, SurfaceSolution};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::kernels::IncidentField;
use crate::model::{RefinementMap, ScatteringModel};
use crate::quadrature::SubdivisionPolicy;
use crate::scene::{DesignMode, PatchSpec, Scene};

/// A scattering problem with its design parametrisation.
#[derive(Clone, Debug)]
pub struct Problem {
    /// Design (coarse) model at the initial geometry.
    pub model: ScatteringModel,
    pub design: DesignMode,
    pub incident: IncidentField,
    pub objective: Objective,
    pub policy: SubdivisionPolicy,
    pub convention: AdjointConvention,
    pub sensitivity_order: usize,
    analysis_template: ScatteringModel,
    refinement: RefinementMap,
}

/// Forward solve on one geometry.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub design_cps: Vec<Point3>,
    pub system: BemSystem,
    pub solution: SurfaceSolution,
    pub assembly_time: Duration,
    pub solve_time: Duration,
}

/// Objective, gradient and diagnostics at one design point.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub objective: f64,
    /// `dJ/dx` over the reduced design vector; empty when not requested.
    pub gradient: Vec<f64>,
    pub observed: Vec<Complex64>,
    pub sensitivities: Option<SensitivityField>,
    pub residual: f64,
    pub adjoint_residual: Option<f64>,
    pub quadrature_converged: bool,
    pub assembly_time: Duration,
    pub solve_time: Duration,
    pub adjoint_time: Option<Duration>,
}

impl Problem {
    pub fn new(
        model: ScatteringModel,
        design: DesignMode,
        subdivisions: &[(usize, usize)],
        incident: IncidentField,
        observation_points: Vec<Point3>,
        policy: SubdivisionPolicy,
    ) -> Result<Self> {
        policy.validate()?;
        let (analysis_template, refinement) = model.refine_for_analysis(subdivisions)?;
        Ok(Problem {
            model,
            design,
            incident,
            objective: Objective::new(observation_points),
            policy,
            convention: AdjointConvention::default(),
            sensitivity_order: DEFAULT_SENSITIVITY_ORDER,
            analysis_template,
            refinement,
        })
    }

    pub fn from_scene(scene: &Scene) -> Result<Self> {
        let model = scene.model()?;
        let design = scene.design_mode(&model)?;
        Problem::new(
            model,
            design,
            &scene.subdivisions(),
            scene.incident()?,
            scene.observation_points(),
            scene.policy(),
        )
    }

    pub fn with_incident(mut self, incident: IncidentField) -> Self {
        self.incident = incident;
        self
    }

    pub fn refinement(&self) -> &RefinementMap {
        &self.refinement
    }

    pub fn analysis_template(&self) -> &ScatteringModel {
        &self.analysis_template
    }

    pub fn n_vars(&self) -> usize {
        match &self.design {
            DesignMode::Fixed => 0,
            DesignMode::ControlPoints(space) => space.n_free(),
            DesignMode::Radial { .. } => 1,
        }
    }

    pub fn initial(&self) -> Vec<f64> {
        match &self.design {
            DesignMode::Fixed => Vec::new(),
            DesignMode::ControlPoints(space) => space.reduce(&space.initial),
            DesignMode::Radial { radius, .. } => vec![*radius],
        }
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.design {
            DesignMode::Fixed => (Vec::new(), Vec::new()),
            DesignMode::ControlPoints(space) => space.reduced_bounds(),
            DesignMode::Radial { lower, upper, .. } => (vec![*lower], vec![*upper]),
        }
    }

    /// Design control net for the reduced design vector `x`.
    pub fn design_cps(&self, x: &[f64]) -> Result<Vec<Point3>> {
        if x.len() != self.n_vars() {
            return Err(Error::invalid(format!(
                "design vector has {} entries, expected {}",
                x.len(),
                self.n_vars()
            )));
        }
        match &self.design {
            DesignMode::Fixed => Ok(self.model.global_cps().to_vec()),
            DesignMode::ControlPoints(space) => {
                let full = space.expand(x)?;
                Ok(self.model.apply_design(space, &full)?.global_cps().to_vec())
            }
            DesignMode::Radial {
                radius,
                lower,
                upper,
                center,
            } => {
                let a = x[0];
                if !(a >= *lower && a <= *upper) {
                    return Err(Error::invalid(format!("radius {a} outside [{lower}, {upper}]")));
                }
                let scale = a / radius;
                Ok(self
                    .model
                    .global_cps()
                    .iter()
                    .map(|c| center + (c - center) * scale)
                    .collect())
            }
        }
    }

    pub fn design_model(&self, x: &[f64]) -> Result<ScatteringModel> {
        self.model.with_global_cps(&self.design_cps(x)?)
    }

    pub fn analysis_model(&self, x: &[f64]) -> Result<ScatteringModel> {
        self.analysis_template
            .refined_with(&self.refinement, &self.design_cps(x)?)
    }

    /// Assembles and solves the forward problem at `x`.
    pub fn analyze(&self, x: &[f64]) -> Result<Analysis> {
        let design_cps = self.design_cps(x)?;
        let model = self.analysis_template.refined_with(&self.refinement, &design_cps)?;
        let start = Instant::now();
        let disc = Arc::new(Discretization::new(model, self.policy)?);
        let mut system = assemble(&disc, &self.incident)?;
        let assembly_time = start.elapsed();
        let start = Instant::now();
        let solution = system.solve()?;
        let solve_time = start.elapsed();
        Ok(Analysis {
            design_cps,
            system,
            solution,
            assembly_time,
            solve_time,
        })
    }

    /// `J(x)` and, when requested, `dJ/dx` by the adjoint method.
    pub fn evaluate(&self, x: &[f64], with_gradient: bool) -> Result<Evaluation> {
        let mut analysis = self.analyze(x)?;
        self.evaluate_analysis(x, &mut analysis, with_gradient)
    }

    pub fn evaluate_analysis(&self, x: &[f64], analysis: &mut Analysis, with_gradient: bool) -> Result<Evaluation> {
        let solution = &analysis.solution;
        let residual = analysis
            .system
            .residual(solution.coefficients(), &analysis.system.rhs.clone());
        let (objective, observed) = self.objective.evaluate(solution)?;
        let mut out = Evaluation {
            objective,
            gradient: Vec::new(),
            observed,
            sensitivities: None,
            residual,
            adjoint_residual: None,
            quadrature_converged: analysis.system.quadrature_converged,
            assembly_time: analysis.assembly_time,
            solve_time: analysis.solve_time,
            adjoint_time: None,
        };
        if !with_gradient {
            return Ok(out);
        }
        let start = Instant::now();
        let disc = Arc::clone(solution.discretization());
        let rhs = adjoint_rhs(
            &disc,
            solution.wavenumber(),
            &self.objective.points,
            &out.observed,
            self.convention,
        )?;
        let lambda = analysis.system.solve_rhs(&rhs)?;
        out.adjoint_time = Some(start.elapsed());
        out.adjoint_residual = Some(analysis.system.residual(&lambda, &rhs));
        let field = sensitivities(
            solution,
            &lambda,
            self.convention,
            &self.refinement,
            self.sensitivity_order,
        )?;
        out.gradient = match &self.design {
            DesignMode::Fixed => Vec::new(),
            DesignMode::ControlPoints(space) => space
                .free_indices()
                .iter()
                .map(|&i| field.coarse[i / 3][i % 3])
                .collect(),
            DesignMode::Radial { center, .. } => {
                vec![radius_sensitivity(&field, &analysis.design_cps, center, x[0])]
            }
        };
        out.sensitivities = Some(field);
        Ok(out)
    }

    /// Scene with its patches moved to the design point `x`.
    pub fn scene_at(&self, scene: &Scene, x: &[f64]) -> Result<Scene> {
        let model = self.design_model(x)?;
        let mut out = scene.clone();
        out.patches = scene
            .patches
            .iter()
            .zip(model.patches())
            .map(|(spec, p)| PatchSpec::from_patch(spec.id.clone(), p))
            .collect();
        if let (crate::scene::DesignSpec::Radial { radius, .. }, DesignMode::Radial { .. }) =
            (&mut out.design, &self.design)
        {
            *radius = x[0];
        }
        Ok(out)
    }
}
