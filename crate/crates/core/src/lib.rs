//! Isogeometric boundary element analysis and shape optimisation for
//! time-harmonic acoustic scattering by sound-hard bodies in 3D.
//!
//! Surfaces are multi-patch NURBS models. The same rational basis carries
//! the geometry and the boundary density, so control points double as
//! shape design variables. The pipeline for one design is
//!
//! 1. [`model::ScatteringModel::apply_design`] moves the coarse control net,
//! 2. [`model::ScatteringModel::refine_for_analysis`] knot-inserts an analysis copy,
//! 3. [`bem::assemble`] and [`bem::BemSystem::solve`] solve the collocation BIE,
//! 4. [`adjoint`] solves the adjoint problem with the same LU factors and
//!    integrates the control-point sensitivities,
//! 5. [`optimize`] drives MMA (or projected gradient) over the design box.
//!
//! [`oracle`] holds the analytic sphere-scattering series used for verification.

pub mod adjoint;
pub mod bem;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod nurbs;
pub mod optimize;
pub mod oracle;
pub mod pipeline;
pub mod quadrature;
pub mod scene;
pub mod scenes;

pub use error::{Error, Result};
pub use geometry::{Point3, Vec3};
pub use num_complex::Complex64;

pub use adjoint::{AdjointConvention, Objective, SensitivityField};
pub use bem::{BemSystem, Discretization, SurfaceSolution};
pub use kernels::{IncidentField, Wavenumber};
pub use model::{CollocationSet, DesignSpace, RefinementMap, ScatteringModel};
pub use nurbs::{KnotVector, NurbsPatch, SurfaceFrame};
pub use optimize::{Algorithm, ConvergenceCriteria, OptimizationState};
pub use pipeline::{Evaluation, Problem};
pub use quadrature::{QuadRule, SubdivisionPolicy};
pub use scene::Scene;
