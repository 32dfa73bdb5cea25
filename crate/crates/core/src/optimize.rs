//! Bound-constrained gradient-based maximisation of the objective.
//!
//! [`Algorithm::Mma`] is the conservative convex separable approximation
//! scheme of the method of moving asymptotes (CCSA variant): each outer
//! iteration minimises a separable model of `-J` inside moving trust widths
//! `σ`, and inner iterations raise the penalty `ρ` until the model is
//! conservative at the trial point. [`Algorithm::ProjectedGradient`] is a
//! projected ascent with Armijo backtracking.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::Problem;
use crate::scene::{DesignMode, Scene};

const RHO_MIN: f64 = 1e-5;
const MAX_STEP_FRACTION: f64 = 0.9;
const ARMIJO_C: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Mma,
    #[serde(rename = "pg")]
    ProjectedGradient,
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mma" => Ok(Algorithm::Mma),
            "pg" | "projected-gradient" => Ok(Algorithm::ProjectedGradient),
            other => Err(Error::invalid(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCriteria {
    /// Stop when accepted objective values change by less than this
    /// fraction of their mean magnitude.
    pub ftol_rel: f64,
    /// Upper bound on objective evaluations.
    pub max_eval: usize,
}

impl Default for ConvergenceCriteria {
    fn default() -> Self {
        ConvergenceCriteria {
            ftol_rel: 1e-3,
            max_eval: 100,
        }
    }
}

impl ConvergenceCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.ftol_rel > 0.0) || self.max_eval == 0 {
            return Err(Error::invalid("ftol_rel must be positive and max_eval at least 1"));
        }
        Ok(())
    }
}

/// One objective evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub eval: usize,
    pub objective: f64,
    pub x: Vec<f64>,
    /// Whether this point became the new iterate.
    pub accepted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    FtolRel,
    MaxEval,
    /// Every variable is fixed by its bounds.
    NoFreedom,
    /// The projected step vanished.
    Stationary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationState {
    pub x: Vec<f64>,
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Outer iterations completed.
    pub iteration: usize,
    pub eval_count: usize,
    pub history: Vec<HistoryEntry>,
    /// Trust widths `σ` of the moving asymptotes (MMA only).
    pub sigma: Vec<f64>,
    pub rho: f64,
    pub termination: Option<Termination>,
}

impl OptimizationState {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Some(Termination::FtolRel | Termination::NoFreedom | Termination::Stationary)
        )
    }

    /// Objective values of accepted iterates, starting point first.
    pub fn accepted(&self) -> Vec<&HistoryEntry> {
        self.history.iter().filter(|h| h.accepted).collect()
    }
}

fn relative_stop(old: f64, new: f64, ftol_rel: f64) -> bool {
    let d = (new - old).abs();
    d < ftol_rel * 0.5 * (new.abs() + old.abs()) || new == old
}

struct Evaluator<'a, F, O> {
    f: F,
    observer: O,
    state: &'a mut OptimizationState,
    max_eval: usize,
}

impl<F, O> Evaluator<'_, F, O>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(&OptimizationState) -> Result<()>,
{
    fn exhausted(&self) -> bool {
        self.state.eval_count >= self.max_eval
    }

    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = (self.f)(x)?;
        if !v.is_finite() || g.len() != x.len() || g.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("objective returned a non-finite value or gradient"));
        }
        self.state.eval_count += 1;
        self.state.history.push(HistoryEntry {
            eval: self.state.eval_count,
            objective: v,
            x: x.to_vec(),
            accepted: false,
        });
        Ok((v, g))
    }

    fn accept(&mut self, x: Vec<f64>, v: f64, g: Vec<f64>) {
        if let Some(h) = self.state.history.last_mut() {
            h.accepted = true;
        }
        self.state.x = x;
        self.state.objective = v;
        self.state.gradient = g;
    }

    fn notify(&mut self) -> Result<()> {
        (self.observer)(self.state)
    }
}

/// Maximises `f` over the box `[lower, upper]` from `x0`. `f` returns the
/// objective and its gradient. `observer` runs after the initial point and
/// every outer iteration.
pub fn maximize<F, O>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    algorithm: Algorithm,
    criteria: ConvergenceCriteria,
    observer: O,
) -> Result<OptimizationState>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(&OptimizationState) -> Result<()>,
{
    criteria.validate()?;
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::invalid("bounds must match the design vector"));
    }
    if (0..n).any(|i| !(lower[i] <= upper[i]) || !x0[i].is_finite()) {
        return Err(Error::invalid("bounds must satisfy lower <= upper"));
    }
    let x: Vec<f64> = (0..n).map(|i| x0[i].clamp(lower[i], upper[i])).collect();
    let mut state = OptimizationState {
        x: x.clone(),
        objective: f64::NAN,
        gradient: vec![0.0; n],
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        iteration: 0,
        eval_count: 0,
        history: Vec::new(),
        sigma: (0..n).map(|i| 0.5 * (upper[i] - lower[i])).collect(),
        rho: 1.0,
        termination: None,
    };
    let mut ev = Evaluator {
        f,
        observer,
        state: &mut state,
        max_eval: criteria.max_eval,
    };
    let (v, g) = ev.eval(&x)?;
    ev.accept(x, v, g);
    ev.notify()?;
    if (0..n).all(|i| lower[i] == upper[i]) {
        ev.state.termination = Some(Termination::NoFreedom);
        return Ok(state);
    }
    match algorithm {
        Algorithm::Mma => mma(&mut ev, criteria)?,
        Algorithm::ProjectedGradient => projected_gradient(&mut ev, criteria)?,
    }
    Ok(state)
}

/// Minimiser of `(u dx + v dx²) / (σ² - dx²)` over `dx ∈ [lo, hi]`.
fn mma_coordinate_step(grad: f64, sigma: f64, rho: f64, lo: f64, hi: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let u = grad * sigma * sigma;
    let v = grad.abs() * sigma + 0.5 * rho;
    let ratio = u / (v * sigma);
    let dx = if u == 0.0 {
        0.0
    } else {
        (u / v) / (-1.0 - (1.0 - ratio * ratio).abs().sqrt())
    };
    let lim = MAX_STEP_FRACTION * sigma;
    dx.clamp(lo.max(-lim), hi.min(lim))
}

fn mma_model(grad: &[f64], sigma: &[f64], rho: f64, dx: &[f64]) -> (f64, f64) {
    let mut model = 0.0;
    let mut w = 0.0;
    for i in 0..dx.len() {
        if sigma[i] <= 0.0 {
            continue;
        }
        let s2 = sigma[i] * sigma[i];
        let d2 = dx[i] * dx[i];
        let denom = s2 - d2;
        let u = grad[i] * s2;
        let v = grad[i].abs() * sigma[i] + 0.5 * rho;
        model += (u * dx[i] + v * d2) / denom;
        w += 0.5 * d2 / denom;
    }
    (model, w)
}

fn mma<F, O>(ev: &mut Evaluator<'_, F, O>, criteria: ConvergenceCriteria) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(&OptimizationState) -> Result<()>,
{
    let n = ev.state.x.len();
    let (lower, upper) = (ev.state.lower.clone(), ev.state.upper.clone());
    let mut x_prev: Option<Vec<f64>> = None;
    let mut x_prev2: Option<Vec<f64>>;
    loop {
        if ev.exhausted() {
            ev.state.termination = Some(Termination::MaxEval);
            return Ok(());
        }
        let x = ev.state.x.clone();
        let f_center = -ev.state.objective;
        let grad: Vec<f64> = ev.state.gradient.iter().map(|g| -g).collect();
        let mut best: Option<(Vec<f64>, f64, Vec<f64>)> = None;
        let mut reset_done = false;
        let mut stalled = false;
        loop {
            let sigma = ev.state.sigma.clone();
            let dx: Vec<f64> = (0..n)
                .map(|i| mma_coordinate_step(grad[i], sigma[i], ev.state.rho, lower[i] - x[i], upper[i] - x[i]))
                .collect();
            if dx.iter().any(|d| !d.is_finite()) {
                if reset_done {
                    return Err(Error::invalid("MMA subproblem has no finite solution"));
                }
                reset_done = true;
                ev.state.sigma = (0..n).map(|i| 0.5 * (upper[i] - lower[i])).collect();
                ev.state.rho = 1.0;
                continue;
            }
            if dx.iter().all(|&d| d == 0.0) {
                stalled = true;
                break;
            }
            let trial: Vec<f64> = (0..n).map(|i| (x[i] + dx[i]).clamp(lower[i], upper[i])).collect();
            let (model, w) = mma_model(&grad, &sigma, ev.state.rho, &dx);
            let approx = f_center + model;
            let (v, g) = ev.eval(&trial)?;
            let f_trial = -v;
            if f_trial < best.as_ref().map_or(f_center, |b| -b.1) {
                best = Some((trial, v, g));
            }
            let conservative = f_trial <= approx;
            // Once an improvement is in hand, a trial indistinguishable from
            // the centre at the requested tolerance ends the inner loop.
            let negligible = best.is_some() && relative_stop(f_center, f_trial, criteria.ftol_rel);
            if conservative || negligible || ev.exhausted() {
                break;
            }
            ev.state.rho = (10.0 * ev.state.rho).min(1.1 * (ev.state.rho + (f_trial - approx) / w));
        }
        let old = ev.state.objective;
        let moved = best.is_some();
        if let Some((xb, vb, gb)) = best {
            let idx = ev.state.history.iter().rposition(|h| h.x == xb).expect("evaluated");
            ev.state.history[idx].accepted = true;
            ev.state.x = xb;
            ev.state.objective = vb;
            ev.state.gradient = gb;
        }
        ev.state.iteration += 1;
        x_prev2 = x_prev.take();
        x_prev = Some(x.clone());
        if let (Some(xp), Some(xpp)) = (&x_prev, &x_prev2) {
            for i in 0..n {
                let trend = (ev.state.x[i] - xp[i]) * (xp[i] - xpp[i]);
                let gamma = if trend < 0.0 {
                    0.7
                } else if trend > 0.0 {
                    1.2
                } else {
                    1.0
                };
                let width = upper[i] - lower[i];
                ev.state.sigma[i] = (ev.state.sigma[i] * gamma).clamp(1e-8 * width, 10.0 * width);
            }
        }
        ev.state.rho = (0.1 * ev.state.rho).max(RHO_MIN);
        ev.notify()?;
        if stalled {
            ev.state.termination = Some(Termination::Stationary);
            return Ok(());
        }
        if moved && relative_stop(old, ev.state.objective, criteria.ftol_rel) {
            ev.state.termination = Some(Termination::FtolRel);
            return Ok(());
        }
        if !moved && !ev.exhausted() {
            // Conservative but no improvement: the model is flat at the
            // iterate, which is stationary to working precision.
            ev.state.termination = Some(Termination::Stationary);
            return Ok(());
        }
    }
}

fn projected_gradient<F, O>(ev: &mut Evaluator<'_, F, O>, criteria: ConvergenceCriteria) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(&OptimizationState) -> Result<()>,
{
    let n = ev.state.x.len();
    let (lower, upper) = (ev.state.lower.clone(), ev.state.upper.clone());
    let width = (0..n).map(|i| upper[i] - lower[i]).fold(0.0, f64::max);
    let gmax = ev.state.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut step = if gmax > 0.0 { 0.1 * width / gmax } else { 1.0 };
    loop {
        if ev.exhausted() {
            ev.state.termination = Some(Termination::MaxEval);
            return Ok(());
        }
        let x = ev.state.x.clone();
        let g = ev.state.gradient.clone();
        let old = ev.state.objective;
        let mut accepted = false;
        loop {
            let trial: Vec<f64> = (0..n).map(|i| (x[i] + step * g[i]).clamp(lower[i], upper[i])).collect();
            let gain: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
            if gain <= 0.0 || trial == x {
                ev.state.termination = Some(Termination::Stationary);
                ev.notify()?;
                return Ok(());
            }
            let (v, gv) = ev.eval(&trial)?;
            if v >= old + ARMIJO_C * gain {
                ev.accept(trial, v, gv);
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
            if ev.exhausted() {
                break;
            }
        }
        ev.state.iteration += 1;
        ev.notify()?;
        if accepted && relative_stop(old, ev.state.objective, criteria.ftol_rel) {
            ev.state.termination = Some(Termination::FtolRel);
            return Ok(());
        }
    }
}

/// Files written by [`run`].
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub history: PathBuf,
    pub accepted: PathBuf,
    pub checkpoint: PathBuf,
    pub sensitivities: PathBuf,
    pub geometry: PathBuf,
}

impl RunArtifacts {
    pub fn in_dir(dir: &Path) -> Self {
        RunArtifacts {
            history: dir.join("history.csv"),
            accepted: dir.join("accepted.csv"),
            checkpoint: dir.join("checkpoint.json"),
            sensitivities: dir.join("sensitivities.csv"),
            geometry: dir.join("geometry_final.json"),
        }
    }
}

/// Outcome of an optimisation run on a scene.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub state: OptimizationState,
    pub final_scene: Scene,
    pub artifacts: Option<RunArtifacts>,
}

#[derive(Serialize)]
struct Checkpoint<'a> {
    iteration: usize,
    eval_count: usize,
    objective: f64,
    x: &'a [f64],
    sigma: &'a [f64],
    rho: f64,
}

/// `eval,J,a_or_norm_dx`: the radius for a radial design, otherwise the
/// distance of the evaluated point from the starting point.
pub fn write_history(path: &Path, state: &OptimizationState, x0: &[f64], radial: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["eval", "J", "a_or_norm_dx"])?;
    for h in &state.history {
        let metric = if radial {
            h.x[0]
        } else {
            h.x.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        w.write_record(&[h.eval.to_string(), h.objective.to_string(), metric.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_accepted(path: &Path, state: &OptimizationState) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iterate", "eval", "J"])?;
    for (i, h) in state.accepted().iter().enumerate() {
        w.write_record(&[i.to_string(), h.eval.to_string(), h.objective.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn persist(dir: &Path, state: &OptimizationState, x0: &[f64], radial: bool) -> Result<()> {
    let a = RunArtifacts::in_dir(dir);
    write_history(&a.history, state, x0, radial)?;
    write_accepted(&a.accepted, state)?;
    let cp = Checkpoint {
        iteration: state.iteration,
        eval_count: state.eval_count,
        objective: state.objective,
        x: &state.x,
        sigma: &state.sigma,
        rho: state.rho,
    };
    std::fs::write(&a.checkpoint, serde_json::to_string_pretty(&cp)? + "\n")?;
    Ok(())
}

/// Maximises the scene's objective over its design variables. With `out`,
/// the history and a checkpoint are rewritten after every iteration, and the
/// final geometry and sensitivities are written at the end.
pub fn run(
    scene: &Scene,
    problem: &Problem,
    algorithm: Algorithm,
    criteria: ConvergenceCriteria,
    out: Option<&Path>,
) -> Result<RunOutcome> {
    if problem.n_vars() == 0 {
        return Err(Error::Scene("scene has no design variables".into()));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let radial = matches!(problem.design, DesignMode::Radial { .. });
    let x0 = problem.initial();
    let (lo, hi) = problem.bounds();
    let mut last_sens = None;
    let state = maximize(
        |x| {
            let e = problem.evaluate(x, true)?;
            log::info!("J = {:.12e} at |x - x0| = {:.3e}", e.objective, dist(x, &x0));
            last_sens = e.sensitivities.map(|s| (x.to_vec(), s.coarse));
            Ok((e.objective, e.gradient))
        },
        &x0,
        &lo,
        &hi,
        algorithm,
        criteria,
        |s| match out {
            Some(dir) => persist(dir, s, &x0, radial),
            None => Ok(()),
        },
    )?;
    let final_scene = problem.scene_at(scene, &state.x)?;
    let artifacts = match out {
        Some(dir) => {
            persist(dir, &state, &x0, radial)?;
            let a = RunArtifacts::in_dir(dir);
            final_scene.save(&a.geometry)?;
            let sens = match last_sens {
                Some((x, s)) if x == state.x => s,
                _ => {
                    problem
                        .evaluate(&state.x, true)?
                        .sensitivities
                        .expect("gradient requested")
                        .coarse
                }
            };
            crate::adjoint::write_sensitivity_csv(&a.sensitivities, &sens)?;
            Some(a)
        }
        None => None,
    };
    Ok(RunOutcome {
        state,
        final_scene,
        artifacts,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        // Concave with maximum at (0.3, -0.2).
        let (a, b) = (x[0] - 0.3, x[1] + 0.2);
        Ok((1.0 - a * a - 4.0 * b * b, vec![-2.0 * a, -8.0 * b]))
    }

    #[test]
    fn mma_finds_interior_maximum() {
        let c = ConvergenceCriteria {
            ftol_rel: 1e-12,
            max_eval: 200,
        };
        let s = maximize(
            quadratic,
            &[0.9, 0.9],
            &[-1.0, -1.0],
            &[1.0, 1.0],
            Algorithm::Mma,
            c,
            |_| Ok(()),
        )
        .unwrap();
        assert!((s.x[0] - 0.3).abs() < 1e-4 && (s.x[1] + 0.2).abs() < 1e-4, "{:?}", s.x);
    }

    #[test]
    fn mma_accepted_values_increase() {
        let c = ConvergenceCriteria {
            ftol_rel: 1e-10,
            max_eval: 60,
        };
        let s = maximize(
            quadratic,
            &[-0.9, 0.9],
            &[-1.0, -1.0],
            &[1.0, 1.0],
            Algorithm::Mma,
            c,
            |_| Ok(()),
        )
        .unwrap();
        let acc = s.accepted();
        assert!(acc.windows(2).all(|w| w[1].objective >= w[0].objective));
    }

    #[test]
    fn mma_respects_bounds_at_active_constraint() {
        let c = ConvergenceCriteria {
            ftol_rel: 1e-12,
            max_eval: 100,
        };
        let s = maximize(
            quadratic,
            &[0.0, 0.0],
            &[-1.0, 0.0],
            &[0.1, 1.0],
            Algorithm::Mma,
            c,
            |_| Ok(()),
        )
        .unwrap();
        assert!(s.history.iter().all(|h| h.x[0] <= 0.1 && h.x[1] >= 0.0));
        assert!((s.x[0] - 0.1).abs() < 1e-6 && s.x[1].abs() < 1e-6, "{:?}", s.x);
    }

    #[test]
    fn projected_gradient_finds_maximum() {
        let c = ConvergenceCriteria {
            ftol_rel: 1e-12,
            max_eval: 400,
        };
        let s = maximize(
            quadratic,
            &[0.9, 0.9],
            &[-1.0, -1.0],
            &[1.0, 1.0],
            Algorithm::ProjectedGradient,
            c,
            |_| Ok(()),
        )
        .unwrap();
        assert!((s.x[0] - 0.3).abs() < 1e-3 && (s.x[1] + 0.2).abs() < 1e-3, "{:?}", s.x);
    }

    #[test]
    fn max_eval_is_respected() {
        let c = ConvergenceCriteria {
            ftol_rel: 1e-15,
            max_eval: 5,
        };
        let s = maximize(
            quadratic,
            &[0.9, 0.9],
            &[-1.0, -1.0],
            &[1.0, 1.0],
            Algorithm::Mma,
            c,
            |_| Ok(()),
        )
        .unwrap();
        assert!(s.eval_count <= 5);
        assert_eq!(s.termination, Some(Termination::MaxEval));
    }

    #[test]
    fn fixed_box_returns_immediately() {
        let s = maximize(
            quadratic,
            &[0.5, 0.5],
            &[0.5, 0.5],
            &[0.5, 0.5],
            Algorithm::Mma,
            ConvergenceCriteria::default(),
            |_| Ok(()),
        )
        .unwrap();
        assert_eq!(s.eval_count, 1);
        assert_eq!(s.termination, Some(Termination::NoFreedom));
    }

    #[test]
    fn algorithm_parses() {
        assert_eq!("MMA".parse::<Algorithm>().unwrap(), Algorithm::Mma);
        assert_eq!("pg".parse::<Algorithm>().unwrap(), Algorithm::ProjectedGradient);
        assert!("bfgs".parse::<Algorithm>().is_err());
    }
}
