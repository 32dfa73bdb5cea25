//! `igbem`: forward solves, gradient checks, sweeps and shape optimisation
//! of sound-hard NURBS scatterers.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;

use igbem::fields::{self, PlaneGrid};
use igbem::optimize::{self, Termination};
use igbem::scene::{DesignMode, DesignSpec};
use igbem::scenes::{self, Incidence};
use igbem::{oracle, Algorithm, ConvergenceCriteria, IncidentField, Problem, Scene, Wavenumber};

#[derive(Parser, Debug)]
#[command(
    name = "igbem",
    version,
    about = "Isogeometric BEM acoustic scattering and shape optimisation"
)]
struct Cli {
    /// Worker threads for assembly and field sampling (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Forward solve; writes observations, surface and optional plane fields.
    Solve(Options),
    /// Maximise the objective over the scene's design variables.
    Optimize(Options),
    /// Compare adjoint sensitivities with central finite differences.
    GradientCheck(Options),
    /// Optimise the radius of the verification sphere and compare with the series.
    VerifySphere(Options),
    /// Objective over a range of radii (`--a`) or wavenumbers (`--k-range`).
    Sweep(Options),
    /// Write a built-in scene as JSON.
    Generate(GenerateArgs),
    /// Any of the above selected with `--mode`.
    Run {
        #[arg(long, value_enum)]
        mode: Mode,
        #[command(flatten)]
        options: Options,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Solve,
    Optimize,
    GradientCheck,
    VerifySphere,
    Sweep,
}

#[derive(Args, Debug, Clone)]
struct Options {
    /// Scene JSON file.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the incident wavenumber.
    #[arg(long)]
    k: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    ftol_rel: f64,
    #[arg(long, default_value_t = 100)]
    max_eval: usize,
    #[arg(long, value_enum, default_value = "mma")]
    algorithm: AlgorithmArg,
    /// Write A.bin, b.bin and u.bin of the forward system.
    #[arg(long)]
    dump_matrices: bool,
    /// Cross-section for `plane_field.csv`, e.g. `y=0.5`.
    #[arg(long)]
    plane: Option<String>,
    /// In-plane ranges `a0:a1,b0:b1` (default: body box plus a margin).
    #[arg(long)]
    range: Option<String>,
    /// Plane samples per in-plane axis, `na,nb`.
    #[arg(long, default_value = "41,41")]
    resolution: String,
    /// Surface samples per parameter direction and patch.
    #[arg(long, default_value_t = 11)]
    surface_samples: usize,
    /// Number of coordinates checked by `gradient-check`.
    #[arg(long, default_value_t = 5)]
    samples: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Initial radius for `verify-sphere`.
    #[arg(long, default_value_t = 3.0)]
    a0: f64,
    /// Analysis unknowns for `verify-sphere` (866, 2402, 3458, ...).
    #[arg(long = "N", default_value_t = 866)]
    n_unknowns: usize,
    /// Radius range `lo:hi:step` for `sweep`.
    #[arg(long)]
    a: Option<String>,
    /// Wavenumber range `lo:hi:step` for `sweep`.
    #[arg(long)]
    k_range: Option<String>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    distance_ratio: Option<f64>,
    #[arg(long)]
    base_order: Option<usize>,
    #[arg(long)]
    singular_order: Option<usize>,
    #[arg(long)]
    quad_tol: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Mma,
    Pg,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Mma => Algorithm::Mma,
            AlgorithmArg::Pg => Algorithm::ProjectedGradient,
        }
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    name: SceneName,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
    /// Sphere radius.
    #[arg(long, default_value_t = 3.0)]
    radius: f64,
    /// Span subdivisions for the sphere (9 gives N = 866) or the duct.
    #[arg(long)]
    subdivisions: Option<usize>,
    /// Wavenumber for the cube and the duct.
    #[arg(long)]
    k: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SceneName {
    Sphere,
    Cube,
    Reflector,
    ResonatorVertical,
    ResonatorHorizontal,
    Duct,
}

/// Failure with its exit status: 1 configuration (including bad arguments),
/// 2 solver, 3 not converged.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CliResult<T> = std::result::Result<T, Failure>;

trait Classify<T> {
    fn config(self) -> CliResult<T>;
    fn solver(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn config(self) -> CliResult<T> {
        self.map_err(|e| Failure {
            code: 1,
            error: e.into(),
        })
    }
    fn solver(self) -> CliResult<T> {
        self.map_err(|e| Failure {
            code: 2,
            error: e.into(),
        })
    }
}

fn not_converged(msg: String) -> Failure {
    Failure {
        code: 3,
        error: anyhow!(msg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IGBEM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .config()?;
    }
    match cli.command {
        Command::Generate(args) => generate(&args),
        Command::Solve(o) => dispatch(Mode::Solve, &o),
        Command::Optimize(o) => dispatch(Mode::Optimize, &o),
        Command::GradientCheck(o) => dispatch(Mode::GradientCheck, &o),
        Command::VerifySphere(o) => dispatch(Mode::VerifySphere, &o),
        Command::Sweep(o) => dispatch(Mode::Sweep, &o),
        Command::Run { mode, options } => dispatch(mode, &options),
    }
}

fn dispatch(mode: Mode, o: &Options) -> CliResult<()> {
    std::fs::create_dir_all(&o.out)
        .with_context(|| format!("creating output directory {}", o.out.display()))
        .config()?;
    match mode {
        Mode::Solve => solve(o),
        Mode::Optimize => optimize_scene(o),
        Mode::GradientCheck => gradient_check(o),
        Mode::VerifySphere => verify_sphere(o),
        Mode::Sweep => sweep(o),
    }
}

fn load_scene(o: &Options) -> CliResult<Scene> {
    let path = o
        .scene
        .as_ref()
        .ok_or_else(|| anyhow!("--scene is required for this mode"))
        .config()?;
    let mut scene = Scene::load(path)
        .with_context(|| format!("loading scene {}", path.display()))
        .config()?;
    apply_overrides(&mut scene, o).config()?;
    Ok(scene)
}

fn apply_overrides(scene: &mut Scene, o: &Options) -> anyhow::Result<()> {
    if let Some(k) = o.k {
        let igbem::scene::IncidentSpec::Planewave { wavenumber, .. } = &mut scene.incident;
        *wavenumber = k;
    }
    let mut policy = scene.policy();
    if let Some(v) = o.max_depth {
        policy.max_depth = v;
    }
    if let Some(v) = o.distance_ratio {
        policy.distance_ratio = v;
    }
    if let Some(v) = o.base_order {
        policy.base_order = v;
    }
    if let Some(v) = o.singular_order {
        policy.singular_order = v;
    }
    if let Some(v) = o.quad_tol {
        policy.tolerance = v;
    }
    if policy != scene.policy() {
        scene.quadrature = Some(policy);
    }
    scene.validate()?;
    Ok(())
}

fn patch_ids(scene: &Scene) -> Vec<String> {
    scene.patches.iter().map(|p| p.id.clone()).collect()
}

fn parse_pair<T: std::str::FromStr>(s: &str, sep: char) -> anyhow::Result<(T, T)> {
    let (a, b) = s
        .split_once(sep)
        .ok_or_else(|| anyhow!("expected two values in '{s}'"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| anyhow!("bad number '{v}' in '{s}'"));
    Ok((p(a)?, p(b)?))
}

fn parse_range(s: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("bad number '{v}' in range '{s}'"))
        })
        .collect::<anyhow::Result<_>>()?;
    let [lo, hi, step] = parts[..] else {
        bail!("range '{s}' must be lo:hi:step");
    };
    if !(step > 0.0) || !(hi >= lo) {
        bail!("range '{s}' needs lo <= hi and a positive step");
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

fn plane_grid(o: &Options, problem: &Problem, x: &[f64]) -> anyhow::Result<Option<PlaneGrid>> {
    let Some(spec) = &o.plane else {
        return Ok(None);
    };
    let mut grid: PlaneGrid = spec.parse()?;
    grid.resolution = parse_pair(&o.resolution, ',')?;
    match &o.range {
        Some(r) => {
            let (a, b) = r
                .split_once(',')
                .ok_or_else(|| anyhow!("--range must be a0:a1,b0:b1"))?;
            grid.range_a = parse_pair(a, ':')?;
            grid.range_b = parse_pair(b, ':')?;
        }
        None => {
            let (lo, hi) = problem.design_model(x)?.bounding_box();
            let margin = 0.5 * (hi - lo).norm();
            grid = grid.fit_to_box(&lo, &hi, margin);
        }
    }
    grid.points()?;
    Ok(Some(grid))
}

/// Writes observations, surface field and plane field for the design `x`.
fn write_fields(o: &Options, scene: &Scene, problem: &Problem, x: &[f64]) -> CliResult<igbem::Evaluation> {
    let grid = plane_grid(o, problem, x).config()?;
    let mut analysis = problem.analyze(x).solver()?;
    if o.dump_matrices {
        analysis
            .system
            .dump(&o.out, Some(analysis.solution.coefficients()))
            .solver()?;
    }
    let eval = problem.evaluate_analysis(x, &mut analysis, false).solver()?;
    fields::write_observations(
        o.out.join("observations.csv"),
        &problem.objective.points,
        &eval.observed,
    )
    .solver()?;
    let surface = fields::sample_surface(&analysis.solution, o.surface_samples).config()?;
    fields::write_surface_field(o.out.join("surface_field.csv"), &surface, &patch_ids(scene)).solver()?;
    if let Some(grid) = grid {
        let samples = fields::sample_plane(&analysis.solution, &grid).solver()?;
        fields::write_plane_field(o.out.join("plane_field.csv"), &samples).solver()?;
    }
    Ok(eval)
}

fn solve(o: &Options) -> CliResult<()> {
    let scene = load_scene(o)?;
    let problem = Problem::from_scene(&scene).config()?;
    let x = problem.initial();
    let eval = write_fields(o, &scene, &problem, &x)?;
    println!("N = {}", problem.analysis_template().n_unknowns());
    println!("J = {:.12e}", eval.objective);
    for (p, u) in problem.objective.points.iter().zip(&eval.observed) {
        println!(
            "u({}, {}, {}) = {:.12e} {:+.12e}i  |u| = {:.12e}",
            p.x,
            p.y,
            p.z,
            u.re,
            u.im,
            u.norm()
        );
    }
    println!("relative residual = {:.3e}", eval.residual);
    if !eval.quadrature_converged {
        log::warn!("some singular integrals did not converge");
    }
    Ok(())
}

fn optimize_scene(o: &Options) -> CliResult<()> {
    let scene = load_scene(o)?;
    let problem = Problem::from_scene(&scene).config()?;
    if problem.n_vars() == 0 {
        return Err(anyhow!("scene '{}' has no design variables", scene.name)).config();
    }
    let criteria = ConvergenceCriteria {
        ftol_rel: o.ftol_rel,
        max_eval: o.max_eval,
    };
    criteria.validate().config()?;
    let outcome = optimize::run(&scene, &problem, o.algorithm.into(), criteria, Some(&o.out)).solver()?;
    let state = &outcome.state;
    let initial = state.history.first().map_or(f64::NAN, |h| h.objective);
    write_fields(o, &outcome.final_scene, &problem, &state.x)?;
    println!("J: {initial:.6e} -> {:.6e}", state.objective);
    println!("evaluations: {}, iterations: {}", state.eval_count, state.iteration);
    if let DesignMode::Radial { .. } = problem.design {
        println!("a = {:.8}", state.x[0]);
    }
    match state.termination {
        Some(Termination::MaxEval) => Err(not_converged(format!(
            "no convergence within {} evaluations",
            o.max_eval
        ))),
        _ => Ok(()),
    }
}

fn gradient_check(o: &Options) -> CliResult<()> {
    let scene = load_scene(o)?;
    let problem = Problem::from_scene(&scene).config()?;
    let n = problem.n_vars();
    if n == 0 {
        return Err(anyhow!("scene has no design variables")).config();
    }
    let x0 = problem.initial();
    let (lo, hi) = problem.bounds();
    let base = problem.evaluate(&x0, true).solver()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(o.seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(o.samples.min(n));
    let mut w = csv::Writer::from_path(o.out.join("gradient_check.csv")).solver()?;
    w.write_record(["index", "adjoint", "finite_difference", "relative_error"])
        .solver()?;
    let mut worst: f64 = 0.0;
    for &i in &idx {
        let h = o.step.min(hi[i] - x0[i]).min(x0[i] - lo[i]);
        if !(h > 0.0) {
            return Err(anyhow!("coordinate {i} has no room for a finite difference")).config();
        }
        let mut xp = x0.clone();
        xp[i] += h;
        let mut xm = x0.clone();
        xm[i] -= h;
        let jp = problem.evaluate(&xp, false).solver()?.objective;
        let jm = problem.evaluate(&xm, false).solver()?.objective;
        let fd = (jp - jm) / (2.0 * h);
        let adj = base.gradient[i];
        let rel = (adj - fd).abs() / fd.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        println!("x[{i}]: adjoint {adj:.8e}  fd {fd:.8e}  rel err {rel:.3e}");
        w.write_record(&[i.to_string(), adj.to_string(), fd.to_string(), rel.to_string()])
            .solver()?;
    }
    w.flush().solver()?;
    let sens = base.sensitivities.expect("gradient requested");
    igbem::adjoint::write_sensitivity_csv(o.out.join("sensitivities.csv"), &sens.coarse).solver()?;
    println!("max relative error {worst:.3e}");
    if worst >= 1e-2 {
        return Err(not_converged(format!(
            "gradient check failed: max relative error {worst:.3e}"
        )));
    }
    Ok(())
}

/// Span subdivisions giving `n` unknowns on the six-patch sphere.
fn sphere_subdivisions(n: usize) -> anyhow::Result<usize> {
    (1..200)
        .find(|&m| {
            let c = m + 4;
            6 * c * c - 12 * c + 8 == n
        })
        .ok_or_else(|| anyhow!("no sphere refinement gives N = {n} (866, 2402, 3458, ...)"))
}

fn verify_sphere(o: &Options) -> CliResult<()> {
    let m = sphere_subdivisions(o.n_unknowns).config()?;
    let mut scene = scenes::sphere(3.0, m).config()?;
    if let Some(path) = &o.scene {
        scene = Scene::load(path).config()?;
        scene.refinement.default = [m, m];
    }
    apply_overrides(&mut scene, o).config()?;
    let DesignSpec::Radial { lower, upper, .. } = scene.design else {
        return Err(anyhow!("verify-sphere needs a radial design")).config();
    };
    if !(o.a0 >= lower && o.a0 <= upper) {
        return Err(anyhow!("a0 = {} outside [{lower}, {upper}]", o.a0)).config();
    }
    let problem = Problem::from_scene(&scene).config()?;
    let k = problem.incident.wavenumber().value();
    let z = problem
        .objective
        .points
        .first()
        .ok_or_else(|| anyhow!("scene has no observation point"))
        .config()?
        .norm();
    let criteria = ConvergenceCriteria {
        ftol_rel: o.ftol_rel,
        max_eval: o.max_eval,
    };
    // Start the optimiser from a0 by moving the design base radius there.
    let start_scene = problem.scene_at(&scene, &[o.a0]).solver()?;
    let problem = Problem::from_scene(&start_scene).config()?;
    let outcome = optimize::run(&start_scene, &problem, o.algorithm.into(), criteria, Some(&o.out)).solver()?;
    let (a, j) = (outcome.state.x[0], outcome.state.objective);
    let (a_ref, j_ref) = oracle::brent_optimize_radius(k, z, lower, upper, o.a0, 1e-10).solver()?;
    println!("N = {}, evaluations = {}", o.n_unknowns, outcome.state.eval_count);
    println!("BEM + MMA: a = {a:.6}, J = {j:.6}");
    println!("series:    a = {a_ref:.6}, J = {j_ref:.6}");
    let ok = (a - a_ref).abs() <= 1e-2 && (j - j_ref).abs() <= 5e-3;
    if outcome.state.termination == Some(Termination::MaxEval) {
        return Err(not_converged(format!(
            "no convergence within {} evaluations",
            o.max_eval
        )));
    }
    if !ok {
        return Err(not_converged("optimum disagrees with the analytic series".into()));
    }
    println!("agreement: ok");
    Ok(())
}

fn sweep(o: &Options) -> CliResult<()> {
    let scene = load_scene(o)?;
    let problem = Problem::from_scene(&scene).config()?;
    let path = o.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).solver()?;
    match (&o.a, &o.k_range) {
        (Some(r), None) => {
            let DesignMode::Radial { .. } = problem.design else {
                return Err(anyhow!("--a needs a scene with a radial design")).config();
            };
            let values = parse_range(r).config()?;
            let (lo, hi) = problem.bounds();
            w.write_record(["a", "J"]).solver()?;
            for a in values {
                if a < lo[0] || a > hi[0] {
                    return Err(anyhow!("radius {a} outside [{}, {}]", lo[0], hi[0])).config();
                }
                let j = problem.evaluate(&[a], false).solver()?.objective;
                println!("a = {a:.4}  J = {j:.8}");
                w.write_record(&[a.to_string(), j.to_string()]).solver()?;
            }
        }
        (None, Some(r)) => {
            let values = parse_range(r).config()?;
            let x = problem.initial();
            w.write_record(["k", "J"]).solver()?;
            let dir = problem.incident.direction();
            for k in values {
                let incident = IncidentField::plane_wave(dir, Wavenumber::new(k).config()?).config()?;
                let p = problem.clone().with_incident(incident);
                let j = p.evaluate(&x, false).solver()?.objective;
                println!("k = {k:.4}  J = {j:.8}");
                w.write_record(&[k.to_string(), j.to_string()]).solver()?;
            }
        }
        _ => return Err(anyhow!("sweep needs exactly one of --a or --k-range")).config(),
    }
    w.flush().solver()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn generate(args: &GenerateArgs) -> CliResult<()> {
    let scene = match args.name {
        SceneName::Sphere => scenes::sphere(args.radius, args.subdivisions.unwrap_or(9)),
        SceneName::Cube => scenes::cube(args.k.unwrap_or(1.0)),
        SceneName::Reflector => scenes::reflector(),
        SceneName::ResonatorVertical => scenes::resonator(Incidence::Vertical),
        SceneName::ResonatorHorizontal => scenes::resonator(Incidence::Horizontal),
        SceneName::Duct => scenes::duct(args.k.unwrap_or(1.0), args.subdivisions.unwrap_or(1)),
    }
    .config()?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).config()?;
    }
    scene.save(&args.out).config()?;
    println!("wrote {}", display(&args.out));
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
