use std::sync::Arc;

use igbem::bem::{assemble, read_matrix};
use igbem::{scenes, Complex64, Discretization, IncidentField, Problem, Vec3, Wavenumber};

fn laplace_system(scene: &igbem::Scene) -> igbem::BemSystem {
    let problem = Problem::from_scene(scene).unwrap();
    let disc = Arc::new(Discretization::new(problem.analysis_template().clone(), problem.policy).unwrap());
    let k = Wavenumber::new(0.0).unwrap();
    let incident = IncidentField::plane_wave(Vec3::new(0.0, 0.0, -1.0), k).unwrap();
    assemble(&disc, &incident).unwrap()
}

/// At `k = 0` a constant density reproduces itself, so every row sums to one.
fn assert_rows_sum_to_one(system: &igbem::BemSystem, tol: f64) {
    let ones = vec![Complex64::new(1.0, 0.0); system.matrix.cols()];
    let worst = system
        .matrix
        .mul_vec(&ones)
        .iter()
        .map(|v| (v - 1.0).norm())
        .fold(0.0, f64::max);
    assert!(worst < tol, "max |A·1 - 1| = {worst:e}");
}

#[test]
fn laplace_rows_reproduce_constants_on_the_sphere() {
    let system = laplace_system(&scenes::sphere(1.0, 1).unwrap());
    assert_rows_sum_to_one(&system, 1e-12);
    for &c in &system.free_terms {
        assert!((c - 0.5).abs() < 1e-6, "free term {c}");
    }
}

#[test]
fn laplace_rows_reproduce_constants_on_the_cube() {
    let system = laplace_system(&scenes::cube(1.0).unwrap());
    assert_rows_sum_to_one(&system, 1e-12);
    let mut system = system;
    let u = system.solve().unwrap();
    for v in u.coefficients() {
        assert!((v - 1.0).norm() < 1e-10);
    }
}

#[test]
fn matrix_dump_round_trips() {
    let mut system = laplace_system(&scenes::sphere(1.0, 1).unwrap());
    let solution = system.solve().unwrap();
    let dir = tempfile::tempdir().unwrap();
    system.dump(dir.path(), Some(solution.coefficients())).unwrap();
    let (rows, cols, a) = read_matrix(dir.path().join("A.bin")).unwrap();
    assert_eq!((rows, cols), (system.matrix.rows(), system.matrix.cols()));
    assert_eq!(a, system.matrix.data());
    let (n, one, b) = read_matrix(dir.path().join("b.bin")).unwrap();
    assert_eq!((n, one), (rows, 1));
    assert_eq!(b, system.rhs);
    let (_, _, u) = read_matrix(dir.path().join("u.bin")).unwrap();
    assert_eq!(u, solution.coefficients());
}

#[test]
fn truncated_matrix_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bin");
    std::fs::write(&path, [2u8, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 1]).unwrap();
    assert!(read_matrix(&path).is_err());
}

#[test]
fn sphere_field_matches_the_series_solution() {
    let problem = Problem::from_scene(&scenes::sphere(3.0, 3).unwrap()).unwrap();
    let eval = problem.evaluate(&problem.initial(), false).unwrap();
    let exact = igbem::oracle::SphereSeries::new(1.0, 3.0, 8.5, 0.0)
        .total_field()
        .unwrap();
    let err = (eval.observed[0] - exact).norm() / exact.norm();
    assert!(err < 1e-3, "relative error {err:e}");
    assert!(eval.residual < igbem::bem::RESIDUAL_LIMIT);
}
