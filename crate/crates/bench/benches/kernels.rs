use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use igbem::bem::assemble;
use igbem::kernels::{helmholtz_dgdn, helmholtz_g};
use igbem::linalg::{DenseMatrix, LuFactors};
use igbem::{scenes, Complex64, Discretization, Problem, Vec3, Wavenumber};

fn basis(c: &mut Criterion) {
    let (_, patch) = scenes::sphere_patches(3.0).unwrap().remove(0);
    c.bench_function("rational basis, quartic sphere patch", |b| {
        b.iter(|| patch.eval_basis(black_box(0.37), black_box(0.61)).unwrap())
    });
    c.bench_function("surface frame, quartic sphere patch", |b| {
        b.iter(|| patch.eval_surface(black_box(0.37), black_box(0.61)).unwrap())
    });
}

fn kernels(c: &mut Criterion) {
    let k = Wavenumber::new(1.0).unwrap();
    let r = Vec3::new(0.3, -0.2, 0.9);
    let n = Vec3::new(0.0, 0.0, 1.0);
    c.bench_function("helmholtz G", |b| b.iter(|| helmholtz_g(black_box(&r), k).unwrap()));
    c.bench_function("helmholtz dG/dn", |b| {
        b.iter(|| helmholtz_dgdn(black_box(&r), black_box(&n), k).unwrap())
    });
}

fn assembly(c: &mut Criterion) {
    let problem = Problem::from_scene(&scenes::sphere(3.0, 1).unwrap()).unwrap();
    let disc = Arc::new(Discretization::new(problem.analysis_template().clone(), problem.policy).unwrap());
    let mut group = c.benchmark_group("assembly");
    group.sample_size(10);
    group.bench_function("sphere N = 98", |b| {
        b.iter(|| assemble(&disc, &problem.incident).unwrap())
    });
    group.finish();
}

fn lu(c: &mut Criterion) {
    let n = 300;
    let data: Vec<Complex64> = (0..n * n)
        .map(|i| {
            let (r, col) = (i / n, i % n);
            let diag = if r == col { n as f64 } else { 0.0 };
            Complex64::new(
                diag + ((r * 7 + col * 13) % 17) as f64 / 17.0,
                ((r * 3 + col) % 11) as f64 / 11.0,
            )
        })
        .collect();
    let matrix = DenseMatrix::from_rows(n, n, data).unwrap();
    let mut group = c.benchmark_group("dense LU");
    group.sample_size(10);
    group.bench_function("factor n = 300", |b| {
        b.iter_batched(
            || matrix.clone(),
            |m| LuFactors::factor(m).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, basis, kernels, assembly, lu);
criterion_main!(benches);
