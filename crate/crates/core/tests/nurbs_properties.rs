use igbem::nurbs::{Direction, KnotVector, NurbsPatch};
use igbem::Point3;
use proptest::prelude::*;

/// Clamped knot vector of degree `p` with sorted interior knots.
fn knot_vector(p: usize, mut interior: Vec<f64>) -> KnotVector {
    interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
    interior.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    let mut knots = vec![0.0; p + 1];
    knots.extend(interior);
    knots.extend(vec![1.0; p + 1]);
    KnotVector::new(p, knots).unwrap()
}

fn patch_strategy() -> impl Strategy<Value = NurbsPatch> {
    (
        1usize..=4,
        1usize..=4,
        prop::collection::vec(0.05f64..0.95, 0..4),
        prop::collection::vec(0.05f64..0.95, 0..4),
        any::<u64>(),
    )
        .prop_map(|(ps, pt, is, it, seed)| {
            let ks = knot_vector(ps, is);
            let kt = knot_vector(pt, it);
            let (ns, nt) = (ks.basis_count(), kt.basis_count());
            let mut state = seed | 1;
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let mut cps = Vec::with_capacity(ns * nt);
            let mut weights = Vec::with_capacity(ns * nt);
            for k in 0..ns {
                for l in 0..nt {
                    let (s, t) = (k as f64 / (ns - 1) as f64, l as f64 / (nt - 1) as f64);
                    cps.push(Point3::new(s, t, 0.3 * next() + 0.2 * s * t));
                    weights.push(0.5 + next());
                }
            }
            NurbsPatch::new(ks, kt, cps, weights).unwrap()
        })
}

proptest! {
    #[test]
    fn b_spline_basis_is_a_partition_of_unity(
        p in 1usize..=5,
        interior in prop::collection::vec(0.01f64..0.99, 0..6),
        u in 0.0f64..=1.0,
    ) {
        let kv = knot_vector(p, interior);
        let b = kv.local_basis(u);
        let sum: f64 = b.ders[0][..b.order].iter().sum();
        let dsum: f64 = b.ders[1][..b.order].iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-13);
        prop_assert!(dsum.abs() < 1e-9 * (1.0 + b.ders[1][..b.order].iter().map(|d| d.abs()).sum::<f64>()));
        prop_assert!(b.ders[0][..b.order].iter().all(|&v| v >= -1e-15));
    }

    #[test]
    fn rational_basis_is_a_partition_of_unity(patch in patch_strategy(), s in 0.0f64..=1.0, t in 0.0f64..=1.0) {
        let b = patch.eval_basis(s, t).unwrap();
        let sum: f64 = b.r[..b.len()].iter().sum();
        let ds: f64 = b.r_s[..b.len()].iter().sum();
        let dt: f64 = b.r_t[..b.len()].iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-13);
        prop_assert!(ds.abs() < 1e-8 && dt.abs() < 1e-8);
    }

    #[test]
    fn knot_insertion_preserves_the_surface(
        patch in patch_strategy(),
        u in 0.02f64..0.98,
        along_s in any::<bool>(),
    ) {
        let dir = if along_s { Direction::S } else { Direction::T };
        let kv = if along_s { patch.knots_s() } else { patch.knots_t() };
        prop_assume!(kv.multiplicity(u) < kv.degree());
        let refined = patch.insert_knot(dir, u).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let (s, t) = (i as f64 / 6.0, j as f64 / 6.0);
                let d = (patch.point(s, t).unwrap() - refined.point(s, t).unwrap()).norm();
                prop_assert!(d < 1e-10, "moved by {d} at ({s}, {t})");
            }
        }
    }

    #[test]
    fn span_subdivision_preserves_the_surface(patch in patch_strategy(), ms in 1usize..4, mt in 1usize..4) {
        let (refined, _) = patch.subdivide(ms, mt).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let (s, t) = (i as f64 / 8.0, j as f64 / 8.0);
                let d = (patch.point(s, t).unwrap() - refined.point(s, t).unwrap()).norm();
                prop_assert!(d < 1e-10);
            }
        }
    }

    #[test]
    fn surface_derivatives_match_finite_differences(
        patch in patch_strategy(),
        s in 0.05f64..0.95,
        t in 0.05f64..0.95,
    ) {
        let h = 1e-6;
        let f = patch.eval_surface(s, t).unwrap();
        let ds = (patch.point(s + h, t).unwrap() - patch.point(s - h, t).unwrap()) / (2.0 * h);
        let dt = (patch.point(s, t + h).unwrap() - patch.point(s, t - h).unwrap()) / (2.0 * h);
        let scale = 1.0 + f.tangent_s.norm() + f.tangent_t.norm();
        // Knots make derivatives one-sided; skip points within h of a knot.
        let near_knot = |kv: &KnotVector, u: f64| kv.knots().iter().any(|k| (k - u).abs() < 2.0 * h);
        prop_assume!(!near_knot(patch.knots_s(), s) && !near_knot(patch.knots_t(), t));
        prop_assert!((ds - f.tangent_s).norm() < 1e-6 * scale);
        prop_assert!((dt - f.tangent_t).norm() < 1e-6 * scale);
        prop_assert!((f.normal.norm() - 1.0).abs() < 1e-12);
        prop_assert!(f.normal.dot(&f.tangent_s).abs() < 1e-9 * scale);
    }
}

#[test]
fn sphere_refinement_keeps_points_on_the_sphere() {
    for (_, patch) in igbem::scenes::sphere_patches(3.0).unwrap() {
        let (refined, _) = patch.subdivide(9, 9).unwrap();
        for i in 0..=10 {
            for j in 0..=10 {
                let p = refined.point(i as f64 / 10.0, j as f64 / 10.0).unwrap();
                assert!((p.norm() - 3.0).abs() < 1e-12);
            }
        }
    }
}
