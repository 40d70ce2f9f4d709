use proptest::prelude::*;

use smaat_core::attack::{project_ball, row_norms, Norm};
use smaat_core::linalg::{nearest_two_distances, standardize, sym_eigen, Matrix};
use smaat_core::manifold::{classify, fit_layer_manifold, ManifoldLabel};

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |v| Matrix::new(r, c, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn neighbours_are_permutation_equivariant(m in matrix(3..25, 1..5), seed in any::<u64>()) {
        let n = m.rows();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let base = nearest_two_distances(&m).unwrap();
        let permuted = nearest_two_distances(&m.select_rows(&perm)).unwrap();
        prop_assert_eq!(base.excluded, permuted.excluded);
        let lookup = |pairs: &[smaat_core::linalg::NeighborPair], i: usize| {
            pairs.iter().find(|p| p.index == i).map(|p| (p.r1, p.r2))
        };
        for (new_i, &old_i) in perm.iter().enumerate() {
            prop_assert_eq!(lookup(&permuted.pairs, new_i), lookup(&base.pairs, old_i));
        }
    }

    #[test]
    fn standardize_is_idempotent(m in matrix(2..30, 1..6)) {
        let (once, _) = standardize(&m, None).unwrap();
        let (twice, _) = standardize(&once, None).unwrap();
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn eigen_trace_and_orthonormality(m in matrix(2..7, 2..3)) {
        let a = m.t_matmul(&m).unwrap();
        let e = sym_eigen(&a).unwrap();
        let trace: f64 = (0..a.rows()).map(|i| a[(i, i)]).sum();
        prop_assert!((trace - e.values.iter().sum::<f64>()).abs() < 1e-8 * trace.max(1.0));
        let g = e.vectors.t_matmul(&e.vectors).unwrap();
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g[(i, j)] - want).abs() < 1e-8);
            }
        }
        prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn projection_lands_in_ball(m in matrix(1..6, 1..6), eps in 0.01f64..3.0) {
        for norm in [Norm::Linf, Norm::L2] {
            let p = project_ball(&m, eps, norm);
            prop_assert!(row_norms(&p, norm).iter().all(|n| *n <= eps + 1e-9));
            let again = project_ball(&p, eps, norm);
            for (a, b) in again.as_slice().iter().zip(p.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn label_flips_once_as_gamma_falls(m in matrix(8..20, 3..5), row in 0usize..8, k in 1usize..3) {
        let man = fit_layer_manifold(&m, 0).unwrap();
        let x = m.row(row);
        let e = classify(&man, x, k, 1.0).unwrap().error_norm;
        prop_assume!(e > 1e-6);
        let labels: Vec<ManifoldLabel> = [4.0, 2.0, 1.0, 0.5, 0.25]
            .iter()
            .map(|f| classify(&man, x, k, e * f).unwrap().label)
            .collect();
        prop_assert_eq!(labels, vec![
            ManifoldLabel::Onm, ManifoldLabel::Onm, ManifoldLabel::Onm,
            ManifoldLabel::Ofm, ManifoldLabel::Ofm,
        ]);
    }
}
