//! Property tests for the shared kernels: invariants that must hold for any
//! finite input, not just the hand-picked cases.

use lapform_core::{layer_norm, softmax_rows, thin_svd, Matrix, TokenBatch};
use proptest::prelude::*;

fn finite_entries(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_stochastic(data in finite_entries(12)) {
        let m = Matrix::new(3, 4, data).unwrap();
        let p = softmax_rows(&m).unwrap();
        for r in 0..3 {
            let sum: f64 = p.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(p.row(r).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn softmax_is_shift_invariant(data in finite_entries(4), shift in -100.0..100.0f64) {
        let base = Matrix::new(1, 4, data.clone()).unwrap();
        let moved = Matrix::new(1, 4, data.iter().map(|v| v + shift).collect()).unwrap();
        let a = softmax_rows(&base).unwrap();
        let b = softmax_rows(&moved).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_output_lands_on_the_sqrt_d_sphere(data in finite_entries(8)) {
        // Skip near-constant tokens, where the eps floor dominates.
        let mean = data.iter().sum::<f64>() / 8.0;
        let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
        prop_assume!(var > 1e-3);
        let x = TokenBatch::new(1, 1, 8, data).unwrap();
        let y = layer_norm(&x, &[1.0; 8], &[0.0; 8], 1e-12).unwrap();
        let norm = y.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 8.0_f64.sqrt()).abs() <= 1e-9);
    }

    #[test]
    fn svd_reconstructs_and_orders(data in finite_entries(24)) {
        let m = Matrix::new(6, 4, data).unwrap();
        let svd = thin_svd(&m).unwrap();
        for w in svd.s.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        let mut us = svd.u.clone();
        for i in 0..us.rows() {
            for j in 0..svd.s.len() {
                us.set(i, j, us.get(i, j) * svd.s[j]);
            }
        }
        let err = us.matmul(&svd.vt).unwrap().sub(&m).unwrap().frobenius_norm();
        prop_assert!(err <= 1e-8 * m.frobenius_norm().max(1.0));
    }
}
