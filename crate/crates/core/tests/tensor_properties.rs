use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stshadow::tensor::{project_psd, random, relative_entropy, CMatrix, LabelledOperator, LegLabel, C64};

fn legs(n: u32) -> Vec<LegLabel> {
    (0..n).map(|q| LegLabel::out(q, 0)).collect()
}

/// `log2` of a positive definite matrix through the real symmetric
/// embedding `[[A, -B], [B, A]]` of `A + iB`.
fn log2_via_real_embedding(m: &CMatrix) -> CMatrix {
    let d = m.nrows();
    let mut real = DMatrix::<f64>::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            let z = m[(i, j)];
            real[(i, j)] = z.re;
            real[(i + d, j + d)] = z.re;
            real[(i, j + d)] = -z.im;
            real[(i + d, j)] = z.im;
        }
    }
    let eig = real.symmetric_eigen();
    let logs = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.log2()));
    let l = &eig.eigenvectors * logs * eig.eigenvectors.transpose();
    CMatrix::from_fn(d, d, |i, j| C64::new(l[(i, j)], l[(i + d, j)]))
}

fn oracle(rho: &CMatrix, sigma: &CMatrix) -> f64 {
    let r = rho / rho.trace();
    let s = sigma / sigma.trace();
    (&r * (log2_via_real_embedding(&r) - log2_via_real_embedding(&s))).trace().re
}

fn full_rank(rng: &mut ChaCha8Rng, d: usize) -> CMatrix {
    let m = random::density_matrix(rng, d, d);
    m * C64::new(0.9, 0.0) + CMatrix::identity(d, d) * C64::new(0.1 / d as f64, 0.0)
}

#[test]
fn relative_entropy_matches_matrix_log_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..100 {
        let n = 1 + i % 3;
        let d = 1 << n;
        let rho = full_rank(&mut rng, d);
        let sigma = full_rank(&mut rng, d) * C64::new(rho.trace().re, 0.0);
        let a = LabelledOperator::new(rho.clone(), legs(n as u32)).unwrap();
        let b = LabelledOperator::new(sigma.clone(), legs(n as u32)).unwrap();
        let got = relative_entropy(&a, &b).unwrap();
        assert!((got - oracle(&rho, &sigma)).abs() < 1e-8);
        assert!(got >= -1e-12);
        assert!(relative_entropy(&a, &a).unwrap().abs() < 1e-10);
    }
}

fn hermitian_op(seed: u64, n: u32) -> LabelledOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LabelledOperator::new(random::hermitian(&mut rng, 1 << n), legs(n)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn klein_inequality(seed in any::<u64>(), n in 1u32..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 1 << n;
        let a = LabelledOperator::new(random::density_matrix(&mut rng, d, 1 + (seed as usize % d)), legs(n)).unwrap();
        let b = LabelledOperator::new(full_rank(&mut rng, d), legs(n)).unwrap();
        prop_assert!(relative_entropy(&a, &b).unwrap() >= -1e-10);
    }

    #[test]
    fn partial_trace_of_product_recovers_factor(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = LabelledOperator::new(random::density_matrix(&mut rng, 4, 2), vec![LegLabel::out(0, 1), LegLabel::input(0, 1)]).unwrap();
        let b = LabelledOperator::new(random::density_matrix(&mut rng, 2, 2), vec![LegLabel::out(0, 0)]).unwrap();
        let ab = a.tensor_product(&b).unwrap();
        prop_assert!(ab.partial_trace(&[LegLabel::out(0, 0)]).unwrap().max_abs_distance(&a) < 1e-12);
        let kept = ab.partial_trace(&[LegLabel::out(0, 1), LegLabel::input(0, 1)]).unwrap();
        prop_assert!(kept.max_abs_distance(&b) < 1e-12);
        prop_assert!((ab.real_trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_round_trip_and_trace(seed in any::<u64>(), rot in 0usize..3) {
        let op = hermitian_op(seed, 3);
        let mut order = legs(3);
        order.rotate_left(rot);
        let moved = op.permute_legs(&order).unwrap();
        prop_assert!((moved.real_trace() - op.real_trace()).abs() < 1e-12);
        prop_assert!(moved.permute_legs(&legs(3)).unwrap().max_abs_distance(&op) == 0.0);
    }

    #[test]
    fn psd_projection_is_idempotent_and_positive(seed in any::<u64>(), n in 1u32..4) {
        let op = hermitian_op(seed, n);
        let p = project_psd(&op).unwrap();
        prop_assert!(p.min_eigenvalue().unwrap() >= -1e-12);
        prop_assert!(project_psd(&p).unwrap().max_abs_distance(&p) < 1e-10);
    }
}
