use stshadow::clifford::CliffordIndex;
use stshadow::estimator::{BatchMeans, ExpectationTable};
use stshadow::model::{ket_state, DeviceModel};
use stshadow::process::{exact_process_choi, MarginalSpec};
use stshadow::shadow::{invert_measurement, invert_preparation, sample_shots, snapshot, Sampler};
use stshadow::tensor::{random, CMatrix, LabelledOperator, C64};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trace_norm(a: &CMatrix) -> f64 {
    stshadow::tensor::SpectralDecomposition::of_hermitian(a).eigenvalues.iter().map(|l| l.abs()).sum()
}

#[test]
fn measurement_inverse_is_unbiased_over_all_48_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let rho = random::density_matrix(&mut rng, 2, 2);
        let mut avg = CMatrix::zeros(2, 2);
        for u in CliffordIndex::all() {
            let rotated = u.matrix().adjoint() * &rho * u.matrix();
            for x in 0..2u8 {
                let p = rotated[(x as usize, x as usize)].re;
                avg += invert_measurement(u, x) * C64::new(p / 24.0, 0.0);
            }
        }
        // the inverse is written in the transposed (Choi) frame
        assert!((avg - rho.transpose()).norm() < 1e-10);
    }
}

#[test]
fn preparation_inverse_is_unbiased_over_24_terms() {
    let mut avg = CMatrix::zeros(2, 2);
    let mut state_avg = CMatrix::zeros(2, 2);
    for u in CliffordIndex::all() {
        avg += invert_preparation(u) / C64::new(24.0, 0.0);
        let ket = u.matrix().column(0);
        state_avg += ket * ket.adjoint() / C64::new(24.0, 0.0);
    }
    let half = CMatrix::identity(2, 2) * C64::new(0.5, 0.0);
    assert!((avg - &half).norm() < 1e-12);
    assert!((state_avg - half).norm() < 1e-12);

    // prepared state through a channel, paired with the scaled inverse,
    // averages to the channel's Choi operator
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = random::unitary(&mut rng, 2);
    let mut choi = CMatrix::zeros(4, 4);
    for u in CliffordIndex::all() {
        let ket = u.matrix().column(0);
        let out = &v * (ket * ket.adjoint()) * v.adjoint();
        choi += out.kronecker(&(invert_preparation(u).transpose() * C64::new(2.0 / 24.0, 0.0)));
    }
    let mut phi = CMatrix::zeros(4, 4);
    for &(i, j) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
        phi[(i, j)] = C64::new(1.0, 0.0);
    }
    let vi = v.kronecker(&CMatrix::identity(2, 2));
    assert!((choi - &vi * phi * vi.adjoint()).norm() < 1e-12);
}

#[test]
fn first_outcome_is_fair_coin_without_dynamics() {
    // the single-qubit Cliffords map |0> uniformly onto the six stabiliser
    // states, so P(x = 1) = 1/2
    let model = DeviceModel::chain(1, 1);
    let shots = sample_shots(&model, 5, 100_000).unwrap();
    let ones = shots.records().filter(|r| r.measurement(0, 0).1 == 1).count();
    let p = ones as f64 / 1e5;
    assert!((p - 0.5).abs() < 0.01, "P(x=1) = {p}");
}

#[test]
fn every_snapshot_is_hermitian_with_leg_spectrum_2_and_minus_1() {
    let model = DeviceModel::chain(1, 1).with_defect(&[(0, 0.8)]);
    let spec = MarginalSpec::single_qubit(0, 1);
    for r in sample_shots(&model, 3, 50).unwrap().records() {
        let s = snapshot(&r, &spec).unwrap();
        assert!(s.is_hermitian());
        let mut spectrum = stshadow::tensor::SpectralDecomposition::of_hermitian(s.data()).eigenvalues.clone();
        spectrum.sort_by(f64::total_cmp);
        // output legs {2, -1}, the input leg {4, -2}
        let mut expected: Vec<f64> = Vec::new();
        for a in [2.0, -1.0] {
            for b in [4.0, -2.0] {
                for c in [2.0, -1.0] {
                    expected.push(a * b * c);
                }
            }
        }
        expected.sort_by(f64::total_cmp);
        for (x, y) in spectrum.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

fn defect_model() -> DeviceModel {
    DeviceModel::chain(1, 1).with_defect(&[(0, 0.9)]).with_uniform_initial_state(&ket_state("plus").unwrap())
}

/// Mean snapshot of shots `first..first + count` as an operator.
fn mean_snapshot(sampler: &Sampler, spec: &MarginalSpec, first: u64, count: usize) -> LabelledOperator {
    let shots = sampler.sample_shots(8, first, count);
    let means = BatchMeans::from_shots(&shots, &spec.legs(), 1, count).unwrap();
    let table: ExpectationTable = means.median_of_means();
    table.linear_inversion().unwrap()
}

#[test]
fn mean_snapshot_converges_to_exact_marginal() {
    let model = defect_model();
    let spec = MarginalSpec::single_qubit(0, 1);
    let exact = exact_process_choi(&model, &spec).unwrap();
    let sampler = Sampler::new(&model, Default::default()).unwrap();
    let mean = mean_snapshot(&sampler, &spec, 0, 1_000_000);
    let dist = 0.5 * trace_norm(&(mean.data() - exact.data())) / exact.real_trace();
    println!("trace distance (unit trace) at 1e6 shots: {dist:.4}");
    assert!(dist <= 0.05);
}

#[test]
fn snapshot_error_scales_as_inverse_square_root() {
    let model = defect_model();
    let spec = MarginalSpec::single_qubit(0, 1);
    let exact = exact_process_choi(&model, &spec).unwrap();
    let sampler = Sampler::new(&model, Default::default()).unwrap();
    let m = 50_000;
    let mut first = 0u64;
    let mut rms = |count: usize| {
        let mut sq = 0.0;
        for _ in 0..4 {
            sq += mean_snapshot(&sampler, &spec, first, count).frobenius_distance(&exact).powi(2);
            first += count as u64;
        }
        (sq / 4.0).sqrt()
    };
    let (small, large) = (rms(m), rms(4 * m));
    let ratio = small / large;
    println!("error ratio M / 4M: {ratio:.3}");
    assert!((1.6..=2.6).contains(&ratio));
}
