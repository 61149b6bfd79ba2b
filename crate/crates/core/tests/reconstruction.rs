use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stshadow::estimator::{mle_reconstruct, ExpectationTable, MleOptions};
use stshadow::model::{ket_state, DeviceModel};
use stshadow::process::{causality_residual, exact_process_choi, MarginalSpec};
use stshadow::tensor::random;

fn defect_model(seed: u64) -> DeviceModel {
    DeviceModel::chain(2, 2)
        .with_random_nearest_neighbour_crosstalk(seed, 0.2, 1.0)
        .with_defect(&[(0, 0.5 + (seed % 7) as f64 / 7.0)])
        .with_uniform_initial_state(&ket_state("plus").unwrap())
}

#[test]
fn noisy_expectations_reconstruct_physical_process() {
    for seed in 0..20u64 {
        let exact = exact_process_choi(&defect_model(seed), &MarginalSpec::single_qubit(0, 2)).unwrap();
        let mut table = ExpectationTable::exact(&exact);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy: Vec<_> = table.iter().map(|(p, v)| (p, v + 0.01 * random::gaussian(&mut rng))).collect();
        for (p, v) in noisy {
            table.set(&p, v);
        }
        let t = std::time::Instant::now();
        let est = mle_reconstruct(&table, &MleOptions::default()).unwrap();
        assert!(est.choi.min_eigenvalue().unwrap() >= -1e-8, "seed {seed}");
        assert!(est.causality_residual <= 1e-6, "seed {seed}: {}", est.causality_residual);
        assert!(est.objective_history.windows(2).all(|w| w[1] <= w[0]), "seed {seed}");
        assert!(est.choi.frobenius_distance(&exact) < 0.1, "seed {seed}");
        eprintln!("seed {seed}: {} iters, {:?}, f {:e}", est.iterations, t.elapsed(), est.objective_history.last().unwrap());
    }
}

#[test]
fn identity_process_round_trip() {
    let model = DeviceModel::chain(1, 2).with_uniform_initial_state(&ket_state("plus_i").unwrap());
    let exact = exact_process_choi(&model, &MarginalSpec::single_qubit(0, 2)).unwrap();
    let est = mle_reconstruct(&ExpectationTable::exact(&exact), &MleOptions::default()).unwrap();
    assert!(est.choi.frobenius_distance(&exact) <= 1e-6);
}

#[test]
fn reconstruction_is_idempotent() {
    let exact = exact_process_choi(&defect_model(3), &MarginalSpec::single_qubit(0, 2)).unwrap();
    let mut table = ExpectationTable::exact(&exact);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noisy: Vec<_> = table.iter().map(|(p, v)| (p, v + 0.02 * random::gaussian(&mut rng))).collect();
    for (p, v) in noisy {
        table.set(&p, v);
    }
    let first = mle_reconstruct(&table, &MleOptions::default()).unwrap();
    let again = mle_reconstruct(&ExpectationTable::exact(&first.choi), &MleOptions::default()).unwrap();
    assert!(again.choi.frobenius_distance(&first.choi) <= 1e-8);
    assert!(causality_residual(&again.choi) <= 1e-6);
}
