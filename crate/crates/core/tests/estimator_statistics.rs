use proptest::prelude::*;
use stshadow::estimator::{
    causality_fixed_value, estimate_observables, free_observable_count, BatchMeans, EstimationPlan, ExpectationTable,
};
use stshadow::model::{ket_state, DeviceModel};
use stshadow::pauli::{Pauli, PauliObservable};
use stshadow::process::{exact_process_choi, MarginalSpec};
use stshadow::shadow::{sample_shots, snapshot, Sampler};

fn small_model() -> DeviceModel {
    DeviceModel::chain(2, 1)
        .with_edge(0, 1, 0.5)
        .with_defect(&[(0, 1.1)])
        .with_uniform_initial_state(&ket_state("plus").unwrap())
}

fn free_observables(legs: usize, k: u32) -> Vec<PauliObservable> {
    (0..1usize << (2 * legs))
        .map(|i| PauliObservable::from_index(i, legs))
        .filter(|p| causality_fixed_value(p, k).is_none())
        .collect()
}

#[test]
fn plan_budget_meets_its_accuracy() {
    let model = small_model();
    let spec = MarginalSpec::single_qubit(0, 1);
    let exact = ExpectationTable::exact(&exact_process_choi(&model, &spec).unwrap());
    let observables = free_observables(3, 1);
    // the count includes the identity, which is pinned to the trace
    assert_eq!(observables.len() as u64 + 1, free_observable_count(1, 2));
    let plan = EstimationPlan::for_accuracy(observables.clone(), 0.1, 2).unwrap();
    println!("plan: {} batches x {} shots", plan.num_batches, plan.shots_per_batch);

    let sampler = Sampler::new(&model, Default::default()).unwrap();
    let shots = sampler.sample_shots(21, 0, plan.total_shots());
    let means = BatchMeans::from_shots(&shots, &spec.legs(), plan.num_batches, plan.shots_per_batch).unwrap();
    let table = means.median_of_means();
    // accuracy is per unit-trace process (trace 2 here)
    let trace = 2.0;
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for o in &observables {
        let err = (table.get(o).unwrap() - exact.get(o).unwrap()).abs() / trace;
        worst = worst.max(err / plan.epsilon);
        if err > plan.epsilon {
            failures += 1;
        }
    }
    let rate = failures as f64 / observables.len() as f64;
    println!("worst error {worst:.2} eps, failure rate {rate:.3}");
    assert!(worst <= 5.0);
    assert!(rate < 0.10);
}

#[test]
fn identity_estimate_is_the_trace_with_no_spread() {
    let model = small_model();
    let spec = MarginalSpec::single_qubit(1, 1);
    let shots = sample_shots(&model, 2, 999).unwrap();
    let means = BatchMeans::from_shots(&shots, &spec.legs(), 9, 111).unwrap();
    let id = PauliObservable::identity(3);
    for b in 0..9 {
        assert!((means.batch(b)[id.index()] - 2.0).abs() < 1e-12);
    }
    let plan = EstimationPlan::new(vec![id.clone()], 3, 5, f64::NAN).unwrap();
    let est = estimate_observables(shots.records().map(|r| snapshot(&r, &spec).unwrap()), &plan).unwrap();
    assert!((est[&id] - 2.0).abs() < 1e-12);
}

#[test]
fn x_on_initial_output_is_not_fixed_and_can_be_nonzero() {
    // legs: o1, i1, o0
    let x0 = PauliObservable::new(vec![Pauli::I, Pauli::I, Pauli::X]);
    assert_eq!(causality_fixed_value(&x0, 1), None);
    let model = DeviceModel::chain(1, 1).with_uniform_initial_state(&ket_state("plus").unwrap());
    let choi = exact_process_choi(&model, &MarginalSpec::single_qubit(0, 1)).unwrap();
    let v = ExpectationTable::exact(&choi).get(&x0).unwrap();
    assert!((v - 2.0).abs() < 1e-9, "{v}");
}

fn random_process(seed: u64) -> DeviceModel {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=2usize);
    let mut model = DeviceModel::chain(n, 1).with_random_nearest_neighbour_crosstalk(seed, 0.0, 1.5);
    model = model.with_defect(&[(0, rng.random_range(0.0..1.5))]);
    model.step_durations = vec![rng.random_range(0.1..2.0)];
    let rho = stshadow::tensor::random::density_matrix(&mut rng, 2, 2);
    model.with_uniform_initial_state(&rho)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn x_on_last_input_vanishes(seed in any::<u64>()) {
        let x_in = PauliObservable::new(vec![Pauli::I, Pauli::X, Pauli::I]);
        prop_assert_eq!(causality_fixed_value(&x_in, 1), Some(0.0));
        let choi = exact_process_choi(&random_process(seed), &MarginalSpec::single_qubit(0, 1)).unwrap();
        prop_assert!(ExpectationTable::exact(&choi).get(&x_in).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn causally_fixed_values_hold_on_exact_processes(seed in any::<u64>()) {
        let choi = exact_process_choi(&random_process(seed), &MarginalSpec::single_qubit(0, 1)).unwrap();
        let table = ExpectationTable::exact(&choi);
        for i in 0..64 {
            let p = PauliObservable::from_index(i, 3);
            if let Some(v) = causality_fixed_value(&p, 1) {
                prop_assert!((table.get(&p).unwrap() - v).abs() <= 1e-9);
            }
        }
    }
}
