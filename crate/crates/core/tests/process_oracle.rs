//! Exact process tensors checked against a direct dilation: at every
//! intervention the system leg is swapped out for one half of a fresh Bell
//! pair (or replaced by I/2), everything kept as one big density operator.

use proptest::prelude::*;
use stshadow::model::{ket_state, DeviceModel};
use stshadow::process::{
    causality_residual, exact_process_choi, marginalize, markov_closest, Background, MarginalSpec, TimeLeg,
};
use stshadow::tensor::{CMatrix, LabelledOperator, LegLabel, C64};

fn site(q: u32) -> LegLabel {
    LegLabel::out(q, 1000)
}

fn bell() -> CMatrix {
    let mut m = CMatrix::zeros(4, 4);
    for &(i, j) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
        m[(i, j)] = C64::new(1.0, 0.0);
    }
    m
}

fn relabel(op: LabelledOperator, from: LegLabel, to: LegLabel) -> LabelledOperator {
    let legs = op.legs().iter().map(|l| if l.key() == from.key() { to } else { *l }).collect();
    LabelledOperator::new(op.into_data(), legs).unwrap()
}

fn sites_first(op: &LabelledOperator, sites: &[LegLabel]) -> LabelledOperator {
    let mut order = sites.to_vec();
    order.extend(op.legs().iter().filter(|l| !sites.iter().any(|s| s.key() == l.key())));
    op.permute_legs(&order).unwrap()
}

fn dilation_oracle(model: &DeviceModel, spec: &MarginalSpec) -> LabelledOperator {
    let k = model.num_steps() as u32;
    let n = model.num_qubits() as u32;
    let mut sites: Vec<LegLabel> = (0..n).map(site).collect();
    sites.extend((0..model.num_defects() as u32).map(LegLabel::defect));
    let mut op = LabelledOperator::new(model.initial_state(), sites.clone()).unwrap();
    let unitaries = model.step_unitaries().unwrap();
    let involved = spec.qubits();
    for t in 0..k {
        for q in 0..n {
            if spec.background() == Background::Idle && !involved.contains(&q) {
                continue;
            }
            op = if spec.contains(q, TimeLeg::Out(t)) {
                relabel(op, site(q), LegLabel::out(q, t))
            } else {
                op.partial_trace(&[site(q)]).unwrap()
            };
            let fresh = if spec.contains(q, TimeLeg::In(t + 1)) {
                LabelledOperator::new(bell(), vec![site(q), LegLabel::input(q, t + 1)]).unwrap()
            } else {
                LabelledOperator::new(CMatrix::identity(2, 2) * C64::new(0.5, 0.0), vec![site(q)]).unwrap()
            };
            op = op.tensor_product(&fresh).unwrap();
        }
        op = sites_first(&op, &sites);
        let extra = op.dim() / unitaries[t as usize].nrows();
        let u = unitaries[t as usize].kronecker(&CMatrix::identity(extra, extra));
        op = op.with_data(&u * op.data() * u.adjoint()).unwrap();
    }
    for q in 0..n {
        if spec.contains(q, TimeLeg::Out(k)) {
            op = relabel(op, site(q), LegLabel::out(q, k));
        }
    }
    let drop: Vec<LegLabel> = op.legs().iter().filter(|l| !spec.legs().iter().any(|s| s.key() == l.key())).copied().collect();
    op.partial_trace(&drop).unwrap().permute_legs(&spec.legs()).unwrap()
}

fn crosstalk_defect_model() -> DeviceModel {
    DeviceModel::chain(3, 2)
        .with_edge(0, 1, 0.7)
        .with_edge(1, 2, 0.3)
        .with_defect(&[(1, 1.0)])
        .with_uniform_initial_state(&ket_state("plus").unwrap())
}

#[test]
fn branching_construction_matches_dilation() {
    let model = crosstalk_defect_model();
    let specs = [
        MarginalSpec::single_qubit(0, 2),
        MarginalSpec::single_qubit(1, 2),
        MarginalSpec::single_qubit(0, 2).with_background(Background::Idle),
        MarginalSpec::common_cause(0, 2).unwrap(),
        MarginalSpec::common_cause(2, 1).unwrap(),
        MarginalSpec::new([(0, TimeLeg::Out(2)), (1, TimeLeg::In(1)), (2, TimeLeg::Out(0))]).unwrap(),
    ];
    for spec in specs {
        let fast = exact_process_choi(&model, &spec).unwrap();
        let slow = dilation_oracle(&model, &spec);
        assert!(fast.max_abs_distance(&slow) < 1e-12, "{:?}", spec.legs());
    }
}

#[test]
fn crosstalk_partner_of_bath_qubit_sees_the_bath() {
    // the bath reaches q0 through q1 within each step, so the dilation also
    // carries memory on q0's marginal
    let model = crosstalk_defect_model();
    let choi = dilation_oracle(&model, &MarginalSpec::single_qubit(0, 2));
    let markov = markov_closest(&choi).unwrap();
    assert!(choi.frobenius_distance(&markov) > 1e-3);
}

#[test]
fn full_then_marginal_equals_direct_marginal() {
    let model = DeviceModel::chain(2, 1).with_edge(0, 1, 0.8).with_defect(&[(0, 0.6), (1, 1.3)]);
    let full = exact_process_choi(&model, &MarginalSpec::full(2, 1)).unwrap();
    for spec in [
        MarginalSpec::single_qubit(0, 1),
        MarginalSpec::single_qubit(1, 1),
        MarginalSpec::new([(0, TimeLeg::Out(1)), (1, TimeLeg::Out(0))]).unwrap(),
    ] {
        let a = marginalize(&full, &spec).unwrap();
        let b = exact_process_choi(&model, &spec).unwrap();
        assert!(a.max_abs_distance(&b) < 1e-9);
    }
}

#[test]
fn markov_closest_properties() {
    let model = crosstalk_defect_model();
    let choi = exact_process_choi(&model, &MarginalSpec::single_qubit(1, 2)).unwrap();
    let m = markov_closest(&choi).unwrap();
    assert!((m.real_trace() - choi.real_trace()).abs() < 1e-10);
    // a product is its own Markov approximation
    assert!(markov_closest(&m).unwrap().max_abs_distance(&m) < 1e-12);
    assert!(stshadow::tensor::relative_entropy(&choi, &m).unwrap() > 1e-3);
}

#[test]
fn markovian_model_factorises_into_step_maps() {
    let mut model = DeviceModel::chain(1, 2).with_uniform_initial_state(&ket_state("plus_i").unwrap());
    model.step_durations = vec![0.4, 1.1];
    let choi = exact_process_choi(&model, &MarginalSpec::single_qubit(0, 2)).unwrap();
    // independently: identity channels as unnormalised Bell pairs, then rho0
    let product = bell().kronecker(&bell()).kronecker(&ket_state("plus_i").unwrap());
    assert!((choi.data() - product).norm() < 1e-9);
}

fn random_model(seed: u64, n: usize, defects: usize) -> DeviceModel {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut model = DeviceModel::chain(n, 2).with_random_nearest_neighbour_crosstalk(seed, 0.2, 1.0);
    for _ in 0..defects {
        let q = rng.random_range(0..n as u32);
        model = model.with_defect(&[(q, rng.random_range(0.5..1.5))]);
    }
    let rho = stshadow::tensor::random::density_matrix(&mut rng, 2, 2);
    model.with_uniform_initial_state(&rho)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn exact_processes_are_positive_and_causal(seed in any::<u64>(), n in 1usize..4, defects in 0usize..2, q in 0u32..3) {
        let model = random_model(seed, n, defects);
        let q = q % n as u32;
        let choi = exact_process_choi(&model, &MarginalSpec::single_qubit(q, 2)).unwrap();
        prop_assert!(choi.min_eigenvalue().unwrap() >= -1e-10);
        prop_assert!(causality_residual(&choi) <= 1e-8);
        prop_assert!((choi.real_trace() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn relabelling_qubits_permutes_marginals(seed in any::<u64>()) {
        let model = random_model(seed, 3, 1);
        let perm = [2u32, 0, 1];
        let moved = model.relabelled(&perm).unwrap();
        for q in 0..3u32 {
            let a = exact_process_choi(&model, &MarginalSpec::single_qubit(q, 2)).unwrap();
            let b = exact_process_choi(&moved, &MarginalSpec::single_qubit(perm[q as usize], 2)).unwrap();
            prop_assert!((a.data() - b.data()).norm() < 1e-9);
        }
    }
}
