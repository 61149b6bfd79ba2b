//! Monte-Carlo simulation of the measure-reset-prepare instrument and the
//! single-shot inversion that turns each record into a snapshot of the
//! process tensor.
//!
//! Per shot, at every time `t_0..t_k` and every register qubit: draw a
//! Clifford `U`, apply `U^dag`, measure `Z` (the effect is `U|x><x|U^dag`).
//! At `t_0..t_{k-1}` the qubit is then reset to `|0>`, a fresh Clifford `V` is
//! drawn and `V|0>` prepared, and the device evolves for one step. Defects
//! evolve freely and are never touched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clifford::{CliffordIndex, GROUP_ORDER};
use crate::error::{Error, Result};
use crate::model::DeviceModel;
use crate::pauli::Pauli;
use crate::process::{MarginalSpec, TimeLeg};
use crate::tensor::{CMatrix, Direction, LabelledOperator, SpectralDecomposition, C64};

/// How instrument Cliffords are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InstrumentPolicy {
    #[default]
    UniformClifford,
    /// Every Clifford is the identity: plain `Z` measurements and `|0>` preparations.
    FixedIdentity,
}

/// One shot: Clifford indices and outcome bits for every qubit and time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShadowRecord {
    pub num_qubits: usize,
    pub num_steps: usize,
    /// Master seed and shot index that generated the record.
    pub seed: u64,
    pub shot_index: u64,
    /// `meas[t * N + q]` for `t = 0..=k`.
    pub meas: Vec<CliffordIndex>,
    /// `outcomes[t * N + q]`, each 0 or 1.
    pub outcomes: Vec<u8>,
    /// `prep[(j - 1) * N + q]` for `j = 1..=k`.
    pub prep: Vec<CliffordIndex>,
}

impl ShadowRecord {
    pub fn measurement(&self, qubit: u32, time: u32) -> (CliffordIndex, u8) {
        let i = time as usize * self.num_qubits + qubit as usize;
        (self.meas[i], self.outcomes[i])
    }

    pub fn preparation(&self, qubit: u32, time: u32) -> CliffordIndex {
        self.prep[(time as usize - 1) * self.num_qubits + qubit as usize]
    }

    fn covers(&self, spec: &MarginalSpec) -> Result<()> {
        spec.validate_for(self.num_qubits, self.num_steps as u32)
    }
}

/// Many shots stored as flat byte arrays.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShotSet {
    num_qubits: usize,
    num_steps: usize,
    master_seed: u64,
    first_shot: u64,
    meas: Vec<u8>,
    outcomes: Vec<u8>,
    prep: Vec<u8>,
}

impl ShotSet {
    pub fn empty(num_qubits: usize, num_steps: usize, master_seed: u64) -> Self {
        Self { num_qubits, num_steps, master_seed, first_shot: 0, meas: vec![], outcomes: vec![], prep: vec![] }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    fn meas_len(&self) -> usize {
        (self.num_steps + 1) * self.num_qubits
    }

    fn prep_len(&self) -> usize {
        self.num_steps * self.num_qubits
    }

    pub fn len(&self) -> usize {
        if self.num_qubits == 0 {
            0
        } else {
            self.meas.len() / self.meas_len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, record: &ShadowRecord) -> Result<()> {
        if record.num_qubits != self.num_qubits || record.num_steps != self.num_steps {
            return Err(Error::Shape(format!(
                "record has N = {}, k = {} but the set has N = {}, k = {}",
                record.num_qubits, record.num_steps, self.num_qubits, self.num_steps
            )));
        }
        if self.is_empty() {
            self.first_shot = record.shot_index;
        }
        self.meas.extend(record.meas.iter().map(|c| c.get()));
        self.outcomes.extend_from_slice(&record.outcomes);
        self.prep.extend(record.prep.iter().map(|c| c.get()));
        Ok(())
    }

    pub fn record(&self, i: usize) -> ShadowRecord {
        let (m, p) = (self.meas_len(), self.prep_len());
        ShadowRecord {
            num_qubits: self.num_qubits,
            num_steps: self.num_steps,
            seed: self.master_seed,
            shot_index: self.first_shot + i as u64,
            meas: self.meas[i * m..(i + 1) * m].iter().map(|&c| clifford(c)).collect(),
            outcomes: self.outcomes[i * m..(i + 1) * m].to_vec(),
            prep: self.prep[i * p..(i + 1) * p].iter().map(|&c| clifford(c)).collect(),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = ShadowRecord> + '_ {
        (0..self.len()).map(|i| self.record(i))
    }

    /// Raw views of shot `i`: measurement indices, outcome bits, prep indices.
    pub(crate) fn raw(&self, i: usize) -> (&[u8], &[u8], &[u8]) {
        let (m, p) = (self.meas_len(), self.prep_len());
        (&self.meas[i * m..(i + 1) * m], &self.outcomes[i * m..(i + 1) * m], &self.prep[i * p..(i + 1) * p])
    }

    /// The first `n` shots.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let mut out = self.clone();
        out.meas.truncate(n * self.meas_len());
        out.outcomes.truncate(n * self.meas_len());
        out.prep.truncate(n * self.prep_len());
        out
    }

    pub fn append(&mut self, mut other: ShotSet) -> Result<()> {
        if other.num_qubits != self.num_qubits || other.num_steps != self.num_steps {
            return Err(Error::Shape("shot sets have different shapes".into()));
        }
        if self.is_empty() {
            self.first_shot = other.first_shot;
        }
        self.meas.append(&mut other.meas);
        self.outcomes.append(&mut other.outcomes);
        self.prep.append(&mut other.prep);
        Ok(())
    }
}

fn clifford(c: u8) -> CliffordIndex {
    CliffordIndex::new(c).expect("stored Clifford index below 24")
}

/// Precomputed dynamics for trajectory sampling.
pub struct Sampler {
    num_qubits: usize,
    num_sites: usize,
    num_steps: usize,
    unitaries: Vec<CMatrix>,
    initial_weights: Vec<f64>,
    initial_vectors: Vec<Vec<C64>>,
    policy: InstrumentPolicy,
}

impl Sampler {
    pub fn new(model: &DeviceModel, policy: InstrumentPolicy) -> Result<Self> {
        model.validate()?;
        let spectral = SpectralDecomposition::of_hermitian(&model.initial_state());
        let mut initial_weights = Vec::new();
        let mut initial_vectors = Vec::new();
        for (i, &w) in spectral.eigenvalues.iter().enumerate() {
            if w > 1e-12 {
                initial_weights.push(w);
                initial_vectors.push(spectral.eigenvectors.column(i).iter().copied().collect());
            }
        }
        let total: f64 = initial_weights.iter().sum();
        initial_weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            num_qubits: model.num_qubits(),
            num_sites: model.num_sites(),
            num_steps: model.num_steps(),
            unitaries: model.step_unitaries()?,
            initial_weights,
            initial_vectors,
            policy,
        })
    }

    fn draw_clifford(&self, rng: &mut ChaCha8Rng) -> CliffordIndex {
        let c = rng.random_range(0..GROUP_ORDER as u8);
        match self.policy {
            InstrumentPolicy::UniformClifford => clifford(c),
            InstrumentPolicy::FixedIdentity => CliffordIndex::IDENTITY,
        }
    }

    fn apply(&self, psi: &mut [C64], pos: usize, u: &CMatrix) {
        let bit = 1usize << (self.num_sites - 1 - pos);
        for i in 0..psi.len() {
            if i & bit == 0 {
                let (a, b) = (psi[i], psi[i | bit]);
                psi[i] = u[(0, 0)] * a + u[(0, 1)] * b;
                psi[i | bit] = u[(1, 0)] * a + u[(1, 1)] * b;
            }
        }
    }

    fn measure(&self, psi: &mut [C64], pos: usize, rng: &mut ChaCha8Rng) -> u8 {
        let bit = 1usize << (self.num_sites - 1 - pos);
        let p1: f64 = psi.iter().enumerate().filter(|(i, _)| i & bit != 0).map(|(_, z)| z.norm_sqr()).sum();
        let x = u8::from(rng.random::<f64>() < p1);
        let norm = if x == 1 { p1 } else { 1.0 - p1 }.max(f64::MIN_POSITIVE).sqrt().recip();
        for (i, z) in psi.iter_mut().enumerate() {
            if ((i & bit != 0) as u8) == x {
                *z *= norm;
            } else {
                *z = C64::new(0.0, 0.0);
            }
        }
        x
    }

    /// Flip the measured qubit back to `|0>`.
    fn reset(&self, psi: &mut [C64], pos: usize, outcome: u8) {
        if outcome == 1 {
            let bit = 1usize << (self.num_sites - 1 - pos);
            for i in 0..psi.len() {
                if i & bit == 0 {
                    psi.swap(i, i | bit);
                }
            }
        }
    }

    pub fn sample_shot(&self, master_seed: u64, shot_index: u64) -> ShadowRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(shot_index);
        let (n, k) = (self.num_qubits, self.num_steps);

        let r: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.initial_vectors.len() - 1;
        for (i, w) in self.initial_weights.iter().enumerate() {
            acc += w;
            if r < acc {
                pick = i;
                break;
            }
        }
        let mut psi = self.initial_vectors[pick].clone();

        let mut meas = Vec::with_capacity((k + 1) * n);
        let mut outcomes = Vec::with_capacity((k + 1) * n);
        let mut prep = Vec::with_capacity(k * n);
        for t in 0..=k {
            for q in 0..n {
                let c = self.draw_clifford(&mut rng);
                self.apply(&mut psi, q, &c.matrix().adjoint());
                let x = self.measure(&mut psi, q, &mut rng);
                meas.push(c);
                outcomes.push(x);
            }
            if t == k {
                break;
            }
            for q in 0..n {
                self.reset(&mut psi, q, outcomes[t * n + q]);
                let c = self.draw_clifford(&mut rng);
                self.apply(&mut psi, q, c.matrix());
                prep.push(c);
            }
            let u = &self.unitaries[t];
            psi = (0..psi.len()).map(|r| (0..psi.len()).map(|c| u[(r, c)] * psi[c]).sum()).collect();
        }
        ShadowRecord { num_qubits: n, num_steps: k, seed: master_seed, shot_index, meas, outcomes, prep }
    }

    /// Shots `first..first + count`, generated in parallel; the result does
    /// not depend on the thread count.
    pub fn sample_shots(&self, master_seed: u64, first: u64, count: usize) -> ShotSet {
        const CHUNK: usize = 4096;
        let chunks: Vec<ShotSet> = (0..count.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut set = ShotSet::empty(self.num_qubits, self.num_steps, master_seed);
                let start = c * CHUNK;
                for i in start..(start + CHUNK).min(count) {
                    set.push(&self.sample_shot(master_seed, first + i as u64)).expect("same shape");
                }
                set
            })
            .collect();
        let mut out = ShotSet::empty(self.num_qubits, self.num_steps, master_seed);
        out.first_shot = first;
        for c in chunks {
            out.append(c).expect("same shape");
        }
        out
    }
}

/// One shot of `model` with a fresh sampler.
pub fn sample_shot(model: &DeviceModel, master_seed: u64, shot_index: u64) -> Result<ShadowRecord> {
    Ok(Sampler::new(model, InstrumentPolicy::UniformClifford)?.sample_shot(master_seed, shot_index))
}

pub fn sample_shots(model: &DeviceModel, master_seed: u64, count: usize) -> Result<ShotSet> {
    Ok(Sampler::new(model, InstrumentPolicy::UniformClifford)?.sample_shots(master_seed, 0, count))
}

/// `3 U^* |x><x| U^T - I`.
pub fn invert_measurement(u: CliffordIndex, x: u8) -> CMatrix {
    let ket = u.matrix().column(x as usize).map(|z| z.conj());
    projector_inverse(&ket.into_owned())
}

/// `3 U|0><0|U^dag - I`.
pub fn invert_preparation(u: CliffordIndex) -> CMatrix {
    projector_inverse(&u.matrix().column(0).into_owned())
}

fn projector_inverse(ket: &nalgebra::DVector<C64>) -> CMatrix {
    (ket * ket.adjoint()) * C64::new(3.0, 0.0) - CMatrix::identity(2, 2)
}

/// Single-leg factor of a snapshot.
pub fn leg_factor(record: &ShadowRecord, qubit: u32, leg: TimeLeg) -> CMatrix {
    match leg {
        TimeLeg::Out(t) => {
            let (u, x) = record.measurement(qubit, t);
            invert_measurement(u, x).transpose()
        }
        TimeLeg::In(t) => invert_preparation(record.preparation(qubit, t)).transpose() * C64::new(2.0, 0.0),
    }
}

/// One-shot estimate of the marginal `spec`, legs in canonical order.
pub fn snapshot(record: &ShadowRecord, spec: &MarginalSpec) -> Result<LabelledOperator> {
    record.covers(spec)?;
    let legs = spec.legs();
    let mut data = CMatrix::identity(1, 1);
    for leg in &legs {
        let (q, l) = TimeLeg::of_label(leg).expect("process leg");
        data = data.kronecker(&leg_factor(record, q, l));
    }
    LabelledOperator::new_hermitian(data, legs)
}

/// Pauli weights of one leg factor: the identity weight and the single
/// non-identity letter with its weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct LegWeights {
    pub identity: f64,
    pub letter: Pauli,
    pub weight: f64,
}

struct WeightTable {
    meas: Vec<[LegWeights; 2]>,
    prep: Vec<LegWeights>,
}

fn weight_table() -> &'static WeightTable {
    static TABLE: std::sync::OnceLock<WeightTable> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let axis = |f: &dyn Fn(Pauli) -> f64| {
            let letter = [Pauli::X, Pauli::Y, Pauli::Z].into_iter().find(|&p| f(p) != 0.0).expect("one axis");
            (letter, f(letter))
        };
        let meas = CliffordIndex::all()
            .map(|c| {
                [0u8, 1].map(|x| {
                    let (letter, weight) = axis(&|p| c.measurement_weight(x, p));
                    LegWeights { identity: 1.0, letter, weight }
                })
            })
            .collect();
        let prep = CliffordIndex::all()
            .map(|c| {
                let (letter, weight) = axis(&|p| c.preparation_weight(p));
                LegWeights { identity: 2.0, letter, weight }
            })
            .collect();
        WeightTable { meas, prep }
    })
}

/// Leg weights straight from the raw bytes of a [`ShotSet`] entry.
pub(crate) fn raw_leg_weights(
    raw: (&[u8], &[u8], &[u8]),
    num_qubits: usize,
    qubit: u32,
    leg: TimeLeg,
) -> LegWeights {
    let table = weight_table();
    let (meas, outcomes, prep) = raw;
    match leg {
        TimeLeg::Out(t) => {
            let i = t as usize * num_qubits + qubit as usize;
            table.meas[meas[i] as usize][outcomes[i] as usize]
        }
        TimeLeg::In(t) => table.prep[prep[(t as usize - 1) * num_qubits + qubit as usize] as usize],
    }
}

/// Whether every leg in `legs` is an input or output leg present in shots with
/// `num_qubits` and `num_steps`.
pub(crate) fn check_legs(legs: &[crate::tensor::LegLabel], num_qubits: usize, num_steps: usize) -> Result<()> {
    for leg in legs {
        let (q, l) = TimeLeg::of_label(leg).ok_or_else(|| Error::InvalidMarginal(format!("{leg} is not a process leg")))?;
        let t = match l {
            TimeLeg::Out(t) | TimeLeg::In(t) => t as usize,
        };
        if q as usize >= num_qubits || t > num_steps || (leg.direction == Direction::In && t == 0) {
            return Err(Error::InvalidMarginal(format!("{leg} is not recorded in the shots")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ket_state;
    use crate::pauli::PauliObservable;

    fn c(i: u8) -> CliffordIndex {
        CliffordIndex::new(i).unwrap()
    }

    #[test]
    fn analytic_inversions() {
        let d = invert_measurement(CliffordIndex::IDENTITY, 0);
        assert!((d - CMatrix::from_diagonal(&nalgebra::dvector![C64::new(2.0, 0.0), C64::new(-1.0, 0.0)])).norm() < 1e-15);
        let h = invert_measurement(CliffordIndex::hadamard(), 0);
        let expected = CMatrix::from_row_slice(2, 2, &[0.5, 1.5, 1.5, 0.5].map(|v| C64::new(v, 0.0)));
        assert!((h - &expected).norm() < 1e-12);
        assert!((invert_preparation(CliffordIndex::hadamard()) - expected).norm() < 1e-12);
        for u in CliffordIndex::all() {
            for x in 0..2 {
                let m = invert_measurement(u, x);
                assert!((m.trace() - C64::new(1.0, 0.0)).norm() < 1e-12);
                let mut ev: Vec<f64> = SpectralDecomposition::of_hermitian(&m).eigenvalues.to_vec();
                ev.sort_by(f64::total_cmp);
                assert!((ev[0] + 1.0).abs() < 1e-12 && (ev[1] - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_policy_without_dynamics_reads_zeros() {
        let model = DeviceModel::chain(3, 2);
        let sampler = Sampler::new(&model, InstrumentPolicy::FixedIdentity).unwrap();
        for s in 0..50 {
            let r = sampler.sample_shot(9, s);
            assert!(r.outcomes.iter().all(|&x| x == 0));
            assert_eq!(r.meas.len(), 9);
            assert_eq!(r.prep.len(), 6);
        }
    }

    #[test]
    fn snapshot_of_single_output_leg() {
        let record = ShadowRecord {
            num_qubits: 1,
            num_steps: 0,
            seed: 0,
            shot_index: 0,
            meas: vec![CliffordIndex::IDENTITY],
            outcomes: vec![0],
            prep: vec![],
        };
        let spec = MarginalSpec::single_qubit(0, 0);
        let s = snapshot(&record, &spec).unwrap();
        assert_eq!(s.data()[(0, 0)], C64::new(2.0, 0.0));
        assert_eq!(s.data()[(1, 1)], C64::new(-1.0, 0.0));
    }

    #[test]
    fn two_leg_snapshot_matches_loop() {
        let record = ShadowRecord {
            num_qubits: 1,
            num_steps: 1,
            seed: 0,
            shot_index: 0,
            meas: vec![c(5), c(7)],
            outcomes: vec![1, 0],
            prep: vec![c(11)],
        };
        let spec = MarginalSpec::new([(0, TimeLeg::Out(1)), (0, TimeLeg::In(1))]).unwrap();
        let s = snapshot(&record, &spec).unwrap();
        let a = invert_measurement(c(7), 0).transpose();
        let b = invert_preparation(c(11)).transpose() * C64::new(2.0, 0.0);
        for r in 0..4 {
            for col in 0..4 {
                assert_eq!(s.data()[(r, col)], a[(r / 2, col / 2)] * b[(r % 2, col % 2)]);
            }
        }
        assert!((s.real_trace() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn raw_weights_match_dense_factors() {
        let model = DeviceModel::chain(2, 2).with_edge(0, 1, 0.5);
        let set = sample_shots(&model, 4, 20).unwrap();
        for i in 0..set.len() {
            let rec = set.record(i);
            for q in 0..2 {
                for leg in TimeLeg::all(2) {
                    let w = raw_leg_weights(set.raw(i), 2, q, leg);
                    let f = leg_factor(&rec, q, leg);
                    let id = PauliObservable::new(vec![Pauli::I]).trace_with(&f).re;
                    let ax = PauliObservable::new(vec![w.letter]).trace_with(&f).re;
                    assert!((id - w.identity).abs() < 1e-12 && (ax - w.weight).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shots_are_deterministic_and_thread_independent() {
        let model = DeviceModel::chain(2, 2).with_edge(0, 1, 0.5).with_defect(&[(1, 1.0)]);
        let sampler = Sampler::new(&model, InstrumentPolicy::UniformClifford).unwrap();
        let a = sampler.sample_shots(77, 0, 10_000);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| sampler.sample_shots(77, 0, 10_000));
        assert_eq!(a, b);
        assert_eq!(a.record(1234), sampler.sample_shot(77, 1234));
        let tail = sampler.sample_shots(77, 5000, 10);
        assert_eq!(tail.record(3), a.record(5003));
        assert_ne!(sampler.sample_shots(78, 0, 10), a.truncated(10));
    }

    #[test]
    fn mixed_initial_state_is_sampled() {
        let model = DeviceModel::chain(1, 1).with_uniform_initial_state(&ket_state("mixed").unwrap());
        let sampler = Sampler::new(&model, InstrumentPolicy::FixedIdentity).unwrap();
        let ones = (0..4000).filter(|&s| sampler.sample_shot(1, s).outcomes[0] == 1).count();
        assert!((ones as f64 / 4000.0 - 0.5).abs() < 0.03);
    }
}
