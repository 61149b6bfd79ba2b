//! Median-of-means estimation of Pauli expectations, shot budgets, and
//! least-squares reconstruction of a physical (positive, causal) process.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pauli::{from_pauli_coefficients, pauli_coefficients, PauliObservable};
use crate::process::{causality_residual, causally_fixed_value, input_leg_count, MarginalSpec, TimeLeg};
use crate::shadow::{check_legs, raw_leg_weights, LegWeights, ShotSet};
use crate::tensor::{project_psd, CMatrix, Direction, LabelledOperator, LegLabel, SpectralDecomposition, C64};

/// Number of Pauli strings on a `k`-step process of one `d`-level system
/// whose expectation causality forces to zero.
pub fn count_causality_fixed(k: u32, d: u64) -> u64 {
    (1..=k).map(|j| (d * d - 1) * d.pow(4 * j - 2)).sum()
}

/// Pauli strings left to estimate: all `d^{2(2k+1)}` minus the causally fixed.
pub fn free_observable_count(k: u32, d: u64) -> u64 {
    (d * d).pow(2 * k + 1) - count_causality_fixed(k, d)
}

/// `ceil(ln(N M) 3^l / eps^2)`.
pub fn required_shots(m: u64, epsilon: f64, max_locality: u32, num_qubits: u64) -> u64 {
    required_shots_real(m as f64, epsilon, max_locality, num_qubits as f64)
}

/// [`required_shots`] with a real-valued qubit count.
pub fn required_shots_real(m: f64, epsilon: f64, max_locality: u32, num_qubits: f64) -> u64 {
    ((num_qubits * m).ln() * 3f64.powi(max_locality as i32) / (epsilon * epsilon)).ceil() as u64
}

/// `2 ceil(log2(2M)) + 1`.
pub fn default_batches(m: usize) -> usize {
    2 * (2.0 * m.max(1) as f64).log2().ceil() as usize + 1
}

/// Value fixed by causality for a string on the single-qubit `k`-step
/// marginal, `None` if free. The identity is fixed at `2^k`.
pub fn causality_fixed_value(obs: &PauliObservable, k: u32) -> Option<f64> {
    causally_fixed_value(&MarginalSpec::single_qubit(0, k).legs(), obs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationPlan {
    pub observables: Vec<PauliObservable>,
    pub num_batches: usize,
    pub shots_per_batch: usize,
    pub epsilon: f64,
}

impl EstimationPlan {
    /// Budget from [`required_shots`] for the given locality and qubit count.
    pub fn for_accuracy(observables: Vec<PauliObservable>, epsilon: f64, num_qubits: u64) -> Result<Self> {
        let m = observables.len();
        let l = observables.iter().map(PauliObservable::weight).max().unwrap_or(0) as u32;
        let total = required_shots(m as u64, epsilon, l, num_qubits);
        let k = default_batches(m);
        Self::new(observables, k, (total as usize).div_ceil(k), epsilon)
    }

    /// Splits a fixed budget into the default number of batches.
    pub fn for_budget(observables: Vec<PauliObservable>, shots: usize) -> Result<Self> {
        let k = default_batches(observables.len());
        Self::new(observables, k, shots / k, f64::NAN)
    }

    pub fn new(observables: Vec<PauliObservable>, num_batches: usize, shots_per_batch: usize, epsilon: f64) -> Result<Self> {
        if num_batches == 0 || num_batches % 2 == 0 {
            return Err(Error::Config(format!("number of batches must be odd and positive, got {num_batches}")));
        }
        if shots_per_batch == 0 {
            return Err(Error::Config("fewer shots than batches".into()));
        }
        Ok(Self { observables, num_batches, shots_per_batch, epsilon })
    }

    pub fn total_shots(&self) -> usize {
        self.num_batches * self.shots_per_batch
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median-of-means over dense snapshots.
pub fn estimate_observables(
    snapshots: impl IntoIterator<Item = LabelledOperator>,
    plan: &EstimationPlan,
) -> Result<BTreeMap<PauliObservable, f64>> {
    let needed = plan.total_shots();
    let mut sums = vec![vec![0.0; plan.observables.len()]; plan.num_batches];
    let mut seen = 0;
    for snap in snapshots.into_iter().take(needed) {
        let batch = seen / plan.shots_per_batch;
        for (s, o) in sums[batch].iter_mut().zip(&plan.observables) {
            *s += o.trace_with(snap.data()).re;
        }
        seen += 1;
    }
    if seen < needed {
        return Err(Error::StreamExhausted { needed: needed as u64, available: seen as u64 });
    }
    Ok(plan
        .observables
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut means: Vec<f64> = sums.iter().map(|b| b[i] / plan.shots_per_batch as f64).collect();
            (o.clone(), median(&mut means))
        })
        .collect())
}

/// Per-batch means of every Pauli expectation on a marginal, accumulated
/// straight from shot records.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMeans {
    legs: Vec<LegLabel>,
    shots_per_batch: usize,
    /// `means[b][P.index()]`.
    means: Vec<Vec<f64>>,
}

impl BatchMeans {
    pub fn from_shots(shots: &ShotSet, legs: &[LegLabel], num_batches: usize, shots_per_batch: usize) -> Result<Self> {
        check_legs(legs, shots.num_qubits(), shots.num_steps())?;
        let needed = num_batches * shots_per_batch;
        if shots.len() < needed {
            return Err(Error::StreamExhausted { needed: needed as u64, available: shots.len() as u64 });
        }
        let coords: Vec<(u32, TimeLeg)> = legs.iter().map(|l| TimeLeg::of_label(l).expect("checked")).collect();
        let n = legs.len();
        let means = (0..num_batches)
            .into_par_iter()
            .map(|b| {
                let mut sums = vec![0.0; 1usize << (2 * n)];
                let mut idx = vec![0usize; 1 << n];
                let mut val = vec![0.0f64; 1 << n];
                let mut w: Vec<LegWeights> = Vec::with_capacity(n);
                for s in b * shots_per_batch..(b + 1) * shots_per_batch {
                    let raw = shots.raw(s);
                    w.clear();
                    w.extend(coords.iter().map(|&(q, l)| raw_leg_weights(raw, shots.num_qubits(), q, l)));
                    accumulate(&mut sums, &w, &mut idx, &mut val);
                }
                sums.iter_mut().for_each(|v| *v /= shots_per_batch as f64);
                sums
            })
            .collect();
        Ok(Self { legs: legs.to_vec(), shots_per_batch, means })
    }

    pub fn legs(&self) -> &[LegLabel] {
        &self.legs
    }

    pub fn num_batches(&self) -> usize {
        self.means.len()
    }

    pub fn shots_per_batch(&self) -> usize {
        self.shots_per_batch
    }

    pub fn batch(&self, b: usize) -> &[f64] {
        &self.means[b]
    }

    fn median_over(&self, batches: &[usize]) -> Vec<f64> {
        let mut scratch = vec![0.0; batches.len()];
        (0..self.means[0].len())
            .map(|p| {
                for (s, &b) in scratch.iter_mut().zip(batches) {
                    *s = self.means[b][p];
                }
                median(&mut scratch)
            })
            .collect()
    }

    pub fn median_of_means(&self) -> ExpectationTable {
        let all: Vec<usize> = (0..self.num_batches()).collect();
        ExpectationTable::dense(self.legs.clone(), self.median_over(&all), self.num_batches())
    }

    /// Median-of-means tables over `replicates` resamplings (with replacement)
    /// of the batch means.
    pub fn bootstrap(&self, replicates: usize, seed: u64) -> Vec<ExpectationTable> {
        let k = self.num_batches();
        (0..replicates)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r as u64);
                let pick: Vec<usize> = (0..k).map(|_| rng.random_range(0..k)).collect();
                ExpectationTable::dense(self.legs.clone(), self.median_over(&pick), k)
            })
            .collect()
    }
}

/// Adds the Pauli coefficients of one product snapshot: each leg contributes
/// its identity weight or its single-letter weight.
fn accumulate(sums: &mut [f64], w: &[LegWeights], idx: &mut [usize], val: &mut [f64]) {
    let n = w.len();
    idx[0] = 0;
    val[0] = 1.0;
    let mut len = 1;
    for (pos, leg) in w.iter().enumerate() {
        let shift = 2 * (n - 1 - pos);
        for i in 0..len {
            idx[len + i] = idx[i] | ((leg.letter as usize) << shift);
            val[len + i] = val[i] * leg.weight;
            val[i] *= leg.identity;
        }
        len *= 2;
    }
    for i in 0..len {
        sums[idx[i]] += val[i];
    }
}

/// Estimated expectations of Pauli strings on a fixed list of legs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectationTable {
    legs: Vec<LegLabel>,
    /// Indexed by [`PauliObservable::index`]; `None` when not estimated.
    values: Vec<Option<f64>>,
    batches: usize,
}

impl ExpectationTable {
    pub fn new(legs: Vec<LegLabel>, batches: usize) -> Self {
        let n = legs.len();
        Self { legs, values: vec![None; 1 << (2 * n)], batches }
    }

    pub fn dense(legs: Vec<LegLabel>, values: Vec<f64>, batches: usize) -> Self {
        Self { legs, values: values.into_iter().map(Some).collect(), batches }
    }

    /// Exact expectations `Tr[P A]` of every string.
    pub fn exact(choi: &LabelledOperator) -> Self {
        Self::dense(choi.legs().to_vec(), pauli_coefficients(choi.data(), choi.legs().len()), 0)
    }

    pub fn legs(&self) -> &[LegLabel] {
        &self.legs
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    pub fn get(&self, obs: &PauliObservable) -> Option<f64> {
        self.values.get(obs.index()).copied().flatten()
    }

    pub fn set(&mut self, obs: &PauliObservable, value: f64) {
        self.values[obs.index()] = Some(value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (PauliObservable, f64)> + '_ {
        let n = self.legs.len();
        self.values.iter().enumerate().filter_map(move |(i, v)| v.map(|v| (PauliObservable::from_index(i, n), v)))
    }

    /// Linear-inversion operator `2^-n sum_P e_P P`, with causally fixed
    /// strings set to their fixed values.
    pub fn linear_inversion(&self) -> Result<LabelledOperator> {
        let n = self.legs.len();
        let coeffs = self.completed_coefficients()?;
        LabelledOperator::new(from_pauli_coefficients(&coeffs, n), self.legs.clone()).map(|o| o.hermitian_part())
    }

    fn completed_coefficients(&self) -> Result<Vec<f64>> {
        let n = self.legs.len();
        let mut missing = 0;
        let coeffs = (0..self.values.len())
            .map(|i| match causally_fixed_value(&self.legs, &PauliObservable::from_index(i, n)) {
                Some(v) => v,
                None => self.values[i].unwrap_or_else(|| {
                    missing += 1;
                    0.0
                }),
            })
            .collect();
        if missing > 0 {
            return Err(Error::NotInformationallyComplete { missing });
        }
        Ok(coeffs)
    }

    /// Column file: one line per estimated string.
    pub fn to_column_text(&self) -> String {
        let mut s = String::new();
        let legs: Vec<String> = self.legs.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(s, "# legs {}", legs.join(" "));
        let _ = writeln!(s, "# observable estimate batches");
        for (p, v) in self.iter() {
            let _ = writeln!(s, "{p} {v:.12e} {}", self.batches);
        }
        s
    }

    pub fn write_column_file(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_column_text().as_bytes())?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `3^-l` for a weight-`l` string.
    #[default]
    Locality,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MleOptions {
    pub max_iters: usize,
    /// Primal and dual residual (Frobenius) at which iteration stops.
    pub tolerance: f64,
    pub weighting: Weighting,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { max_iters: 2000, tolerance: 1e-8, weighting: Weighting::Locality }
    }
}

#[derive(Clone, Debug)]
pub struct PhysicalEstimate {
    pub choi: LabelledOperator,
    /// Objective of the best feasible iterate after each iteration.
    pub objective_history: Vec<f64>,
    pub causality_residual: f64,
    /// `max(0, -min eigenvalue)`.
    pub psd_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterations without relative improvement above 1e-7 after which the best
/// feasible point is accepted.
const STALL_WINDOW: usize = 200;

/// Weighted least squares over Pauli coefficients with some coefficients
/// pinned by causality.
struct Problem {
    n: usize,
    legs: Vec<LegLabel>,
    /// Per string index: `Some((estimate, weight))` if free.
    free: Vec<Option<(f64, f64)>>,
    /// Per string index: pinned value.
    fixed: Vec<Option<f64>>,
    outputs: usize,
}

impl Problem {
    fn objective_coeffs(&self, c: &[f64]) -> f64 {
        self.free.iter().zip(c).filter_map(|(f, &x)| f.map(|(e, w)| w * (x - e).powi(2))).sum()
    }

    fn to_matrix(&self, c: &[f64]) -> CMatrix {
        from_pauli_coefficients(c, self.n)
    }

    fn coeffs(&self, x: &CMatrix) -> Vec<f64> {
        pauli_coefficients(x, self.n)
    }

    fn pin(&self, c: &mut [f64]) {
        for (x, v) in c.iter_mut().zip(&self.fixed) {
            if let Some(v) = v {
                *x = *v;
            }
        }
    }

    fn psd(&self, x: &CMatrix) -> CMatrix {
        let op = LabelledOperator::new(x.clone(), self.legs.clone()).expect("shape").hermitian_part();
        project_psd(&op).expect("Hermitian").into_data()
    }

    /// Pins the causal coefficients of a positive operator, then mixes towards
    /// `I / 2^outputs` (which satisfies every pin) until positivity is restored.
    fn feasible(&self, z: &CMatrix) -> (CMatrix, Vec<f64>) {
        let mut c = self.coeffs(z);
        self.pin(&mut c);
        let x = self.to_matrix(&c);
        let m = SpectralDecomposition::of_hermitian(&x).eigenvalues[0];
        if m >= 0.0 {
            return (x, c);
        }
        let floor = 1.0 / (1u64 << self.outputs) as f64;
        let lambda = -m / (floor - m);
        let dim = 1usize << self.n;
        let mixed = x * C64::new(1.0 - lambda, 0.0) + CMatrix::identity(dim, dim) * C64::new(lambda * floor, 0.0);
        let c = self.coeffs(&mixed);
        (mixed, c)
    }
}

/// Weighted least-squares fit of a positive, causal process to the table's
/// free expectations.
///
/// The constraint set is split into the causal affine set (handled in closed
/// form together with the quadratic objective, coefficient by coefficient)
/// and the positive cone (eigenvalue clipping), coupled by an
/// alternating-direction scheme started from the linear inversion. Every
/// iterate is mapped to a strictly feasible point; the best one is returned.
pub fn mle_reconstruct(table: &ExpectationTable, opts: &MleOptions) -> Result<PhysicalEstimate> {
    let legs = table.legs().to_vec();
    let n = legs.len();
    let size = 1usize << (2 * n);
    let mut free = vec![None; size];
    let mut fixed = vec![None; size];
    let mut missing = 0;
    for i in 0..size {
        let p = PauliObservable::from_index(i, n);
        match causally_fixed_value(&legs, &p) {
            Some(v) => fixed[i] = Some(v),
            None => match table.get(&p) {
                Some(e) => {
                    let w = match opts.weighting {
                        Weighting::Locality => 3f64.powi(-(p.weight() as i32)),
                        Weighting::Uniform => 1.0,
                    };
                    free[i] = Some((e, w));
                }
                None => missing += 1,
            },
        }
    }
    if missing > 0 {
        return Err(Error::NotInformationallyComplete { missing });
    }
    let outputs = legs.iter().filter(|l| l.direction == Direction::Out).count();
    let problem = Problem { n, legs: legs.clone(), free, fixed, outputs };
    let dim = (1usize << n) as f64;

    let mut c0 = table.completed_coefficients()?;
    problem.pin(&mut c0);
    let mut z = problem.psd(&problem.to_matrix(&c0));
    let (mut best, best_c) = problem.feasible(&z);
    let mut best_f = problem.objective_coeffs(&best_c);
    let mut history = vec![best_f];
    let mut u = CMatrix::zeros(1 << n, 1 << n);
    // rho' = rho / (2 D) in coefficient units
    let mut rho = 2.0 * dim / 9.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters && best_f > 0.0 {
        iterations += 1;
        let y = problem.coeffs(&(&z - &u));
        let rp = rho / (2.0 * dim);
        let cx: Vec<f64> = (0..size)
            .map(|i| match (problem.fixed[i], problem.free[i]) {
                (Some(v), _) => v,
                (None, Some((e, w))) => (w * e + rp * y[i]) / (w + rp),
                (None, None) => unreachable!("complete table"),
            })
            .collect();
        let x = problem.to_matrix(&cx);
        let z_prev = z;
        z = problem.psd(&(&x + &u));
        u += &x - &z;
        let primal = (&x - &z).norm();
        let dual = rho * (&z - &z_prev).norm();

        if iterations % 5 == 0 || primal <= opts.tolerance {
            let (cand, cand_c) = problem.feasible(&z);
            let f = problem.objective_coeffs(&cand_c);
            if f < best_f {
                best = cand;
                best_f = f;
            }
        }
        history.push(best_f);
        if primal <= opts.tolerance && dual <= opts.tolerance {
            converged = true;
            break;
        }
        if iterations >= STALL_WINDOW && history[iterations - STALL_WINDOW] - best_f <= 1e-7 * best_f {
            converged = true;
            break;
        }
        if primal > 10.0 * dual {
            rho *= 2.0;
            u /= C64::new(2.0, 0.0);
        } else if dual > 10.0 * primal {
            rho /= 2.0;
            u *= C64::new(2.0, 0.0);
        }
    }
    if best_f == 0.0 {
        converged = true;
    }

    let choi = LabelledOperator::new(best, legs)?.hermitian_part();
    let min = choi.min_eigenvalue()?;
    Ok(PhysicalEstimate {
        causality_residual: causality_residual(&choi),
        psd_residual: (-min).max(0.0),
        choi,
        objective_history: history,
        iterations,
        converged,
    })
}

/// [`mle_reconstruct`] that fails with [`Error::NonConvergence`] instead of
/// returning a flagged estimate.
pub fn mle_reconstruct_strict(table: &ExpectationTable, opts: &MleOptions) -> Result<PhysicalEstimate> {
    let est = mle_reconstruct(table, opts)?;
    if !est.converged {
        return Err(Error::NonConvergence { iterations: est.iterations });
    }
    Ok(est)
}

/// Median-of-means table of a marginal from shots with the default batch count.
pub fn shadow_table(shots: &ShotSet, spec: &MarginalSpec) -> Result<(BatchMeans, ExpectationTable)> {
    let legs = spec.legs();
    let k = default_batches(1 << (2 * legs.len()));
    let per = shots.len() / k;
    if per == 0 {
        return Err(Error::StreamExhausted { needed: k as u64, available: shots.len() as u64 });
    }
    let means = BatchMeans::from_shots(shots, &legs, k, per)?;
    let table = means.median_of_means();
    Ok((means, table))
}

/// Trace a process with these legs must have.
pub fn expected_trace(legs: &[LegLabel]) -> f64 {
    (1u64 << input_leg_count(legs)) as f64
}
