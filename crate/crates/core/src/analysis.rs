//! Quantum mutual information of process marginals, per-qubit bath scores,
//! pairwise common-cause detection, and classification.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{mle_reconstruct, shadow_table, BatchMeans, MleOptions};
use crate::model::DeviceModel;
use crate::process::{block_marginal, exact_process_choi, markov_closest, product_of_marginals, Background, MarginalSpec, TimeLeg};
use crate::shadow::ShotSet;
use crate::tensor::{relative_entropy_within_support, LabelledOperator, LegLabel};

/// Default classification threshold in bits.
pub const DEFAULT_THRESHOLD: f64 = 0.02;

/// `S[Y || Markov(Y)]` in bits, on unit-trace copies.
pub fn qmi(choi: &LabelledOperator) -> Result<f64> {
    relative_entropy_within_support(choi, &markov_closest(choi)?)
}

/// Mutual information between the given blocks of legs.
pub fn qmi_between(choi: &LabelledOperator, blocks: &[Vec<LegLabel>]) -> Result<f64> {
    relative_entropy_within_support(choi, &product_of_marginals(choi, blocks)?)
}

/// Split of a common-cause marginal (or of a single-qubit two-step process):
/// the last step's legs against everything earlier.
pub fn last_step_split(legs: &[LegLabel]) -> Result<Vec<Vec<LegLabel>>> {
    let last = legs.iter().map(|l| l.time).max().unwrap_or(0);
    if last == 0 {
        return Err(Error::InvalidMarginal("no step to split off".into()));
    }
    let (late, early): (Vec<LegLabel>, Vec<LegLabel>) = legs.iter().partition(|l| l.time == last);
    if early.is_empty() {
        return Err(Error::InvalidMarginal("nothing before the last step".into()));
    }
    Ok(vec![late, early])
}

fn check_two_step(model: &DeviceModel) -> Result<()> {
    if model.num_steps() != 2 {
        return Err(Error::InvalidModel(format!("pairwise analysis needs k = 2, model has k = {}", model.num_steps())));
    }
    Ok(())
}

/// Per-qubit QMI of the single-qubit marginal with every other qubit
/// depolarised at each intervention.
pub fn filtered_qmi_map(model: &DeviceModel) -> Result<Vec<f64>> {
    single_qubit_map(model, Background::Depolarized)
}

/// Per-qubit QMI with every other qubit left idle.
pub fn naive_qmi_map(model: &DeviceModel) -> Result<Vec<f64>> {
    single_qubit_map(model, Background::Idle)
}

fn single_qubit_map(model: &DeviceModel, background: Background) -> Result<Vec<f64>> {
    let k = model.num_steps() as u32;
    (0..model.num_qubits() as u32)
        .into_par_iter()
        .map(|q| qmi(&exact_process_choi(model, &MarginalSpec::single_qubit(q, k).with_background(background))?))
        .collect()
}

/// Entry `(i, j)`: mutual information between the step-2 map of `q_j` and the
/// step-1 process of `q_i`. The diagonal holds each qubit's own split of
/// `Y_{2:0}` into step 2 against step 1 and the initial state.
pub fn common_cause_matrix(model: &DeviceModel) -> Result<Vec<Vec<f64>>> {
    check_two_step(model)?;
    let n = model.num_qubits();
    let entries: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|ij| {
            let spec = pair_spec(ij / n, ij % n)?;
            let choi = exact_process_choi(model, &spec)?;
            qmi_between(&choi, &last_step_split(choi.legs())?)
        })
        .collect::<Result<_>>()?;
    Ok(entries.chunks(n).map(<[f64]>::to_vec).collect())
}

/// Marginal behind entry `(i, j)` of the pairwise matrix.
pub fn pair_spec(i: usize, j: usize) -> Result<MarginalSpec> {
    if i == j {
        Ok(MarginalSpec::single_qubit(i as u32, 2))
    } else {
        MarginalSpec::common_cause(i as u32, j as u32)
    }
}

/// A score estimated from shots, with its bootstrap standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowScore {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadowOptions {
    /// Bootstrap replicates for the standard error; 0 skips the bootstrap.
    pub replicates: usize,
    pub bootstrap_seed: u64,
    pub mle: MleOptions,
}

impl Default for ShadowOptions {
    fn default() -> Self {
        Self { replicates: 20, bootstrap_seed: 0, mle: MleOptions::default() }
    }
}

fn shadow_score(
    shots: &ShotSet,
    spec: &MarginalSpec,
    opts: &ShadowOptions,
    score: &(dyn Fn(&LabelledOperator) -> Result<f64> + Sync),
) -> Result<ShadowScore> {
    let (means, table) = shadow_table(shots, spec)?;
    let value = score(&mle_reconstruct(&table, &opts.mle)?.choi)?;
    let std_error = bootstrap_error(&means, opts, score)?;
    Ok(ShadowScore { value, std_error })
}

fn bootstrap_error(
    means: &BatchMeans,
    opts: &ShadowOptions,
    score: &(dyn Fn(&LabelledOperator) -> Result<f64> + Sync),
) -> Result<f64> {
    if opts.replicates < 2 {
        return Ok(f64::NAN);
    }
    let values: Vec<f64> = means
        .bootstrap(opts.replicates, opts.bootstrap_seed)
        .par_iter()
        .map(|t| score(&mle_reconstruct(t, &opts.mle)?.choi))
        .collect::<Result<_>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    Ok(var.sqrt())
}

/// Shot-based [`filtered_qmi_map`]: every qubit's marginal is reconstructed
/// from the same shots.
pub fn filtered_qmi_map_shadow(shots: &ShotSet, opts: &ShadowOptions) -> Result<Vec<ShadowScore>> {
    let k = shots.num_steps() as u32;
    (0..shots.num_qubits() as u32)
        .into_par_iter()
        .map(|q| shadow_score(shots, &MarginalSpec::single_qubit(q, k), opts, &qmi))
        .collect()
}

/// Shot-based [`common_cause_matrix`].
pub fn common_cause_matrix_shadow(shots: &ShotSet, opts: &ShadowOptions) -> Result<Vec<Vec<ShadowScore>>> {
    if shots.num_steps() != 2 {
        return Err(Error::InvalidModel(format!("pairwise analysis needs k = 2, shots have k = {}", shots.num_steps())));
    }
    let n = shots.num_qubits();
    let split = |c: &LabelledOperator| qmi_between(c, &last_step_split(c.legs())?);
    let entries: Vec<ShadowScore> = (0..n * n)
        .into_par_iter()
        .map(|ij| shadow_score(shots, &pair_spec(ij / n, ij % n)?, opts, &split))
        .collect::<Result<_>>()?;
    Ok(entries.chunks(n).map(<[ShadowScore]>::to_vec).collect())
}

/// `(a - b) / sqrt(se_a^2 + se_b^2)`.
pub fn separation(a: &ShadowScore, b: &ShadowScore) -> f64 {
    (a.value - b.value) / (a.std_error.powi(2) + b.std_error.powi(2)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdDerivation {
    Fixed,
    /// Percentile of scores from a null ensemble of bath-free models.
    BootstrapPercentile { percentile: f64, ensemble_values: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub derivation: ThresholdDerivation,
}

impl Threshold {
    pub fn fixed(value: f64) -> Result<Self> {
        if !(value > 0.0) {
            return Err(Error::Config(format!("threshold must be positive, got {value}")));
        }
        Ok(Self { value, derivation: ThresholdDerivation::Fixed })
    }

    /// The `percentile` (in `(0, 1)`) of the null scores, by linear
    /// interpolation between order statistics.
    pub fn from_null(null_scores: &[f64], percentile: f64) -> Result<Self> {
        if null_scores.is_empty() {
            return Err(Error::Config("empty null ensemble".into()));
        }
        let mut v = null_scores.to_vec();
        v.sort_by(f64::total_cmp);
        let pos = percentile * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        let value = v[lo] + (v[hi] - v[lo]) * (pos - lo as f64);
        Ok(Self {
            value: value.max(f64::MIN_POSITIVE),
            derivation: ThresholdDerivation::BootstrapPercentile { percentile, ensemble_values: v.len() },
        })
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self { value: DEFAULT_THRESHOLD, derivation: ThresholdDerivation::Fixed }
    }
}

/// `value > threshold`.
pub fn classify(values: &[f64], threshold: &Threshold) -> Vec<bool> {
    values.iter().map(|&v| v > threshold.value).collect()
}

/// Shot-based filtered scores of every qubit of every null model, pooled.
pub fn null_scores(null_models: &[DeviceModel], shots: usize, seed: u64, opts: &ShadowOptions) -> Result<Vec<f64>> {
    let opts = ShadowOptions { replicates: 0, ..*opts };
    let mut out = Vec::new();
    for (m, model) in null_models.iter().enumerate() {
        let set = crate::shadow::sample_shots(model, seed.wrapping_add(m as u64), shots)?;
        out.extend(filtered_qmi_map_shadow(&set, &opts)?.into_iter().map(|s| s.value));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    Shadow { shots: u64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QubitEntry {
    pub id: u32,
    pub row: i32,
    pub col: i32,
    pub naive_qmi: Option<f64>,
    pub filtered_qmi: Option<f64>,
    pub filtered_std_error: Option<f64>,
    pub bath_coupled: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairFlag {
    pub earlier: u32,
    pub later: u32,
    pub shared_bath: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonMarkovReport {
    pub qubits: Vec<QubitEntry>,
    /// `pairwise[i][j]` as in [`common_cause_matrix`].
    pub pairwise: Option<Vec<Vec<f64>>>,
    pub pairwise_std_error: Option<Vec<Vec<f64>>>,
    /// Off-diagonal pairs above threshold in both directions are shared.
    pub pairs: Vec<PairFlag>,
    pub qubit_threshold: Threshold,
    pub pair_threshold: Threshold,
    pub provenance: Provenance,
}

impl NonMarkovReport {
    pub fn new(model: &DeviceModel, provenance: Provenance, qubit_threshold: Threshold, pair_threshold: Threshold) -> Self {
        let qubits = model
            .register
            .iter()
            .map(|q| QubitEntry {
                id: q.id,
                row: q.row,
                col: q.col,
                naive_qmi: None,
                filtered_qmi: None,
                filtered_std_error: None,
                bath_coupled: None,
            })
            .collect();
        Self { qubits, pairwise: None, pairwise_std_error: None, pairs: vec![], qubit_threshold, pair_threshold, provenance }
    }

    pub fn set_filtered(&mut self, values: &[f64], std_errors: Option<&[f64]>) {
        let flags = classify(values, &self.qubit_threshold);
        for (i, q) in self.qubits.iter_mut().enumerate() {
            q.filtered_qmi = Some(values[i]);
            q.filtered_std_error = std_errors.map(|s| s[i]);
            q.bath_coupled = Some(flags[i]);
        }
    }

    pub fn set_naive(&mut self, values: &[f64]) {
        for (q, &v) in self.qubits.iter_mut().zip(values) {
            q.naive_qmi = Some(v);
        }
    }

    pub fn set_pairwise(&mut self, matrix: Vec<Vec<f64>>, std_errors: Option<Vec<Vec<f64>>>) {
        let n = matrix.len();
        self.pairs = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i < j)
            .map(|(i, j)| PairFlag {
                earlier: i as u32,
                later: j as u32,
                shared_bath: matrix[i][j] > self.pair_threshold.value && matrix[j][i] > self.pair_threshold.value,
            })
            .collect();
        self.pairwise = Some(matrix);
        self.pairwise_std_error = std_errors;
    }

    pub fn flagged_qubits(&self) -> Vec<u32> {
        self.qubits.iter().filter(|q| q.bath_coupled == Some(true)).map(|q| q.id).collect()
    }

    pub fn shared_pairs(&self) -> Vec<(u32, u32)> {
        self.pairs.iter().filter(|p| p.shared_bath).map(|p| (p.earlier, p.later)).collect()
    }
}

/// Legs of the single-qubit marginal `q` over `k` steps, for callers that
/// build their own operators.
pub fn single_qubit_legs(q: u32, k: u32) -> Vec<LegLabel> {
    TimeLeg::all(k).into_iter().map(|l| l.label(q)).collect()
}

/// Marginal of one block, keeping the trace convention.
pub fn block(choi: &LabelledOperator, legs: &[LegLabel]) -> Result<LabelledOperator> {
    block_marginal(choi, legs)
}
