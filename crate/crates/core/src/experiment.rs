//! Experiment orchestration: model, shots, estimation, reconstruction,
//! analysis and report, each timed as a phase.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::analysis::{
    common_cause_matrix, filtered_qmi_map, last_step_split, naive_qmi_map, null_scores, pair_spec, qmi, qmi_between,
    NonMarkovReport, Provenance, ShadowOptions, Threshold,
};
use crate::config::{ExperimentConfig, ThresholdConfig};
use crate::error::{Error, Result};
use crate::estimator::{default_batches, mle_reconstruct, mle_reconstruct_strict, BatchMeans, ExpectationTable, MleOptions};
use crate::model::DeviceModel;
use crate::process::MarginalSpec;
use crate::report::{ExperimentReport, RunManifest, Verification};
use crate::shadow::{InstrumentPolicy, Sampler, ShotSet};
use crate::shotfile::{read_shots, write_shots};
use crate::tensor::LabelledOperator;

pub const SHOT_FILE: &str = "shots.stsh";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Use the exact oracle instead of shots.
    pub exact: bool,
    /// Also compute exact values for a shot-based run.
    pub verify: bool,
    /// Read shots from this file instead of sampling.
    pub shots: Option<PathBuf>,
    /// Write shots, report and manifest here.
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub manifest: RunManifest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Target {
    Filtered(usize),
    Pair(usize, usize),
}

impl Target {
    fn spec(self, k: u32) -> Result<MarginalSpec> {
        match self {
            Target::Filtered(q) => Ok(MarginalSpec::single_qubit(q as u32, k)),
            Target::Pair(i, j) => pair_spec(i, j),
        }
    }

    fn score(self, choi: &LabelledOperator) -> Result<f64> {
        match self {
            Target::Filtered(_) => qmi(choi),
            Target::Pair(..) => qmi_between(choi, &last_step_split(choi.legs())?),
        }
    }

    /// File stem for the expectation table.
    fn name(self) -> String {
        match self {
            Target::Filtered(q) => format!("q{q}"),
            Target::Pair(i, j) => format!("pair_{i}_{j}"),
        }
    }
}

fn targets(cfg: &ExperimentConfig) -> Vec<Target> {
    let n = cfg.device.rows * cfg.device.cols;
    let mut out = Vec::new();
    if cfg.analysis.mode.filtered() {
        out.extend((0..n).map(Target::Filtered));
    }
    if cfg.analysis.mode.common_cause() {
        out.extend((0..n).flat_map(|i| (0..n).map(move |j| Target::Pair(i, j))));
    }
    out
}

fn mle_options(cfg: &ExperimentConfig) -> MleOptions {
    MleOptions { max_iters: cfg.analysis.mle_max_iters, ..MleOptions::default() }
}

fn shadow_options(cfg: &ExperimentConfig) -> ShadowOptions {
    ShadowOptions {
        replicates: cfg.analysis.bootstrap_replicates,
        bootstrap_seed: cfg.protocol.master_seed,
        mle: mle_options(cfg),
    }
}

/// Samples the configured number of shots.
pub fn simulate(cfg: &ExperimentConfig, model: &DeviceModel) -> Result<ShotSet> {
    let sampler = Sampler::new(model, InstrumentPolicy::UniformClifford)?;
    Ok(sampler.sample_shots(cfg.protocol.master_seed, 0, cfg.protocol.shots as usize))
}

/// Loads the first `protocol.shots` shots of a file whose header matches the config.
pub fn load_shots(path: &Path, cfg: &ExperimentConfig) -> Result<ShotSet> {
    let (header, shots) = read_shots(path)?;
    header.check(cfg.device.rows * cfg.device.cols, cfg.protocol.steps, cfg.protocol.master_seed)?;
    if header.shots < cfg.protocol.shots {
        return Err(Error::StreamExhausted { needed: cfg.protocol.shots, available: header.shots });
    }
    Ok(shots.truncated(cfg.protocol.shots as usize))
}

/// Median-of-means batches for every marginal the analysis mode needs.
fn batch_means(cfg: &ExperimentConfig, shots: &ShotSet) -> Result<Vec<(Target, BatchMeans)>> {
    let k = cfg.protocol.steps as u32;
    targets(cfg)
        .into_par_iter()
        .map(|t| {
            let legs = t.spec(k)?.legs();
            let batches = match cfg.protocol.batches {
                0 => default_batches(1 << (2 * legs.len())),
                b => b,
            };
            let per = shots.len() / batches;
            if per == 0 {
                return Err(Error::StreamExhausted { needed: batches as u64, available: shots.len() as u64 });
            }
            Ok((t, BatchMeans::from_shots(shots, &legs, batches, per)?))
        })
        .collect()
}

/// Median-of-means expectation tables, named by marginal.
pub fn estimate_tables(cfg: &ExperimentConfig, shots: &ShotSet) -> Result<Vec<(String, ExpectationTable)>> {
    Ok(batch_means(cfg, shots)?.into_iter().map(|(t, m)| (t.name(), m.median_of_means())).collect())
}

struct Scored {
    target: Target,
    value: f64,
    std_error: f64,
}

fn reconstruct_and_score(cfg: &ExperimentConfig, means: &[(Target, BatchMeans)]) -> Result<Vec<Scored>> {
    let opts = shadow_options(cfg);
    let point: Vec<f64> = means
        .par_iter()
        .map(|(t, m)| t.score(&mle_reconstruct_strict(&m.median_of_means(), &opts.mle)?.choi))
        .collect::<Result<_>>()?;
    let reps = opts.replicates;
    let jobs: Vec<(usize, ExpectationTable)> = means
        .iter()
        .enumerate()
        .flat_map(|(i, (_, m))| m.bootstrap(reps, opts.bootstrap_seed).into_iter().map(move |t| (i, t)))
        .collect();
    let boot: Vec<(usize, f64)> = jobs
        .into_par_iter()
        .map(|(i, table)| Ok((i, means[i].0.score(&mle_reconstruct(&table, &opts.mle)?.choi)?)))
        .collect::<Result<_>>()?;
    Ok(means
        .iter()
        .enumerate()
        .map(|(i, (target, _))| {
            let vals: Vec<f64> = boot.iter().filter(|(j, _)| *j == i).map(|(_, v)| *v).collect();
            let std_error = if vals.len() < 2 {
                f64::NAN
            } else {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
            };
            Scored { target: *target, value: point[i], std_error }
        })
        .collect())
}

fn fixed_threshold(cfg: &ExperimentConfig) -> Result<Threshold> {
    match cfg.analysis.threshold {
        ThresholdConfig::Fixed { value_bits } => Threshold::fixed(value_bits),
        ThresholdConfig::Bootstrap { .. } => Ok(Threshold::default()),
    }
}

fn max_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs the configured experiment. Deterministic in the config: the report
/// is byte-identical across runs and thread counts.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let mut manifest = RunManifest::new(cfg.hash(), opts.exact);
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let model = manifest.time("build model", || cfg.model())?;
    let report = if opts.exact {
        if opts.shots.is_some() {
            return Err(Error::Config("exact runs do not read shot files".into()));
        }
        exact_report(cfg, &model, &mut manifest)?
    } else {
        shadow_report(cfg, &model, opts, &mut manifest)?
    };
    if let Some(dir) = &opts.out_dir {
        let path = dir.join(REPORT_FILE);
        manifest.time("write report", || report.write(&path))?;
        manifest.report = Some(path);
        manifest.write(&dir.join(MANIFEST_FILE))?;
    }
    Ok(RunOutput { report, manifest })
}

fn exact_report(cfg: &ExperimentConfig, model: &DeviceModel, manifest: &mut RunManifest) -> Result<ExperimentReport> {
    let mode = cfg.analysis.mode;
    let mut analysis = NonMarkovReport::new(
        model,
        Provenance::Exact,
        fixed_threshold(cfg)?,
        Threshold::fixed(cfg.analysis.pair_threshold_bits)?,
    );
    manifest.time("exact oracle", || {
        if mode.naive() {
            analysis.set_naive(&naive_qmi_map(model)?);
        }
        if mode.filtered() {
            analysis.set_filtered(&filtered_qmi_map(model)?, None);
        }
        if mode.common_cause() {
            analysis.set_pairwise(common_cause_matrix(model)?, None);
        }
        Ok(())
    })?;
    Ok(ExperimentReport::new(cfg.hash(), cfg.protocol.steps, analysis))
}

fn shadow_report(
    cfg: &ExperimentConfig,
    model: &DeviceModel,
    opts: &RunOptions,
    manifest: &mut RunManifest,
) -> Result<ExperimentReport> {
    let shots = match &opts.shots {
        Some(path) => {
            manifest.shot_files.push(path.clone());
            manifest.time("load shots", || load_shots(path, cfg))?
        }
        None => {
            let shots = manifest.time("sample shots", || simulate(cfg, model))?;
            if let Some(dir) = &opts.out_dir {
                let path = dir.join(SHOT_FILE);
                manifest.time("write shots", || write_shots(&path, &shots))?;
                manifest.shot_files.push(path);
            }
            shots
        }
    };
    let means = manifest.time("estimate", || batch_means(cfg, &shots))?;
    let scored = manifest.time("reconstruct", || reconstruct_and_score(cfg, &means))?;

    let qubit_threshold = match cfg.analysis.threshold {
        ThresholdConfig::Fixed { value_bits } => Threshold::fixed(value_bits)?,
        ThresholdConfig::Bootstrap { percentile, null_models, null_seed } => manifest.time("null ensemble", || {
            let models = cfg.null_models(null_models, null_seed)?;
            let scores = null_scores(&models, shots.len(), cfg.protocol.master_seed, &shadow_options(cfg))?;
            Threshold::from_null(&scores, percentile)
        })?,
    };
    let n = model.num_qubits();
    let mut analysis = NonMarkovReport::new(
        model,
        Provenance::Shadow { shots: shots.len() as u64, seed: cfg.protocol.master_seed },
        qubit_threshold,
        Threshold::fixed(cfg.analysis.pair_threshold_bits)?,
    );
    let filtered: Vec<&Scored> = scored.iter().filter(|s| matches!(s.target, Target::Filtered(_))).collect();
    if !filtered.is_empty() {
        let values: Vec<f64> = filtered.iter().map(|s| s.value).collect();
        let errors: Vec<f64> = filtered.iter().map(|s| s.std_error).collect();
        analysis.set_filtered(&values, Some(&errors));
    }
    let pairs: Vec<&Scored> = scored.iter().filter(|s| matches!(s.target, Target::Pair(..))).collect();
    if !pairs.is_empty() {
        let values: Vec<Vec<f64>> = pairs.chunks(n).map(|r| r.iter().map(|s| s.value).collect()).collect();
        let errors: Vec<Vec<f64>> = pairs.chunks(n).map(|r| r.iter().map(|s| s.std_error).collect()).collect();
        analysis.set_pairwise(values, Some(errors));
    }
    let mut report = ExperimentReport::new(cfg.hash(), cfg.protocol.steps, analysis);

    if opts.verify {
        report.verification = Some(manifest.time("verify", || {
            let mode = cfg.analysis.mode;
            let mut dev: f64 = 0.0;
            let filtered = if mode.filtered() { Some(filtered_qmi_map(model)?) } else { None };
            if let Some(f) = &filtered {
                let got: Vec<f64> = report.analysis.qubits.iter().map(|q| q.filtered_qmi.unwrap_or(f64::NAN)).collect();
                dev = dev.max(max_deviation(f, &got));
            }
            let pairwise = if mode.common_cause() { Some(common_cause_matrix(model)?) } else { None };
            if let (Some(exact), Some(got)) = (&pairwise, &report.analysis.pairwise) {
                for (a, b) in exact.iter().zip(got) {
                    dev = dev.max(max_deviation(a, b));
                }
            }
            Ok(Verification {
                exact_filtered_qmi: filtered,
                exact_naive_qmi: if mode.naive() { Some(naive_qmi_map(model)?) } else { None },
                exact_common_cause: pairwise,
                max_abs_deviation: dev,
            })
        })?);
    }
    Ok(report)
}

/// Re-runs the analysis of a config from a stored shot file.
pub fn resume_from_shots(path: &Path, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let opts = RunOptions { shots: Some(path.to_path_buf()), ..RunOptions::default() };
    Ok(run_experiment(cfg, &opts)?.report)
}
