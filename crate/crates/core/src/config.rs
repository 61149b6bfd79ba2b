//! Experiment configuration (TOML). Unknown keys are rejected. Quantities
//! carry their unit in the key name: couplings in rad per time unit, step
//! durations in time units, thresholds in bits.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::Threshold;
use crate::error::{Error, Result};
use crate::model::{ket_state, CrosstalkEdge, DeviceModel};
use crate::process::MAX_SIMULATED_QUBITS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub device: DeviceConfig,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub rows: usize,
    pub cols: usize,
    /// Named single-qubit state shared by all register qubits.
    #[serde(default = "default_state")]
    pub initial_state: String,
    #[serde(default = "one")]
    pub step_duration_time: f64,
    #[serde(default)]
    pub crosstalk: CrosstalkConfig,
    #[serde(default)]
    pub defects: Vec<DefectConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CrosstalkConfig {
    None,
    Edges { edges: Vec<EdgeConfig> },
    NearestNeighbourRandom { seed: u64, j_min_rad_per_time: f64, j_max_rad_per_time: f64 },
}

impl Default for CrosstalkConfig {
    fn default() -> Self {
        CrosstalkConfig::None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub a: u32,
    pub b: u32,
    pub j_rad_per_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectConfig {
    #[serde(default = "zero_state")]
    pub initial_state: String,
    pub couplings: Vec<CouplingConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub qubit: u32,
    pub g_rad_per_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub steps: usize,
    pub shots: u64,
    pub master_seed: u64,
    /// Target accuracy per expectation value; informational when `shots` is set.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Median-of-means batch count; 0 picks the default for the marginal size.
    #[serde(default)]
    pub batches: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisMode {
    Filtered,
    Naive,
    CommonCause,
    All,
}

impl AnalysisMode {
    pub fn filtered(self) -> bool {
        matches!(self, AnalysisMode::Filtered | AnalysisMode::All)
    }

    pub fn naive(self) -> bool {
        matches!(self, AnalysisMode::Naive | AnalysisMode::All)
    }

    pub fn common_cause(self) -> bool {
        matches!(self, AnalysisMode::CommonCause | AnalysisMode::All)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdConfig {
    Fixed {
        value_bits: f64,
    },
    /// Percentile of filtered scores over bath-free models with re-drawn
    /// crosstalk, sampled at the experiment's shot count.
    Bootstrap {
        percentile: f64,
        null_models: usize,
        #[serde(default)]
        null_seed: u64,
    },
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig::Fixed { value_bits: crate::analysis::DEFAULT_THRESHOLD }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_mode")]
    pub mode: AnalysisMode,
    #[serde(default)]
    pub threshold: ThresholdConfig,
    #[serde(default = "default_pair_threshold")]
    pub pair_threshold_bits: f64,
    #[serde(default = "default_replicates")]
    pub bootstrap_replicates: usize,
    #[serde(default = "default_mle_iters")]
    pub mle_max_iters: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            threshold: ThresholdConfig::default(),
            pair_threshold_bits: default_pair_threshold(),
            bootstrap_replicates: default_replicates(),
            mle_max_iters: default_mle_iters(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

fn default_state() -> String {
    "plus".into()
}
fn zero_state() -> String {
    "zero".into()
}
fn one() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    0.05
}
fn default_mode() -> AnalysisMode {
    AnalysisMode::All
}
fn default_pair_threshold() -> f64 {
    crate::analysis::DEFAULT_THRESHOLD
}
fn default_replicates() -> usize {
    20
}
fn default_mle_iters() -> usize {
    2000
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.device;
        let n = d.rows * d.cols;
        if n == 0 {
            return Err(Error::Config("device has no qubits".into()));
        }
        if ket_state(&d.initial_state).is_none() {
            return Err(Error::Config(format!("unknown initial state `{}`", d.initial_state)));
        }
        if !(d.step_duration_time > 0.0) {
            return Err(Error::Config("step_duration_time must be positive".into()));
        }
        let check_qubit = |q: u32, what: &str| {
            if q as usize >= n {
                Err(Error::Config(format!("{what} refers to qubit {q}, device has {n}")))
            } else {
                Ok(())
            }
        };
        match &d.crosstalk {
            CrosstalkConfig::Edges { edges } => {
                for e in edges {
                    check_qubit(e.a, "crosstalk edge")?;
                    check_qubit(e.b, "crosstalk edge")?;
                }
            }
            CrosstalkConfig::NearestNeighbourRandom { j_min_rad_per_time: lo, j_max_rad_per_time: hi, .. } => {
                if !(lo <= hi) {
                    return Err(Error::Config(format!("empty coupling range [{lo}, {hi}]")));
                }
            }
            CrosstalkConfig::None => {}
        }
        for defect in &d.defects {
            if ket_state(&defect.initial_state).is_none() {
                return Err(Error::Config(format!("unknown defect state `{}`", defect.initial_state)));
            }
            for c in &defect.couplings {
                check_qubit(c.qubit, "defect coupling")?;
            }
        }
        let p = &self.protocol;
        if p.steps == 0 {
            return Err(Error::Config("protocol.steps must be at least 1".into()));
        }
        if p.batches != 0 && p.batches % 2 == 0 {
            return Err(Error::Config(format!("protocol.batches must be odd, got {}", p.batches)));
        }
        if self.analysis.mode.common_cause() && p.steps != 2 {
            return Err(Error::Config("common_cause analysis needs protocol.steps = 2".into()));
        }
        self.qubit_threshold_fixed()?;
        Threshold::fixed(self.analysis.pair_threshold_bits)?;
        if self.num_sites() <= MAX_SIMULATED_QUBITS {
            self.model()?.validate()?;
        }
        Ok(())
    }

    /// Register qubits plus defects.
    pub fn num_sites(&self) -> usize {
        self.device.rows * self.device.cols + self.device.defects.len()
    }

    fn qubit_threshold_fixed(&self) -> Result<()> {
        match self.analysis.threshold {
            ThresholdConfig::Fixed { value_bits } => Threshold::fixed(value_bits).map(|_| ()),
            ThresholdConfig::Bootstrap { percentile, null_models, .. } => {
                if !(0.0 < percentile && percentile < 1.0) || null_models == 0 {
                    return Err(Error::Config("bootstrap threshold needs 0 < percentile < 1 and null_models > 0".into()));
                }
                Ok(())
            }
        }
    }

    /// The device model described by the config.
    pub fn model(&self) -> Result<DeviceModel> {
        let d = &self.device;
        let sites = self.num_sites();
        if sites > MAX_SIMULATED_QUBITS {
            return Err(Error::DimensionOverflow {
                dim: 1usize << sites.min(63),
                limit: 1usize << MAX_SIMULATED_QUBITS,
                detail: format!("{} register qubits and {} defects", d.rows * d.cols, d.defects.len()),
            });
        }
        let state = ket_state(&d.initial_state).ok_or_else(|| Error::Config(format!("unknown state `{}`", d.initial_state)))?;
        let mut model = DeviceModel::grid(d.rows, d.cols, self.protocol.steps).with_uniform_initial_state(&state);
        model.step_durations = vec![d.step_duration_time; self.protocol.steps];
        model = match &d.crosstalk {
            CrosstalkConfig::None => model,
            CrosstalkConfig::Edges { edges } => {
                model.nearest_neighbour = false;
                model.crosstalk = edges.iter().map(|e| CrosstalkEdge { a: e.a, b: e.b, j: e.j_rad_per_time }).collect();
                model
            }
            CrosstalkConfig::NearestNeighbourRandom { seed, j_min_rad_per_time, j_max_rad_per_time } => {
                model.with_random_nearest_neighbour_crosstalk(*seed, *j_min_rad_per_time, *j_max_rad_per_time)
            }
        };
        for defect in &d.defects {
            let couplings: Vec<(u32, f64)> = defect.couplings.iter().map(|c| (c.qubit, c.g_rad_per_time)).collect();
            model = model.with_defect(&couplings);
            model.defects.last_mut().unwrap().initial_state = ket_state(&defect.initial_state).unwrap();
        }
        Ok(model)
    }

    /// Bath-free copies of the device with crosstalk re-drawn per model.
    pub fn null_models(&self, count: usize, seed: u64) -> Result<Vec<DeviceModel>> {
        (0..count as u64)
            .map(|m| {
                let mut cfg = self.clone();
                cfg.device.defects.clear();
                if let CrosstalkConfig::NearestNeighbourRandom { seed: s, .. } = &mut cfg.device.crosstalk {
                    *s = seed.wrapping_add(m);
                }
                cfg.model()
            })
            .collect()
    }

    /// SHA-256 of the canonical serialisation, hex encoded.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
