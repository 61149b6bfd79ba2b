//! JSON report and run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::NonMarkovReport;
use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// One heatmap cell. Per-qubit maps use grid column and row; the pairwise map
/// uses `x = later qubit`, `y = earlier qubit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Heatmaps {
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub naive_qmi: Vec<Cell>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub filtered_qmi: Vec<Cell>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub common_cause: Vec<Cell>,
}

/// Exact values next to the shot-based ones, filled by `--verify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub exact_filtered_qmi: Option<Vec<f64>>,
    pub exact_naive_qmi: Option<Vec<f64>>,
    pub exact_common_cause: Option<Vec<Vec<f64>>>,
    pub max_abs_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub num_qubits: usize,
    pub num_steps: usize,
    pub analysis: NonMarkovReport,
    pub flagged_qubits: Vec<u32>,
    pub shared_pairs: Vec<(u32, u32)>,
    pub heatmaps: Heatmaps,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub verification: Option<Verification>,
}

impl ExperimentReport {
    pub fn new(config_hash: String, num_steps: usize, analysis: NonMarkovReport) -> Self {
        let per_qubit = |f: &dyn Fn(&crate::analysis::QubitEntry) -> Option<f64>| {
            analysis
                .qubits
                .iter()
                .filter_map(|q| f(q).map(|value| Cell { x: q.col, y: q.row, value }))
                .collect::<Vec<_>>()
        };
        let common_cause = analysis
            .pairwise
            .iter()
            .flat_map(|m| {
                m.iter().enumerate().flat_map(|(i, row)| {
                    row.iter().enumerate().map(move |(j, &value)| Cell { x: j as i32, y: i as i32, value })
                })
            })
            .collect();
        let heatmaps = Heatmaps {
            naive_qmi: per_qubit(&|q| q.naive_qmi),
            filtered_qmi: per_qubit(&|q| q.filtered_qmi),
            common_cause,
        };
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash,
            num_qubits: analysis.qubits.len(),
            num_steps,
            flagged_qubits: analysis.flagged_qubits(),
            shared_pairs: analysis.shared_pairs(),
            analysis,
            heatmaps,
            verification: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| crate::Error::Format(format!("{}: {e}", path.display())))
    }

    /// Plain-text summary: one line per qubit, then the pairwise matrix.
    pub fn summary(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut out = format!(
            "{} qubits, k = {}, provenance {:?}\n{:>5} {:>4} {:>4} {:>9} {:>9} {:>9} {}\n",
            self.num_qubits, self.num_steps, self.analysis.provenance, "qubit", "row", "col", "naive", "filtered", "se", "flag"
        );
        for q in &self.analysis.qubits {
            out += &format!(
                "{:>5} {:>4} {:>4} {:>9} {:>9} {:>9} {}\n",
                q.id,
                q.row,
                q.col,
                fmt(q.naive_qmi),
                fmt(q.filtered_qmi),
                fmt(q.filtered_std_error),
                match q.bath_coupled {
                    Some(true) => "bath",
                    Some(false) => "clean",
                    None => "-",
                }
            );
        }
        if let Some(m) = &self.analysis.pairwise {
            out += "pairwise (row = earlier, column = later):\n";
            for row in m {
                out += &row.iter().map(|v| format!("{v:9.4}")).collect::<Vec<_>>().join(" ");
                out.push('\n');
            }
            out += &format!("shared pairs: {:?}\n", self.shared_pairs);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

/// Everything about a run that is not determined by the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub exact: bool,
    pub timings: Vec<PhaseTiming>,
    pub shot_files: Vec<PathBuf>,
    pub report: Option<PathBuf>,
}

impl RunManifest {
    pub fn new(config_hash: String, exact: bool) -> Self {
        Self {
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            exact,
            timings: Vec::new(),
            shot_files: Vec::new(),
            report: None,
        }
    }

    pub fn time<T>(&mut self, phase: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = std::time::Instant::now();
        let out = f().map_err(|e| e.in_phase(phase));
        self.timings.push(PhaseTiming { phase: phase.to_string(), seconds: start.elapsed().as_secs_f64() });
        log::info!("{phase}: {:.3} s", start.elapsed().as_secs_f64());
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serialises") + "\n")?;
        Ok(())
    }
}
