//! CSV row types. Column names are part of the external interface: the
//! plotting scripts read them by name, so they only ever gain columns at the
//! end. Wall-clock timings live in their own files so the numeric files are
//! byte-identical between runs with the same seed.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub trait CsvRow: Serialize {
    const HEADER: &'static [&'static str];
    /// File name used under the output directory.
    const FILE: &'static str;
}

macro_rules! csv_row {
    ($ty:ident, $file:literal, [$($col:literal),* $(,)?]) => {
        impl CsvRow for $ty {
            const HEADER: &'static [&'static str] = &[$($col),*];
            const FILE: &'static str = $file;
        }
    };
}

/// One line per offline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub stage: String,
    pub seconds: f64,
}
csv_row!(TimingRow, "offline_timings.csv", ["stage", "seconds"]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineRow {
    pub nx: usize,
    pub nz: usize,
    pub n_pml: usize,
    pub h: f64,
    pub omega: f64,
    pub pml_strength: f64,
    pub layers: usize,
    pub plr_enabled: bool,
    pub plr_epsilon: f64,
    pub r_max: usize,
    pub kernels: usize,
    pub stored_entries: usize,
    pub dense_entries: usize,
    pub compression_ratio: f64,
    pub min_relative_pivot: f64,
}
csv_row!(
    OfflineRow,
    "offline.csv",
    [
        "nx",
        "nz",
        "n_pml",
        "h",
        "omega",
        "pml_strength",
        "layers",
        "plr_enabled",
        "plr_epsilon",
        "r_max",
        "kernels",
        "stored_entries",
        "dense_entries",
        "compression_ratio",
        "min_relative_pivot"
    ]
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRow {
    pub layer: usize,
    pub target: String,
    pub source: String,
    pub rows: usize,
    pub cols: usize,
    pub stored_entries: usize,
    pub ratio: f64,
    pub leaves: usize,
    pub max_rank: usize,
}
csv_row!(
    CompressionRow,
    "compression.csv",
    ["layer", "target", "source", "rows", "cols", "stored_entries", "ratio", "leaves", "max_rank"]
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRow {
    pub source_id: usize,
    pub iterations: usize,
    /// `converged`, `breakdown`, `max_iterations`, `stagnated` or `failed`.
    pub status: String,
    pub final_residual: f64,
    pub true_residual: f64,
    pub oracle_error: Option<f64>,
    pub error: String,
}
csv_row!(
    SolveRow,
    "solve.csv",
    ["source_id", "iterations", "status", "final_residual", "true_residual", "oracle_error", "error"]
);

impl SolveRow {
    pub fn succeeded(&self) -> bool {
        self.status == "converged" || self.status == "breakdown"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub source_id: usize,
    pub iteration: usize,
    pub relative_residual: f64,
}
csv_row!(ResidualRow, "residuals.csv", ["source_id", "iteration", "relative_residual"]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTimingRow {
    pub source_id: usize,
    pub stage: String,
    pub seconds: f64,
}
csv_row!(SolveTimingRow, "solve_timings.csv", ["source_id", "stage", "seconds"]);

/// Eigenvalue of the once-swept preconditioned polarized system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub index: usize,
    pub re: f64,
    pub im: f64,
    pub distance_to_one: f64,
}
csv_row!(SpectrumRow, "spectrum.csv", ["index", "re", "im", "distance_to_one"]);

/// Eigenvalue of the double-reflection operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuRow {
    pub index: usize,
    pub re: f64,
    pub im: f64,
}
csv_row!(MuRow, "mu.csv", ["index", "re", "im"]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub dimension: usize,
    pub within_1e_8: usize,
    pub outside_0_2: usize,
}
csv_row!(SpectrumSummary, "spectrum_summary.csv", ["dimension", "within_1e_8", "outside_0_2"]);

/// One cell of an iteration table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub omega: f64,
    pub layers: usize,
    pub sources: usize,
    pub min_iterations: Option<usize>,
    pub max_iterations: Option<usize>,
    /// `ok`, or `infeasible: <reason>`.
    pub status: String,
}
csv_row!(SweepRow, "sweep.csv", ["n", "omega", "layers", "sources", "min_iterations", "max_iterations", "status"]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTimingRow {
    pub n: usize,
    pub layers: usize,
    pub offline_seconds: f64,
    pub mean_iteration_seconds: f64,
}
csv_row!(SweepTimingRow, "sweep_timings.csv", ["n", "layers", "offline_seconds", "mean_iteration_seconds"]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub check: String,
    pub case: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}
csv_row!(OracleRow, "oracle.csv", ["check", "case", "value", "tolerance", "pass"]);

/// Writes `rows` under an explicit header, so an empty list still yields a
/// header line.
pub fn write_rows<T: CsvRow, W: Write>(out: W, rows: &[T]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(T::HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `rows` to `dir/T::FILE`.
pub fn write_file<T: CsvRow>(dir: &Path, rows: &[T]) -> csv::Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(T::FILE);
    write_rows(std::fs::File::create(&path)?, rows)?;
    Ok(path)
}
