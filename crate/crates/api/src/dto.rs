//! HTTP request and response bodies.

use crate::config::{RunConfig, SourceSection};
use crate::report::{
    CompressionRow, MuRow, OfflineRow, OracleRow, ResidualRow, SolveRow, SolveTimingRow, SpectrumRow, SpectrumSummary,
    SweepRow, SweepTimingRow, TimingRow,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub config: RunConfig,
}

/// Result of the offline stage, kept by the service under `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub offline: OfflineRow,
    pub timings: Vec<TimingRow>,
    pub compression: Vec<CompressionRow>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveRequest {
    /// Overrides the session configuration's sources.
    pub sources: Option<SourceSection>,
    /// Compare every solution against a global direct solve.
    pub oracle: Option<bool>,
    pub include_fields: bool,
}

/// Complex field on the extended grid, depth-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDump {
    pub source_id: usize,
    pub nx_ext: usize,
    pub nz_ext: usize,
    pub h: f64,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResponse {
    pub rows: Vec<SolveRow>,
    pub residuals: Vec<ResidualRow>,
    pub timings: Vec<SolveTimingRow>,
    pub fields: Vec<FieldDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResponse {
    pub eigenvalues: Vec<SpectrumRow>,
    pub mu: Vec<MuRow>,
    pub summary: SpectrumSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRequest {
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResponse {
    pub rows: Vec<SweepRow>,
    pub timings: Vec<SweepTimingRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub rows: Vec<OracleRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Numerical,
    NotFound,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub sessions: usize,
}
