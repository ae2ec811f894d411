//! Typed client for the solver service. Error bodies come back as
//! [`ClientError::Api`] with the service's error kind preserved, so callers
//! can tell configuration mistakes from numerical failures.

use polartrace_api::dto::{
    ApiError, CreateSession, ErrorKind, Health, OracleRequest, OracleResponse, SessionInfo, SolveRequest, SolveResponse,
    SpectrumResponse, SweepRequest, SweepResponse,
};
use polartrace_api::RunConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{message} (HTTP {status})")]
    Api { status: u16, kind: ErrorKind, message: String },
    #[error("request to {url} failed: {source}")]
    Transport { url: String, source: reqwest::Error },
    #[error("unexpected response from {url} (HTTP {status}): {body}")]
    Unexpected { url: String, status: u16, body: String },
}

impl ClientError {
    /// Kind reported by the service; transport problems count as internal.
    pub fn kind(&self) -> ErrorKind {
        match self {
            ClientError::Api { kind, .. } => *kind,
            _ => ErrorKind::Internal,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8730`.
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(url: String, resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        if status.is_success() {
            return serde_json_from(&bytes).ok_or_else(|| ClientError::Unexpected {
                url,
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
        match serde_json_from::<ApiError>(&bytes) {
            Some(e) => Err(ClientError::Api { status: status.as_u16(), kind: e.kind, message: e.message }),
            // axum's own rejections (malformed JSON, unknown fields) are plain text
            None if status.is_client_error() => Err(ClientError::Api {
                status: status.as_u16(),
                kind: if status.as_u16() == 404 { ErrorKind::NotFound } else { ErrorKind::Config },
                message: String::from_utf8_lossy(&bytes).into_owned(),
            }),
            None => Err(ClientError::Unexpected {
                url,
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let url = format!("{}{path}", self.base);
        let resp = self.http.post(&url).json(body).send().await.map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        Self::decode(url, resp).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let url = format!("{}{path}", self.base);
        let resp = self.http.get(&url).send().await.map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        Self::decode(url, resp).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.get("/health").await
    }

    pub async fn create_session(&self, config: &RunConfig) -> Result<SessionInfo, ClientError> {
        self.post("/sessions", &CreateSession { config: config.clone() }).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionInfo, ClientError> {
        self.get(&format!("/sessions/{id}")).await
    }

    pub async fn delete_session(&self, id: &str) -> Result<(), ClientError> {
        let url = format!("{}/sessions/{id}", self.base);
        let resp = self.http.delete(&url).send().await.map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        if resp.status().is_success() {
            return Ok(());
        }
        Self::decode::<()>(url, resp).await
    }

    pub async fn solve(&self, id: &str, req: &SolveRequest) -> Result<SolveResponse, ClientError> {
        self.post(&format!("/sessions/{id}/solve"), req).await
    }

    pub async fn spectrum(&self, id: &str) -> Result<SpectrumResponse, ClientError> {
        self.post(&format!("/sessions/{id}/spectrum"), &()).await
    }

    pub async fn sweep(&self, config: &RunConfig) -> Result<SweepResponse, ClientError> {
        self.post("/sweep", &SweepRequest { config: config.clone() }).await
    }

    pub async fn oracle_check(&self, config: &RunConfig) -> Result<OracleResponse, ClientError> {
        self.post("/oracle-check", &OracleRequest { config: config.clone() }).await
    }
}

fn serde_json_from<T: DeserializeOwned>(bytes: &[u8]) -> Option<T> {
    serde_json::from_slice(bytes).ok()
}
