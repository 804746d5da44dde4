//! Request transports. The only place in the crate that talks to a judge
//! model over the network.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::wire::canonical_json;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("undecodable response body: {0}")]
    Decode(String),
    #[error("no cassette entry for request {0}")]
    CassetteMiss(String),
}

#[async_trait]
pub trait Transport: Send + Sync {
    /// Posts one chat-completion request and returns the response body.
    async fn send(&self, request: &Value) -> Result<Value, TransportError>;
}

/// Stable identity of a request body.
pub fn request_hash(request: &Value) -> String {
    hex::encode(Sha256::digest(canonical_json(request).as_bytes()))
}

pub struct ReqwestTransport {
    client: reqwest::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl ReqwestTransport {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        ReqwestTransport {
            client: reqwest::Client::new(),
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        }
    }
}

#[async_trait]
impl Transport for ReqwestTransport {
    async fn send(&self, request: &Value) -> Result<Value, TransportError> {
        let mut builder = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .await
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(TransportError::Auth(text));
        }
        if !status.is_success() {
            return Err(TransportError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| TransportError::Decode(e.to_string()))
    }
}

/// One recorded exchange; cassettes hold one record per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub request_hash: String,
    pub response_body: Value,
}

/// Replays recorded responses keyed by request hash.
#[derive(Debug, Default)]
pub struct CassetteTransport {
    records: HashMap<String, Value>,
}

#[derive(Debug, Error)]
pub enum CassetteError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Record {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl CassetteTransport {
    pub fn load(path: &Path) -> Result<Self, CassetteError> {
        let text = fs::read_to_string(path).map_err(|source| CassetteError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut records = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: CassetteRecord =
                serde_json::from_str(line).map_err(|source| CassetteError::Record {
                    path: path.to_path_buf(),
                    line: i + 1,
                    source,
                })?;
            records.entry(rec.request_hash).or_insert(rec.response_body);
        }
        Ok(CassetteTransport { records })
    }

    pub fn from_records(records: impl IntoIterator<Item = CassetteRecord>) -> Self {
        let mut map = HashMap::new();
        for r in records {
            map.entry(r.request_hash).or_insert(r.response_body);
        }
        CassetteTransport { records: map }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[async_trait]
impl Transport for CassetteTransport {
    async fn send(&self, request: &Value) -> Result<Value, TransportError> {
        let hash = request_hash(request);
        self.records
            .get(&hash)
            .cloned()
            .ok_or(TransportError::CassetteMiss(hash))
    }
}

/// Forwards to an inner transport and appends every successful exchange to
/// a cassette file.
pub struct RecordingTransport<T> {
    inner: T,
    file: Mutex<fs::File>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, path: &Path) -> std::io::Result<Self> {
        let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordingTransport {
            inner,
            file: Mutex::new(file),
        })
    }
}

#[async_trait]
impl<T: Transport> Transport for RecordingTransport<T> {
    async fn send(&self, request: &Value) -> Result<Value, TransportError> {
        let body = self.inner.send(request).await?;
        let record = CassetteRecord {
            request_hash: request_hash(request),
            response_body: body.clone(),
        };
        let line = serde_json::to_string(&record).map_err(|e| TransportError::Decode(e.to_string()))?;
        let mut file = self.file.lock().expect("cassette file lock");
        writeln!(file, "{line}").map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(body)
    }
}
