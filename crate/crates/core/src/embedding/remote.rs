//! HTTP client for the hidden-state service.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingProvider, HiddenStates, ProviderKind, Result};

#[derive(Debug, Serialize)]
struct TextRequest<'a> {
    text: &'a str,
}

#[derive(Debug, Deserialize)]
struct HiddenStatesResponse {
    k: usize,
    hidden_states: Vec<Vec<f32>>,
    mask: Vec<u8>,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    k: usize,
    vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
pub struct RemoteInfo {
    pub k: usize,
    pub backend: String,
    pub identity: String,
}

/// Counting gate for in-flight requests.
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().expect("gate lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("gate lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteProvider {
    endpoint: String,
    agent: ureq::Agent,
    info: RemoteInfo,
    gate: Gate,
}

impl RemoteProvider {
    /// Connect and read `/v1/info`.
    pub fn connect(endpoint: &str, max_in_flight: usize) -> Result<Self> {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(60))
            .build();
        let endpoint = endpoint.trim_end_matches('/').to_owned();
        let info: RemoteInfo = agent
            .get(&format!("{endpoint}/v1/info"))
            .call()
            .map_err(remote_err)?
            .into_json()
            .map_err(|e| EmbeddingError::Remote(format!("bad /v1/info body: {e}")))?;
        Ok(Self {
            endpoint,
            agent,
            info,
            gate: Gate {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                limit: max_in_flight.max(1),
            },
        })
    }

    pub fn info(&self) -> &RemoteInfo {
        &self.info
    }

    fn post<T: for<'de> Deserialize<'de>>(&self, route: &str, text: &str) -> Result<T> {
        let _guard = self.gate.enter();
        self.agent
            .post(&format!("{}{route}", self.endpoint))
            .send_json(TextRequest { text })
            .map_err(remote_err)?
            .into_json()
            .map_err(|e| EmbeddingError::Remote(format!("bad {route} body: {e}")))
    }

    /// Server-side pooled vector from `/v1/embed`.
    pub fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let r: EmbedResponse = self.post("/v1/embed", text)?;
        if r.vector.len() != r.k {
            return Err(EmbeddingError::Shape(format!(
                "embed response k={} with {} values",
                r.k,
                r.vector.len()
            )));
        }
        Ok(r.vector)
    }
}

fn remote_err(e: ureq::Error) -> EmbeddingError {
    match e {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            if code == 422 && body.contains("empty attention") {
                EmbeddingError::EmptyAttention
            } else {
                EmbeddingError::Remote(format!("HTTP {code}: {}", body.trim()))
            }
        }
        other => EmbeddingError::Remote(other.to_string()),
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Remote
    }

    fn k(&self) -> usize {
        self.info.k
    }

    fn identity(&self) -> String {
        self.info.identity.clone()
    }

    fn hidden_states(&self, text: &str) -> Result<HiddenStates> {
        let r: HiddenStatesResponse = self.post("/v1/hidden_states", text)?;
        if r.hidden_states.iter().any(|row| row.len() != r.k) {
            return Err(EmbeddingError::Shape(format!(
                "hidden_states rows do not all have k={}",
                r.k
            )));
        }
        if r.hidden_states.len() != r.mask.len() {
            return Err(EmbeddingError::Shape(format!(
                "{} rows but {} mask entries",
                r.hidden_states.len(),
                r.mask.len()
            )));
        }
        let matrix = r.hidden_states.concat();
        HiddenStates::new(r.k, matrix, r.mask)
    }
}
