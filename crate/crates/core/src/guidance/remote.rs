use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{wire, Capabilities, GuidanceError, GuidanceProvider, GuidanceRequest, GuidanceResponse, PROTOCOL};

const HEALTH_LIMIT: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8765`.
    pub endpoint: String,
    /// Bound on one HTTP exchange, seconds.
    pub timeout_secs: f64,
    /// Extra attempts after a transport failure.
    pub retries: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8765".into(),
            timeout_secs: 60.0,
            retries: 2,
        }
    }
}

/// `gdp/1` client. Only transport failures (refused connections, timeouts,
/// I/O errors, 5xx statuses) are retried; every exchange is bounded by the
/// timeout, so one call blocks at most `timeout × (retries + 1)`.
#[derive(Debug)]
pub struct RemoteProvider {
    agent: ureq::Agent,
    base: String,
    config: RemoteConfig,
    capabilities: Capabilities,
}

enum Failure {
    Transient(String),
    Fatal(GuidanceError),
}

fn classify(e: ureq::Error) -> Failure {
    use ureq::Error as E;
    match e {
        E::Timeout(_) | E::Io(_) | E::ConnectionFailed | E::HostNotFound | E::BodyStalled => {
            Failure::Transient(e.to_string())
        }
        E::BodyExceedsLimit(n) => {
            Failure::Fatal(GuidanceError::Protocol(format!("response body exceeds {n} bytes")))
        }
        E::Protocol(_) | E::LargeResponseHeader(..) => {
            Failure::Fatal(GuidanceError::Protocol(format!("malformed HTTP response: {e}")))
        }
        other => Failure::Fatal(GuidanceError::Unavailable {
            message: other.to_string(),
            attempts: 1,
        }),
    }
}

impl RemoteProvider {
    /// Connects and checks `/v1/health`, including the protocol version.
    pub fn connect(config: RemoteConfig) -> Result<Self, GuidanceError> {
        if !(config.timeout_secs > 0.0) || !config.timeout_secs.is_finite() {
            return Err(GuidanceError::InvalidRequest(format!(
                "timeout must be positive, got {}",
                config.timeout_secs
            )));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let base = config.endpoint.trim_end_matches('/').to_string();
        let mut provider = Self {
            agent,
            base,
            config,
            capabilities: Capabilities {
                protocol: String::new(),
                space: vec![],
                resolution: vec![],
                preview: false,
            },
        };
        provider.capabilities = provider.health()?;
        Ok(provider)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Fetches the health document.
    pub fn health(&self) -> Result<Capabilities, GuidanceError> {
        let url = format!("{}/v1/health", self.base);
        let body = self.with_retries(|| {
            let mut resp = self.agent.get(&url).call().map_err(classify)?;
            let status = resp.status().as_u16();
            let body = resp
                .body_mut()
                .with_config()
                .limit(HEALTH_LIMIT)
                .read_to_vec()
                .map_err(classify)?;
            check_status(status, &body)?;
            Ok(body)
        })?;
        let caps: Capabilities = serde_json::from_slice(&body)
            .map_err(|e| GuidanceError::Protocol(format!("malformed health document: {e}")))?;
        if caps.protocol != PROTOCOL {
            return Err(GuidanceError::VersionMismatch {
                expected: PROTOCOL.into(),
                found: caps.protocol,
            });
        }
        Ok(caps)
    }

    fn with_retries<T>(&self, mut attempt: impl FnMut() -> Result<T, Failure>) -> Result<T, GuidanceError> {
        let total = self.config.retries + 1;
        let mut last = String::new();
        for k in 1..=total {
            match attempt() {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    log::warn!("guidance attempt {k}/{total} failed: {msg}");
                    last = msg;
                }
            }
        }
        Err(GuidanceError::Unavailable {
            message: format!("{}: {last}", self.base),
            attempts: total,
        })
    }
}

fn check_status(status: u16, body: &[u8]) -> Result<(), Failure> {
    let text = || String::from_utf8_lossy(&body[..body.len().min(512)]).into_owned();
    match status {
        200 => Ok(()),
        422 => Err(Failure::Fatal(GuidanceError::InvalidRequest(format!(
            "server rejected the request: {}",
            text()
        )))),
        500..=599 => Err(Failure::Transient(format!("server error {status}: {}", text()))),
        _ => Err(Failure::Fatal(GuidanceError::Protocol(format!(
            "unexpected HTTP status {status}: {}",
            text()
        )))),
    }
}

impl GuidanceProvider for RemoteProvider {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        request.validate()?;
        let (w, h) = (request.image.width, request.image.height);
        if !self.capabilities.accepts(request.space, w, h) {
            return Err(GuidanceError::InvalidRequest(format!(
                "server does not accept {:?} at {w}x{h}; advertises spaces {:?}, resolutions {:?}",
                request.space, self.capabilities.space, self.capabilities.resolution
            )));
        }
        let body = wire::encode_request(request);
        let url = format!("{}/v1/guide", self.base);
        let limit = (12 + wire::MAX_HEADER_LEN + 2 * 4 * request.image.data.len()) as u64;
        let bytes = self.with_retries(|| {
            let mut resp = self
                .agent
                .post(&url)
                .header("Content-Type", "application/octet-stream")
                .send(&body[..])
                .map_err(classify)?;
            let status = resp.status().as_u16();
            let bytes = resp
                .body_mut()
                .with_config()
                .limit(limit)
                .read_to_vec()
                .map_err(classify)?;
            check_status(status, &bytes)?;
            Ok(bytes)
        })?;
        wire::decode_response(&bytes, (w, h))
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities.clone()
    }
}
