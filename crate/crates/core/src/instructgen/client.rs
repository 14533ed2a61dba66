//! Chat-completion client with retry and exponential backoff.
//!
//! Wire format: `POST {endpoint}` with a bearer token and body
//! `{"model", "messages": [{"role": "user", "content": prompt}], "temperature", "max_tokens"}`.
//! The reply must carry `choices[0].message.content`; `usage.prompt_tokens`
//! and `usage.completion_tokens` are read when present.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::InstructError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Name of the environment variable holding the bearer credential.
    pub api_key_env: String,
    pub max_attempts: u32,
    pub backoff_base_s: f64,
    pub timeout_s: f64,
    /// Requests in flight per video during batch generation.
    pub concurrency: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4-turbo".into(),
            temperature: 0.7,
            max_tokens: 512,
            api_key_env: "VLNMINE_API_KEY".into(),
            max_attempts: 5,
            backoff_base_s: 1.0,
            timeout_s: 60.0,
            concurrency: 4,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.endpoint.is_empty() {
            return Err("generation.endpoint: must not be empty".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("generation.temperature: {} must be >= 0", self.temperature));
        }
        if self.max_tokens == 0 {
            return Err("generation.max_tokens: must be >= 1".into());
        }
        if self.max_attempts == 0 {
            return Err("generation.max_attempts: must be >= 1".into());
        }
        if !(self.backoff_base_s >= 0.0 && self.backoff_base_s.is_finite()) {
            return Err(format!("generation.backoff_base_s: {} must be >= 0", self.backoff_base_s));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(format!("generation.timeout_s: {} must be > 0", self.timeout_s));
        }
        if self.concurrency == 0 {
            return Err("generation.concurrency: must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Timeout,
    Connection(String),
}

pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: &str, body: &Value, timeout: Duration) -> Result<HttpResponse, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self, InstructError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| InstructError::Config(format!("http client: {e}")))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, bearer: &str, body: &Value, timeout: Duration) -> Result<HttpResponse, TransportError> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(bearer)
            .timeout(timeout)
            .json(body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Connection(e.to_string())
                }
            })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connection(e.to_string())
            }
        })?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prompt: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
    pub attempts: u32,
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct CompletionClient {
    pub config: ClientConfig,
    api_key: String,
    transport: Arc<dyn Transport>,
    sleeper: Sleeper,
}

impl CompletionClient {
    /// Reads the credential from the configured environment variable.
    pub fn from_env(config: ClientConfig, transport: Arc<dyn Transport>) -> Result<Self, InstructError> {
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()).ok_or_else(|| {
            InstructError::Config(format!("environment variable {} is not set", config.api_key_env))
        })?;
        Self::new(config, key, transport)
    }

    pub fn new(config: ClientConfig, api_key: String, transport: Arc<dyn Transport>) -> Result<Self, InstructError> {
        config.validate().map_err(InstructError::Config)?;
        if api_key.is_empty() {
            return Err(InstructError::Config("empty API credential".into()));
        }
        Ok(Self {
            config,
            api_key,
            transport,
            sleeper: Arc::new(std::thread::sleep),
        })
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn request(&self, prompt: &str) -> CompletionRequest {
        CompletionRequest {
            model: self.config.model.clone(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            prompt: prompt.to_string(),
        }
    }

    /// Delay before retry number `retry` (1 for the first retry): the base
    /// doubled per retry, plus up to 50% random jitter.
    pub fn backoff_delay(&self, retry: u32) -> Duration {
        let nominal = self.config.backoff_base_s * 2f64.powi(retry.saturating_sub(1) as i32);
        let jitter = rand::rng().random_range(0.0..0.5);
        Duration::from_secs_f64(nominal * (1.0 + jitter))
    }

    pub fn generate(&self, prompt: &str) -> Result<CompletionResult, InstructError> {
        let req = self.request(prompt);
        let body = json!({
            "model": req.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let timeout = Duration::from_secs_f64(self.config.timeout_s);
        let start = Instant::now();
        let mut last_error = String::new();
        for attempt in 1..=self.config.max_attempts {
            if attempt > 1 {
                (self.sleeper)(self.backoff_delay(attempt - 1));
            }
            match self.transport.post_json(&self.config.endpoint, &self.api_key, &body, timeout) {
                Err(TransportError::Timeout) => last_error = "timeout".into(),
                Err(TransportError::Connection(e)) => last_error = format!("connection: {e}"),
                Ok(resp) if resp.status == 429 || resp.status >= 500 => {
                    last_error = format!("HTTP {}", resp.status);
                }
                Ok(resp) if !(200..300).contains(&resp.status) => {
                    return Err(InstructError::RequestRejected {
                        status: resp.status,
                        body: truncate(&resp.body, 500),
                    });
                }
                Ok(resp) => {
                    let (text, usage) = parse_completion(&resp.body)?;
                    return Ok(CompletionResult {
                        text,
                        usage,
                        latency_ms: start.elapsed().as_millis() as u64,
                        attempts: attempt,
                    });
                }
            }
            tracing::debug!(attempt, error = %last_error, "transient completion failure");
        }
        Err(InstructError::ServiceUnavailable {
            attempts: self.config.max_attempts,
            last_error,
        })
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

fn parse_completion(body: &str) -> Result<(String, TokenUsage), InstructError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| InstructError::InvalidResponse(format!("not JSON: {e}")))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| InstructError::InvalidResponse("missing choices[0].message.content".into()))?;
    let usage = TokenUsage {
        prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        completion_tokens: v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    };
    Ok((text.to_string(), usage))
}

/// Body of a successful reply carrying `text`; used by mocks.
pub fn completion_body(text: &str) -> String {
    json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 0, "completion_tokens": 0},
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Scripted(Mutex<Vec<Result<HttpResponse, TransportError>>>);

    impl Transport for Scripted {
        fn post_json(&self, _: &str, _: &str, _: &Value, _: Duration) -> Result<HttpResponse, TransportError> {
            self.0.lock().unwrap().remove(0)
        }
    }

    fn ok(text: &str) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: 200,
            body: completion_body(text),
        })
    }

    fn status(code: u16) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: code,
            body: "{}".into(),
        })
    }

    fn client(script: Vec<Result<HttpResponse, TransportError>>) -> (CompletionClient, Arc<Mutex<Vec<Duration>>>) {
        let slept = Arc::new(Mutex::new(Vec::new()));
        let log = slept.clone();
        let c = CompletionClient::new(ClientConfig::default(), "k".into(), Arc::new(Scripted(Mutex::new(script))))
            .unwrap()
            .with_sleeper(Arc::new(move |d| log.lock().unwrap().push(d)));
        (c, slept)
    }

    #[test]
    fn first_try_success() {
        let (c, slept) = client(vec![ok("go left")]);
        let r = c.generate("p").unwrap();
        assert_eq!((r.text.as_str(), r.attempts), ("go left", 1));
        assert!(slept.lock().unwrap().is_empty());
    }

    #[test]
    fn retries_then_succeeds_with_growing_backoff() {
        let (c, slept) = client(vec![status(429), Err(TransportError::Timeout), status(503), ok("x")]);
        assert_eq!(c.generate("p").unwrap().attempts, 4);
        let d: Vec<f64> = slept.lock().unwrap().iter().map(Duration::as_secs_f64).collect();
        assert_eq!(d.len(), 3);
        for (i, secs) in d.iter().enumerate() {
            let nominal = 2f64.powi(i as i32);
            assert!(*secs >= nominal && *secs < 1.5 * nominal, "{d:?}");
        }
    }

    #[test]
    fn client_error_not_retried() {
        let (c, slept) = client(vec![status(401), ok("never")]);
        assert!(matches!(c.generate("p"), Err(InstructError::RequestRejected { status: 401, .. })));
        assert!(slept.lock().unwrap().is_empty());
    }

    #[test]
    fn exhausted_retries() {
        let (c, _) = client((0..5).map(|_| status(500)).collect());
        assert!(matches!(
            c.generate("p"),
            Err(InstructError::ServiceUnavailable { attempts: 5, .. })
        ));
    }

    #[test]
    fn missing_credential_is_config_error() {
        let config = ClientConfig {
            api_key_env: "VLNMINE_TEST_SURELY_UNSET_VARIABLE".into(),
            ..Default::default()
        };
        let t: Arc<dyn Transport> = Arc::new(Scripted(Mutex::new(vec![])));
        assert!(matches!(CompletionClient::from_env(config, t), Err(InstructError::Config(_))));
    }

    #[test]
    fn malformed_reply() {
        let (c, _) = client(vec![Ok(HttpResponse {
            status: 200,
            body: r#"{"choices": []}"#.into(),
        })]);
        assert!(matches!(c.generate("p"), Err(InstructError::InvalidResponse(_))));
    }
}
