//! Blocking chat-completions client with retries and an in-flight limit.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sigrl::{Error, Result};

use crate::config::EndpointConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

/// Per-call overrides of the endpoint defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChatOptions {
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub logprobs: bool,
    pub top_logprobs: Option<u32>,
    pub seed: Option<u64>,
}

/// Wire format of the request body.
#[derive(Debug, Clone, Serialize)]
pub struct ChatRequestBody<'a> {
    pub model: &'a str,
    pub messages: &'a [Message],
    pub temperature: f64,
    pub max_tokens: u32,
    pub logprobs: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_logprobs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top_logprobs: Vec<TopLogprob>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub logprobs: Option<Vec<TokenLogprob>>,
    pub attempts: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

/// Counting semaphore for the in-flight limit.
#[derive(Debug)]
struct Limiter {
    max: Option<usize>,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn acquire(&self) -> Permit<'_> {
        if let Some(max) = self.max {
            let mut used = self.used.lock();
            while *used >= max {
                self.freed.wait(&mut used);
            }
            *used += 1;
        }
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        if self.0.max.is_some() {
            *self.0.used.lock() -= 1;
            self.0.freed.notify_one();
        }
    }
}

enum Failure {
    Retry(String),
    Fatal(Error),
}

#[derive(Debug)]
pub struct ChatClient {
    config: EndpointConfig,
    http: reqwest::blocking::Client,
    limiter: Limiter,
    requests: AtomicU64,
}

impl ChatClient {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(ChatClient {
            limiter: Limiter {
                max: config.max_in_flight,
                used: Mutex::new(0),
                freed: Condvar::new(),
            },
            config,
            http,
            requests: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// HTTP requests sent so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn token(&self) -> Result<Option<String>> {
        match &self.config.auth_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| Error::Config(format!("environment variable {var} is not set"))),
        }
    }

    /// The JSON body `chat` would send.
    pub fn request_body(&self, messages: &[Message], options: &ChatOptions) -> serde_json::Value {
        let body = ChatRequestBody {
            model: &self.config.model,
            messages,
            temperature: options.temperature.unwrap_or(self.config.temperature),
            max_tokens: options.max_tokens.unwrap_or(self.config.max_tokens),
            logprobs: options.logprobs,
            top_logprobs: options.top_logprobs,
            seed: options.seed,
        };
        serde_json::to_value(body).expect("request body serializes")
    }

    /// One logical call: retries 5xx, 408, 429 and transport failures with
    /// exponential backoff and jitter; other 4xx and malformed bodies fail
    /// immediately.
    pub fn chat(&self, messages: &[Message], options: &ChatOptions) -> Result<ChatResponse> {
        if options.logprobs && !self.config.logprobs_supported {
            return Err(Error::CapabilityMissing(format!(
                "endpoint {} does not provide log-probabilities",
                self.config.url()
            )));
        }
        let body = self.request_body(messages, options);
        let token = self.token()?;
        let url = self.config.url();
        let _permit = self.limiter.acquire();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.send_once(&url, &body, token.as_deref(), options.logprobs) {
                Ok((text, logprobs)) => {
                    return Ok(ChatResponse {
                        text,
                        logprobs,
                        attempts: attempt,
                    })
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => {
                    if attempt > self.config.max_retries {
                        return Err(Error::OracleRetryable(format!(
                            "{url}: {msg} after {attempt} attempts"
                        )));
                    }
                    let delay = self.config.backoff(attempt - 1);
                    let jitter = rand::rng().random_range(0.5..=1.0);
                    tracing::debug!(%url, attempt, error = %msg, "retrying");
                    std::thread::sleep(Duration::from_secs_f64(delay.as_secs_f64() * jitter));
                }
            }
        }
    }

    fn send_once(
        &self,
        url: &str,
        body: &serde_json::Value,
        token: Option<&str>,
        want_logprobs: bool,
    ) -> std::result::Result<(String, Option<Vec<TokenLogprob>>), Failure> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = self.http.post(url).json(body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req
            .send()
            .map_err(|e| Failure::Retry(format!("transport: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Failure::Retry(format!("reading body: {e}")))?;
        if status.is_server_error() || status.as_u16() == 408 || status.as_u16() == 429 {
            return Err(Failure::Retry(format!("HTTP {status}")));
        }
        if status.is_client_error() {
            return Err(Failure::Fatal(Error::OracleFatal(format!(
                "HTTP {status}: {text}"
            ))));
        }
        let wire: WireResponse = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(Error::OracleFatal(format!("malformed response: {e}"))))?;
        let choice =
            wire.choices.into_iter().next().ok_or_else(|| {
                Failure::Fatal(Error::OracleFatal("response has no choices".into()))
            })?;
        let content = choice.message.content.unwrap_or_default();
        let logprobs = choice.logprobs.and_then(|l| l.content);
        if want_logprobs && logprobs.is_none() {
            return Err(Failure::Fatal(Error::CapabilityMissing(
                "log-probabilities requested but absent from the response".into(),
            )));
        }
        Ok((content, logprobs))
    }
}
