use std::time::Duration;

use serde::{Deserialize, Serialize};
use sigrl::{Error, Result};

/// One chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub path: String,
    pub model: String,
    /// Environment variable holding the bearer token; no auth header when unset.
    pub auth_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub max_tokens: u32,
    pub temperature: f64,
    pub logprobs_supported: bool,
    /// Alternatives requested per position when scoring answer letters.
    pub top_logprobs: u32,
    /// Concurrent requests allowed; `None` is unbounded.
    pub max_in_flight: Option<usize>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000".into(),
            path: "/v1/chat/completions".into(),
            model: "default".into(),
            auth_env: None,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_base_ms: 500,
            backoff_max_ms: 10_000,
            max_tokens: 1024,
            temperature: 0.0,
            logprobs_supported: false,
            top_logprobs: 20,
            max_in_flight: Some(8),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config(format!(
                "timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        if self.max_in_flight == Some(0) {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        if self.base_url.is_empty() {
            return Err(Error::Config("base_url is empty".into()));
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        format!(
            "{}/{}",
            self.base_url.trim_end_matches('/'),
            self.path.trim_start_matches('/')
        )
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Delay before retry number `attempt` (0-based), before jitter.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.backoff_max_ms);
        Duration::from_millis(ms)
    }
}

/// Endpoints per oracle role. Roles left unset use the policy endpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Endpoints {
    pub policy: EndpointConfig,
    pub understanding: Option<EndpointConfig>,
    pub patient: Option<EndpointConfig>,
    pub checker: Option<EndpointConfig>,
    pub scorer: Option<EndpointConfig>,
}

impl Endpoints {
    pub fn understanding(&self) -> &EndpointConfig {
        self.understanding.as_ref().unwrap_or(&self.policy)
    }

    pub fn patient(&self) -> &EndpointConfig {
        self.patient.as_ref().unwrap_or(&self.policy)
    }

    pub fn checker(&self) -> &EndpointConfig {
        self.checker.as_ref().unwrap_or(&self.policy)
    }

    pub fn scorer(&self) -> &EndpointConfig {
        self.scorer.as_ref().unwrap_or(&self.policy)
    }

    pub fn validate(&self) -> Result<()> {
        for e in [
            &self.policy,
            self.understanding(),
            self.patient(),
            self.checker(),
            self.scorer(),
        ] {
            e.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_joins_cleanly() {
        let c = EndpointConfig {
            base_url: "http://h:1/".into(),
            path: "/v1/x".into(),
            ..Default::default()
        };
        assert_eq!(c.url(), "http://h:1/v1/x");
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let c = EndpointConfig {
            backoff_base_ms: 100,
            backoff_max_ms: 350,
            ..Default::default()
        };
        let ms: Vec<u128> = (0..4).map(|a| c.backoff(a).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 350, 350]);
    }

    #[test]
    fn rejects_bad_timeouts() {
        assert!(EndpointConfig {
            timeout_secs: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn roles_fall_back_to_policy() {
        let e = Endpoints {
            patient: Some(EndpointConfig {
                model: "big".into(),
                ..Default::default()
            }),
            ..Default::default()
        };
        assert_eq!(e.patient().model, "big");
        assert_eq!(e.checker().model, "default");
    }
}
