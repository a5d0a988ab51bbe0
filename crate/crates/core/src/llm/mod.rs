//! Chat-completion gateway with interchangeable backends.
//!
//! Every stage talks to a [`Gateway`], which enforces the context budget before
//! handing the request to a [`Backend`]: the live OpenAI-compatible client, a
//! scripted [`MockBackend`], or a [`ReplayBackend`] serving a recorded
//! [`Transcript`].

mod live;
mod mock;
mod record;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub use live::{LiveBackend, LiveConfig, API_KEY_ENV};
pub use mock::{MockBackend, MockRule, MockScript};
pub use record::{RecordingBackend, ReplayBackend, Transcript, TranscriptEntry};

/// Context window allotted to every request unless overridden.
pub const DEFAULT_MAX_CONTEXT_TOKENS: usize = 10_000;
/// Low-variance temperature used for every optimization-time call.
pub const OPTIMIZATION_TEMPERATURE: f64 = 0.3;
/// Temperature for the stochastic self-consistency runs.
pub const SAMPLING_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("request needs ~{estimated} tokens but the context budget is {budget}")]
    BudgetExceeded { estimated: usize, budget: usize },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("no scripted response for request digest {digest}")]
    NoScriptedResponse { digest: String },
    #[error("replay miss: request digest {digest} is not in the transcript")]
    ReplayMiss { digest: String },
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("transcript error: {0}")]
    Transcript(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GatewayError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_context_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presence_penalty: Option<f64>,
}

impl SamplingParams {
    pub fn with_temperature(temperature: f64) -> Self {
        Self {
            temperature,
            max_context_tokens: DEFAULT_MAX_CONTEXT_TOKENS,
            seed: None,
            top_p: None,
            frequency_penalty: None,
            presence_penalty: None,
        }
    }

    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidParams(format!(
                "temperature must be a non-negative number, got {}",
                self.temperature
            )));
        }
        if self.max_context_tokens == 0 {
            return Err(GatewayError::InvalidParams(
                "max_context_tokens must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self::with_temperature(OPTIMIZATION_TEMPERATURE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Stage1,
    Stage2,
    Proposer,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::Stage1 => "stage1",
            Purpose::Stage2 => "stage2",
            Purpose::Proposer => "proposer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub system_text: String,
    pub user_text: String,
    pub params: SamplingParams,
    pub purpose: Purpose,
}

impl PromptRequest {
    /// Stable hash of the fields that determine the sampled text's identity.
    ///
    /// The context budget and the penalty/nucleus knobs are excluded.
    pub fn digest(&self) -> String {
        let key = serde_json::json!([
            self.system_text,
            self.user_text,
            self.params.temperature,
            self.params.seed,
            self.purpose.as_str(),
        ]);
        let bytes = serde_json::to_vec(&key).expect("digest key serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub backend_id: String,
    #[serde(with = "duration_millis")]
    pub latency: Duration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

mod duration_millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// A chat-completion provider. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &PromptRequest) -> Result<Completion>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &PromptRequest) -> Result<Completion> {
        (**self).complete(request)
    }
}

pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// ceil(chars / 4); a guardrail, not a tokenizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharHeuristic;

impl TokenEstimator for CharHeuristic {
    fn estimate(&self, text: &str) -> usize {
        estimate_tokens(text)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Budget-enforcing front door shared by every stage.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    estimator: Arc<dyn TokenEstimator>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            estimator: Arc::new(CharHeuristic),
        }
    }

    pub fn with_estimator(mut self, estimator: Arc<dyn TokenEstimator>) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn estimate_request(&self, request: &PromptRequest) -> usize {
        self.estimator.estimate(&request.system_text) + self.estimator.estimate(&request.user_text)
    }

    /// Checks the budget, then forwards to the backend. Over-budget requests
    /// never reach the transport.
    pub fn complete(&self, request: &PromptRequest) -> Result<Completion> {
        request.params.validate()?;
        let estimated = self.estimate_request(request);
        if estimated > request.params.max_context_tokens {
            return Err(GatewayError::BudgetExceeded {
                estimated,
                budget: request.params.max_context_tokens,
            });
        }
        self.backend.complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(user: &str) -> PromptRequest {
        PromptRequest {
            system_text: "sys".into(),
            user_text: user.into(),
            params: SamplingParams::default(),
            purpose: Purpose::Stage1,
        }
    }

    #[test]
    fn token_estimates() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcdefgh"), 2);
        assert_eq!(estimate_tokens("abcdefghi"), 3);
        assert_eq!(estimate_tokens("éééé"), 1);
    }

    #[test]
    fn digest_ignores_budget_and_penalties() {
        let a = request("hello");
        let mut b = a.clone();
        b.params.max_context_tokens = 5;
        b.params.presence_penalty = Some(1.0);
        b.params.top_p = Some(0.5);
        assert_eq!(a.digest(), b.digest());

        let mut c = a.clone();
        c.params.seed = Some(1);
        assert_ne!(a.digest(), c.digest());
        let mut d = a.clone();
        d.purpose = Purpose::Stage2;
        assert_ne!(a.digest(), d.digest());
        let mut e = a.clone();
        e.params.temperature = 0.7;
        assert_ne!(a.digest(), e.digest());
    }

    #[test]
    fn over_budget_request_fails_before_transport() {
        let mock = MockBackend::new().with_rule(MockRule::always("never"));
        let gateway = Gateway::new(Arc::new(mock.clone()));
        let mut req = request(&"x".repeat(40_000));
        req.params.max_context_tokens = DEFAULT_MAX_CONTEXT_TOKENS;
        let err = gateway.complete(&req).unwrap_err();
        assert!(matches!(
            err,
            GatewayError::BudgetExceeded { budget: 10_000, .. }
        ));
        assert_eq!(mock.calls(), 0);
    }

    #[test]
    fn invalid_params_rejected() {
        let gateway = Gateway::new(Arc::new(MockBackend::new()));
        let mut req = request("hi");
        req.params.temperature = -0.1;
        assert!(matches!(
            gateway.complete(&req),
            Err(GatewayError::InvalidParams(_))
        ));
        req.params.temperature = 0.3;
        req.params.max_context_tokens = 0;
        assert!(matches!(
            gateway.complete(&req),
            Err(GatewayError::InvalidParams(_))
        ));
    }
}
