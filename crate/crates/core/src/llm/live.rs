//! OpenAI-compatible chat-completions client.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, Completion, GatewayError, PromptRequest, Result, Usage};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "EVIGEN_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<u32>,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4.1".into(),
            timeout_secs: 120,
            max_attempts: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 16_000,
            max_in_flight: 8,
            requests_per_minute: None,
        }
    }
}

struct Limiter {
    in_flight: Mutex<usize>,
    released: Condvar,
    max_in_flight: usize,
    window: Mutex<VecDeque<Instant>>,
    per_minute: Option<u32>,
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("limiter lock");
        *n -= 1;
        self.0.released.notify_one();
    }
}

impl Limiter {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter lock");
        while *n >= self.max_in_flight {
            n = self.released.wait(n).expect("limiter lock");
        }
        *n += 1;
        drop(n);
        self.wait_for_rate_slot();
        Permit(self)
    }

    fn wait_for_rate_slot(&self) {
        let Some(limit) = self.per_minute else {
            return;
        };
        let minute = Duration::from_secs(60);
        loop {
            let mut window = self.window.lock().expect("rate lock");
            let now = Instant::now();
            while window.front().is_some_and(|t| now.duration_since(*t) >= minute) {
                window.pop_front();
            }
            if window.len() < limit as usize {
                window.push_back(now);
                return;
            }
            let wait = minute - now.duration_since(*window.front().expect("non-empty window"));
            drop(window);
            thread::sleep(wait);
        }
    }
}

pub struct LiveBackend {
    client: reqwest::blocking::Client,
    config: LiveConfig,
    api_key: Option<String>,
    limiter: Limiter,
    id: String,
}

impl std::fmt::Debug for LiveBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveBackend")
            .field("base_url", &self.config.base_url)
            .field("model", &self.config.model)
            .field("has_api_key", &self.api_key.is_some())
            .finish()
    }
}

enum AttemptError {
    Transient(String),
    Fatal(String),
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl LiveBackend {
    /// Builds a client reading the key from [`API_KEY_ENV`].
    pub fn from_env(config: LiveConfig) -> Result<Self> {
        Self::new(config, std::env::var(API_KEY_ENV).ok())
    }

    pub fn new(config: LiveConfig, api_key: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Transport {
                attempts: 0,
                message: format!("failed to build HTTP client: {e}"),
            })?;
        let limiter = Limiter {
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            max_in_flight: config.max_in_flight.max(1),
            window: Mutex::new(VecDeque::new()),
            per_minute: config.requests_per_minute.filter(|n| *n > 0),
        };
        Ok(Self {
            client,
            id: format!("live:{}", config.model),
            config,
            api_key,
            limiter,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, request: &PromptRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if !request.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_text}));
        }
        messages.push(json!({"role": "user", "content": request.user_text}));
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.params.temperature,
        });
        let obj = body.as_object_mut().expect("object literal");
        // Absent knobs are left to the provider's defaults.
        if let Some(seed) = request.params.seed {
            obj.insert("seed".into(), json!(seed));
        }
        if let Some(v) = request.params.top_p {
            obj.insert("top_p".into(), json!(v));
        }
        if let Some(v) = request.params.frequency_penalty {
            obj.insert("frequency_penalty".into(), json!(v));
        }
        if let Some(v) = request.params.presence_penalty {
            obj.insert("presence_penalty".into(), json!(v));
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<(String, Option<Usage>), AttemptError> {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                AttemptError::Transient(e.to_string())
            } else {
                AttemptError::Fatal(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| AttemptError::Transient(format!("reading body: {e}")))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Transient(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Fatal(format!("unexpected response body: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| AttemptError::Fatal("response has no message content".into()))?;
        let usage = parsed.usage.map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        });
        Ok((content, usage))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self
            .config
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.config.max_backoff_ms);
        let jitter = base / 4;
        let offset = if jitter > 0 {
            rand::random::<u64>() % (2 * jitter + 1)
        } else {
            0
        };
        Duration::from_millis(base - jitter + offset)
    }
}

impl Backend for LiveBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &PromptRequest) -> Result<Completion> {
        let body = self.body(request);
        let max_attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..max_attempts {
            let started = Instant::now();
            let outcome = {
                let _permit = self.limiter.acquire();
                self.attempt(&body)
            };
            match outcome {
                Ok((text, usage)) => {
                    return Ok(Completion {
                        text,
                        backend_id: self.id.clone(),
                        latency: started.elapsed(),
                        usage,
                    })
                }
                Err(AttemptError::Fatal(message)) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt + 1,
                        message,
                    })
                }
                Err(AttemptError::Transient(message)) => {
                    tracing::warn!(attempt = attempt + 1, max_attempts, %message, "transient LLM failure");
                    last = message;
                    if attempt + 1 < max_attempts {
                        thread::sleep(self.backoff(attempt));
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: max_attempts,
            message: last,
        })
    }
}
