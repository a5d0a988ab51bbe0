use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, Completion, GatewayError, PromptRequest, Purpose, Result};

type Responder = dyn Fn(&PromptRequest) -> Option<String> + Send + Sync;

/// A pure request → response rule. Rules are tried in insertion order.
#[derive(Clone)]
pub struct MockRule(Arc<Responder>);

impl fmt::Debug for MockRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MockRule(..)")
    }
}

impl MockRule {
    pub fn when<F>(f: F) -> Self
    where
        F: Fn(&PromptRequest) -> Option<String> + Send + Sync + 'static,
    {
        Self(Arc::new(f))
    }

    pub fn always(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::when(move |_| Some(text.clone()))
    }

    /// Matches when the purpose agrees (if given) and every needle occurs in
    /// the system or user text.
    pub fn matching(purpose: Option<Purpose>, needles: Vec<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self::when(move |req| {
            let purpose_ok = purpose.is_none_or(|p| p == req.purpose);
            let needles_ok = needles
                .iter()
                .all(|n| req.user_text.contains(n.as_str()) || req.system_text.contains(n.as_str()));
            (purpose_ok && needles_ok).then(|| text.clone())
        })
    }
}

#[derive(Default)]
struct MockInner {
    by_digest: HashMap<String, String>,
    rules: Vec<MockRule>,
    calls: AtomicUsize,
}

/// Deterministic scripted backend: exact digest matches first, then rules.
#[derive(Clone, Default)]
pub struct MockBackend {
    inner: Arc<MockInner>,
}

impl fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockBackend")
            .field("scripted", &self.inner.by_digest.len())
            .field("rules", &self.inner.rules.len())
            .finish()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    fn inner_mut(&mut self) -> &mut MockInner {
        Arc::get_mut(&mut self.inner).expect("mock is configured before it is shared")
    }

    pub fn with_response(mut self, digest: impl Into<String>, text: impl Into<String>) -> Self {
        self.inner_mut().by_digest.insert(digest.into(), text.into());
        self
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.inner_mut().rules.push(rule);
        self
    }

    pub fn calls(&self) -> usize {
        self.inner.calls.load(Ordering::SeqCst)
    }

    pub fn from_script(script: MockScript) -> Self {
        let mut mock = MockBackend::new();
        for (digest, text) in script.responses {
            mock = mock.with_response(digest, text);
        }
        for rule in script.rules {
            mock = mock.with_rule(MockRule::matching(rule.purpose, rule.contains, rule.response));
        }
        if let Some(default) = script.default {
            mock = mock.with_rule(MockRule::always(default));
        }
        mock
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &PromptRequest) -> Result<Completion> {
        self.inner.calls.fetch_add(1, Ordering::SeqCst);
        let digest = request.digest();
        let text = self
            .inner
            .by_digest
            .get(&digest)
            .cloned()
            .or_else(|| self.inner.rules.iter().find_map(|rule| (rule.0)(request)))
            .ok_or(GatewayError::NoScriptedResponse { digest })?;
        Ok(Completion {
            text,
            backend_id: "mock".into(),
            latency: Duration::ZERO,
            usage: None,
        })
    }
}

/// File form of a mock script.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub responses: HashMap<String, String>,
    #[serde(default)]
    pub rules: Vec<MockScriptRule>,
    #[serde(default)]
    pub default: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScriptRule {
    #[serde(default)]
    pub purpose: Option<Purpose>,
    #[serde(default)]
    pub contains: Vec<String>,
    pub response: String,
}

impl MockScript {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        serde_json::from_reader(reader).map_err(|e| GatewayError::Transcript(e.to_string()))
    }
}
