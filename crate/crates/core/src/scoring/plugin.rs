//! External semantic scorers (BERTScore, AlignScore, MEDCON).
//!
//! The protocol is one JSON object per line: request
//! `{"metric": str, "candidate": str, "reference": str}`, reply
//! `{"score": real in [0, 1]}`. A scorer is either a subprocess speaking the
//! protocol over stdin/stdout or an HTTP endpoint receiving the request as a
//! POST body.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{RelevanceMetric, Result, ScoringError};

pub trait SemanticScorer: Send + Sync {
    fn score(&self, metric: RelevanceMetric, candidate: &str, reference: &str) -> Result<f64>;
}

#[derive(Serialize)]
struct PluginRequest<'a> {
    metric: &'a str,
    candidate: &'a str,
    reference: &'a str,
}

#[derive(Deserialize)]
struct PluginReply {
    score: f64,
}

/// Validates one reply line.
pub fn parse_reply(line: &str) -> Result<f64> {
    let reply: PluginReply = serde_json::from_str(line.trim())
        .map_err(|e| ScoringError::PluginProtocol(format!("bad reply {line:?}: {e}")))?;
    if !reply.score.is_finite() || !(0.0..=1.0).contains(&reply.score) {
        return Err(ScoringError::PluginProtocol(format!(
            "score {} is outside [0, 1]",
            reply.score
        )));
    }
    Ok(reply.score)
}

fn encode_request(metric: RelevanceMetric, candidate: &str, reference: &str) -> String {
    serde_json::to_string(&PluginRequest {
        metric: metric.name(),
        candidate,
        reference,
    })
    .expect("request serializes")
}

/// Adapts a closure into a scorer; handy for tests and in-process models.
pub struct FnScorer<F>(pub F);

impl<F> SemanticScorer for FnScorer<F>
where
    F: Fn(RelevanceMetric, &str, &str) -> Result<f64> + Send + Sync,
{
    fn score(&self, metric: RelevanceMetric, candidate: &str, reference: &str) -> Result<f64> {
        (self.0)(metric, candidate, reference)
    }
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Long-lived subprocess speaking the line protocol; calls are serialized.
pub struct SubprocessScorer {
    io: Mutex<ChildIo>,
}

impl SubprocessScorer {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| ScoringError::PluginProtocol(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            io: Mutex::new(ChildIo { child, stdin, stdout }),
        })
    }
}

impl SemanticScorer for SubprocessScorer {
    fn score(&self, metric: RelevanceMetric, candidate: &str, reference: &str) -> Result<f64> {
        let mut io = self.io.lock().expect("plugin lock");
        let line = encode_request(metric, candidate, reference);
        let io_err = |e: std::io::Error| ScoringError::PluginProtocol(format!("plugin I/O: {e}"));
        writeln!(io.stdin, "{line}").map_err(io_err)?;
        io.stdin.flush().map_err(io_err)?;
        let mut reply = String::new();
        let read = io.stdout.read_line(&mut reply).map_err(io_err)?;
        if read == 0 {
            return Err(ScoringError::PluginProtocol("plugin closed its output".into()));
        }
        parse_reply(&reply)
    }
}

impl Drop for SubprocessScorer {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

pub struct HttpScorer {
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ScoringError::PluginProtocol(e.to_string()))?;
        Ok(Self {
            client,
            url: url.into(),
        })
    }
}

impl SemanticScorer for HttpScorer {
    fn score(&self, metric: RelevanceMetric, candidate: &str, reference: &str) -> Result<f64> {
        let body = encode_request(metric, candidate, reference);
        let resp = self
            .client
            .post(&self.url)
            .header("content-type", "application/json")
            .body(body)
            .send()
            .map_err(|e| ScoringError::PluginProtocol(format!("plugin HTTP: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| ScoringError::PluginProtocol(format!("plugin HTTP body: {e}")))?;
        if !status.is_success() {
            return Err(ScoringError::PluginProtocol(format!("plugin HTTP {status}: {text}")));
        }
        parse_reply(&text)
    }
}
