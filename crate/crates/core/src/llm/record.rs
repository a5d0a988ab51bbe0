use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, Completion, GatewayError, PromptRequest, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub digest: String,
    pub request: PromptRequest,
    pub completion: Completion,
}

/// Ordered (request, completion) log backing bit-exact replay.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| {
                GatewayError::Transcript(format!("line {}: {e}", idx + 1))
            })?;
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn write_to<W: Write>(&self, mut sink: W) -> Result<()> {
        for entry in &self.entries {
            write_entry(&mut sink, entry)?;
        }
        Ok(())
    }
}

fn write_entry<W: Write + ?Sized>(sink: &mut W, entry: &TranscriptEntry) -> Result<()> {
    let line = serde_json::to_string(entry).map_err(|e| GatewayError::Transcript(e.to_string()))?;
    sink.write_all(line.as_bytes())?;
    sink.write_all(b"\n")?;
    sink.flush()?;
    Ok(())
}

/// Wraps a backend and persists every successful exchange as it happens.
pub struct RecordingBackend<B> {
    inner: B,
    id: String,
    sink: Mutex<Box<dyn Write + Send>>,
    recorded: Mutex<Vec<TranscriptEntry>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, sink: Box<dyn Write + Send>) -> Self {
        let id = format!("record({})", inner.id());
        Self {
            inner,
            id,
            sink: Mutex::new(sink),
            recorded: Mutex::new(Vec::new()),
        }
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            entries: self.recorded.lock().expect("transcript lock").clone(),
        }
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &PromptRequest) -> Result<Completion> {
        let completion = self.inner.complete(request)?;
        let entry = TranscriptEntry {
            digest: request.digest(),
            request: request.clone(),
            completion: completion.clone(),
        };
        write_entry(&mut **self.sink.lock().expect("sink lock"), &entry)?;
        self.recorded.lock().expect("transcript lock").push(entry);
        Ok(completion)
    }
}

/// Serves recorded completions by request digest; anything else is a miss.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    by_digest: HashMap<String, Completion>,
}

impl ReplayBackend {
    pub fn new(transcript: &Transcript) -> Self {
        let mut by_digest = HashMap::new();
        // First recording wins so that replay stays a function of the digest.
        for entry in &transcript.entries {
            by_digest
                .entry(entry.digest.clone())
                .or_insert_with(|| entry.completion.clone());
        }
        Self { by_digest }
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        Ok(Self::new(&Transcript::from_reader(reader)?))
    }

    pub fn len(&self) -> usize {
        self.by_digest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_digest.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &PromptRequest) -> Result<Completion> {
        let digest = request.digest();
        self.by_digest
            .get(&digest)
            .cloned()
            .ok_or(GatewayError::ReplayMiss { digest })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::llm::{MockBackend, MockRule, Purpose, SamplingParams};

    #[derive(Clone, Default)]
    struct SharedBuf(Arc<Mutex<Vec<u8>>>);

    impl Write for SharedBuf {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().write(buf)
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    fn req(user: &str) -> PromptRequest {
        PromptRequest {
            system_text: "s".into(),
            user_text: user.into(),
            params: SamplingParams::default().seeded(3),
            purpose: Purpose::Stage1,
        }
    }

    #[test]
    fn record_then_replay_reproduces_completions() {
        let mock = MockBackend::new().with_rule(MockRule::when(|r| Some(r.user_text.to_uppercase())));
        let buf = SharedBuf::default();
        let recorder = RecordingBackend::new(mock, Box::new(buf.clone()));
        let a = recorder.complete(&req("alpha")).unwrap();
        let b = recorder.complete(&req("beta")).unwrap();

        let bytes = buf.0.lock().unwrap().clone();
        let transcript = Transcript::from_reader(bytes.as_slice()).unwrap();
        assert_eq!(transcript, recorder.transcript());
        assert_eq!(transcript.entries.len(), 2);

        let replay = ReplayBackend::new(&transcript);
        assert_eq!(replay.complete(&req("alpha")).unwrap(), a);
        assert_eq!(replay.complete(&req("beta")).unwrap(), b);
        assert!(matches!(
            replay.complete(&req("gamma")),
            Err(GatewayError::ReplayMiss { .. })
        ));
    }

    #[test]
    fn corrupt_transcript_line_is_reported() {
        let err = Transcript::from_reader("{}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, GatewayError::Transcript(m) if m.starts_with("line 1")));
    }
}
