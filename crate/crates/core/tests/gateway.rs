use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use evigen::llm::{
    estimate_tokens, Backend, Gateway, GatewayError, LiveBackend, LiveConfig, MockBackend, MockRule, PromptRequest,
    Purpose, RecordingBackend, ReplayBackend, SamplingParams, Transcript,
};
use proptest::prelude::*;

fn request(user: &str, seed: u64) -> PromptRequest {
    PromptRequest {
        system_text: "You label sentences.".into(),
        user_text: user.into(),
        params: SamplingParams::with_temperature(0.7).seeded(seed),
        purpose: Purpose::Stage1,
    }
}

#[test]
fn mock_answers_scripted_digest() {
    let r = request("case text", 3);
    let mock = MockBackend::new().with_response(r.digest(), format!("echo {}", r.digest()));
    let gateway = Gateway::new(Arc::new(mock));
    let got = gateway.complete(&r).unwrap();
    assert_eq!(got.text, format!("echo {}", r.digest()));
    assert_eq!(got.backend_id, "mock");
    assert!(matches!(
        gateway.complete(&request("case text", 4)),
        Err(GatewayError::NoScriptedResponse { .. })
    ));
}

#[test]
fn over_budget_requests_never_reach_the_backend() {
    let mock = MockBackend::new().with_rule(MockRule::always("x"));
    let gateway = Gateway::new(Arc::new(mock.clone()));
    let huge = "a".repeat(40_100);
    match gateway.complete(&request(&huge, 0)) {
        Err(GatewayError::BudgetExceeded { estimated, budget }) => {
            assert_eq!(budget, 10_000);
            assert!(estimated > 10_000);
        }
        other => panic!("expected budget error, got {other:?}"),
    }
    assert_eq!(mock.calls(), 0);

    // Exactly at the budget is allowed.
    let mut fits = request("", 0);
    fits.system_text = "b".repeat(40_000);
    assert!(gateway.complete(&fits).is_ok());
    assert_eq!(mock.calls(), 1);
}

#[test]
fn token_estimate_examples() {
    assert_eq!(estimate_tokens(""), 0);
    assert_eq!(estimate_tokens("12345678"), 2);
    assert_eq!(estimate_tokens("123456789"), 3);
}

proptest! {
    #[test]
    fn token_estimate_is_monotone(a in ".{0,200}", b in ".{0,50}") {
        let joined = format!("{a}{b}");
        prop_assert!(estimate_tokens(&joined) >= estimate_tokens(&a));
        prop_assert_eq!(estimate_tokens(&a), a.chars().count().div_ceil(4));
    }

    #[test]
    fn digest_is_a_function_of_its_inputs(user in ".{0,40}", seed in 0u64..100) {
        prop_assert_eq!(request(&user, seed).digest(), request(&user, seed).digest());
        prop_assert_ne!(request(&user, seed).digest(), request(&user, seed + 1).digest());
    }
}

#[derive(Clone, Default)]
struct SharedSink(Arc<Mutex<Vec<u8>>>);

impl Write for SharedSink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().write(buf)
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn record_then_replay_serves_identical_text() {
    let mock = MockBackend::new().with_rule(MockRule::when(|r: &PromptRequest| {
        Some(format!("{} / {:?}", r.user_text.to_uppercase(), r.params.seed))
    }));
    let sink = SharedSink::default();
    let recorder = RecordingBackend::new(mock, Box::new(sink.clone()));
    let requests: Vec<_> = (0..6).map(|i| request(&format!("case {}", i % 3), i)).collect();
    let live: Vec<_> = requests.iter().map(|r| recorder.complete(r).unwrap().text).collect();

    let bytes = sink.0.lock().unwrap().clone();
    let transcript = Transcript::from_reader(bytes.as_slice()).unwrap();
    assert_eq!(transcript, recorder.transcript());
    assert_eq!(transcript.entries.len(), 6);

    let replay = ReplayBackend::from_reader(bytes.as_slice()).unwrap();
    let gateway = Gateway::new(Arc::new(replay));
    for (r, text) in requests.iter().zip(&live) {
        assert_eq!(&gateway.complete(r).unwrap().text, text);
    }
    match gateway.complete(&request("never recorded", 0)) {
        Err(GatewayError::ReplayMiss { digest }) => assert_eq!(digest, request("never recorded", 0).digest()),
        other => panic!("expected replay miss, got {other:?}"),
    }
}

struct Seen {
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves canned HTTP responses in order, one per connection.
fn serve(responses: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<Seen>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut auth = None;
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap_or((line, ""));
                match name.to_ascii_lowercase().as_str() {
                    "authorization" => auth = Some(value.trim().to_string()),
                    "content-length" => length = value.trim().parse().unwrap(),
                    _ => {}
                }
            }
            let mut payload = vec![0; length];
            reader.read_exact(&mut payload).unwrap();
            log.lock().unwrap().push(Seen {
                auth,
                body: serde_json::from_slice(&payload).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen, handle)
}

fn live_config(url: String) -> LiveConfig {
    LiveConfig {
        base_url: url,
        model: "test-model".into(),
        timeout_secs: 5,
        max_attempts: 3,
        initial_backoff_ms: 5,
        max_backoff_ms: 20,
        ..LiveConfig::default()
    }
}

const OK_BODY: &str =
    r#"{"choices":[{"message":{"role":"assistant","content":"1: essential"}}],"usage":{"prompt_tokens":9,"completion_tokens":3}}"#;

#[test]
fn live_backend_retries_transient_failures() {
    let (url, seen, handle) = serve(vec![(503, "{}"), (200, OK_BODY)]);
    let backend = LiveBackend::new(live_config(url), Some("sk-test".into())).unwrap();
    let got = backend.complete(&request("hello", 11)).unwrap();
    handle.join().unwrap();
    assert_eq!(got.text, "1: essential");
    assert_eq!(got.usage.unwrap().prompt_tokens, 9);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    for s in seen.iter() {
        assert_eq!(s.auth.as_deref(), Some("Bearer sk-test"));
        assert_eq!(s.body["model"], "test-model");
        assert_eq!(s.body["seed"], 11);
        assert_eq!(s.body["temperature"], 0.7);
        assert_eq!(s.body["messages"][0]["role"], "system");
        assert_eq!(s.body["messages"][1]["content"], "hello");
    }
}

#[test]
fn live_backend_gives_up_after_max_attempts() {
    let (url, seen, handle) = serve(vec![(500, "{}"), (429, "{}"), (502, "{}")]);
    let backend = LiveBackend::new(live_config(url), None).unwrap();
    match backend.complete(&request("hello", 0)) {
        Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected transport error, got {other:?}"),
    }
    handle.join().unwrap();
    assert!(seen.lock().unwrap().iter().all(|s| s.auth.is_none()));
}

#[test]
fn live_backend_does_not_retry_client_errors() {
    let (url, seen, handle) = serve(vec![(401, r#"{"error":"bad key"}"#)]);
    let backend = LiveBackend::new(live_config(url), Some("wrong".into())).unwrap();
    match backend.complete(&request("hello", 0)) {
        Err(GatewayError::Transport { attempts, message }) => {
            assert_eq!(attempts, 1);
            assert!(message.contains("401"), "{message}");
        }
        other => panic!("expected transport error, got {other:?}"),
    }
    handle.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 1);
}
