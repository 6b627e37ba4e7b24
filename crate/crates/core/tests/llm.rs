use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use proptest::prelude::*;
use redefix_core::harness::Screenshot;
use redefix_core::layout::BoundingBox;
use redefix_core::llm::{
    ChatBackend, HttpBackend, LlmClient, LlmConfig, LlmError, MockBackend, DEFAULT_MODEL,
};
use redefix_core::prompt::{Prompt, PromptSection, SectionKind};

fn prompt(tokens: usize) -> Prompt {
    Prompt {
        sections: vec![PromptSection { kind: SectionKind::Role, text: "fix it".into() }],
        followups: vec![],
        images: vec![],
        token_estimate: tokens,
    }
}

fn fenced(css: &str) -> String {
    format!("Reasoning...\n```css\n{css}\n```")
}

/// Counts every request; answers with the queued (status, headers, body)
/// triples, then with a stock completion.
struct Server {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<(String, Option<String>)>>>,
}

fn server(script: Vec<(u16, Option<&'static str>, String)>) -> Server {
    let srv = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", srv.server_addr().to_ip().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    std::thread::spawn(move || {
        let mut script = script.into_iter();
        for mut req in srv.incoming_requests() {
            h.fetch_add(1, Ordering::SeqCst);
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let auth = req
                .headers()
                .iter()
                .find(|hd| hd.field.equiv("Authorization"))
                .map(|hd| hd.value.to_string());
            b.lock().unwrap().push((body, auth));
            let (status, retry, text) = script.next().unwrap_or((
                200,
                None,
                r#"{"choices":[{"message":{"role":"assistant","content":"ok"}}]}"#.to_string(),
            ));
            let mut resp = tiny_http::Response::from_string(text).with_status_code(status);
            if let Some(r) = retry {
                resp.add_header(tiny_http::Header::from_bytes("Retry-After", r).unwrap());
            }
            let _ = req.respond(resp);
        }
    });
    Server { url, hits, bodies }
}

fn mock_client(responses: &[String], max: usize) -> LlmClient {
    let config = LlmConfig { max_context_tokens: max, completion_reserve: 0, ..LlmConfig::default() };
    LlmClient::with_backend(config, Box::new(MockBackend::new(responses.to_vec())))
}

#[test]
fn mock_replays_in_order_then_errors() {
    let c = mock_client(&["resp1".into(), "resp2".into()], 1000);
    assert_eq!(c.complete(&prompt(1)).unwrap(), "resp1");
    assert_eq!(c.complete(&prompt(1)).unwrap(), "resp2");
    assert_eq!(c.complete(&prompt(1)), Err(LlmError::MockExhausted(2)));
}

#[test]
fn mock_script_file_and_no_network() {
    let sentinel = server(vec![]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mock.json");
    let responses: Vec<String> = [".a{width:1px}", ".b{width:1px}", ".a{width:1px}", ".a{width:1px}", ".c{width:1px}"]
        .iter()
        .map(|c| fenced(c))
        .collect();
    std::fs::write(&path, serde_json::to_string(&responses).unwrap()).unwrap();
    let config = LlmConfig { endpoint: sentinel.url.clone(), mock_script: Some(path), ..LlmConfig::default() };
    let client = LlmClient::from_config(config).unwrap();
    let vote = client.majority_patch(&prompt(10), 5).unwrap();
    assert_eq!(vote.candidate.patch.rules[0].selector, ".a");
    assert_eq!((vote.votes, vote.runs, vote.unparseable), (3, 5, 0));
    assert_eq!(client.calls(), 5);
    std::thread::sleep(Duration::from_millis(50));
    assert_eq!(sentinel.hits.load(Ordering::SeqCst), 0);
}

#[test]
fn oversized_prompt_rejected_before_network() {
    let sentinel = server(vec![]);
    let config = LlmConfig { endpoint: sentinel.url.clone(), max_context_tokens: 100, completion_reserve: 10, ..LlmConfig::default() };
    let client = LlmClient::from_config(config).unwrap();
    assert_eq!(client.complete(&prompt(101)), Err(LlmError::PromptTooLarge { tokens: 101, max: 100 }));
    assert_eq!(client.calls(), 0);
    std::thread::sleep(Duration::from_millis(50));
    assert_eq!(sentinel.hits.load(Ordering::SeqCst), 0);
}

#[test]
fn tie_goes_to_first_and_unparseable_runs_skipped() {
    let c = mock_client(&[fenced(".a{width:1px}"), fenced(".b{width:1px}")], 1000);
    assert_eq!(c.majority_patch(&prompt(1), 2).unwrap().candidate.patch.rules[0].selector, ".a");
    let c = mock_client(&["no idea".into(), fenced(".b{width:1px}"), "still none".into()], 1000);
    let v = c.majority_patch(&prompt(1), 3).unwrap();
    assert_eq!((v.candidate.patch.rules[0].selector.as_str(), v.unparseable), (".b", 2));
    let c = mock_client(&["a".into(), "b".into()], 1000);
    assert_eq!(c.majority_patch(&prompt(1), 2), Err(LlmError::AllRunsUnparseable(2)));
}

#[test]
fn shuffled_declarations_share_a_key() {
    let c = mock_client(
        &[fenced(".a { width: 50%; float: none; }"), fenced(".a{float:none;width:50%}"), fenced(".b{width:1px}")],
        1000,
    );
    let v = c.majority_patch(&prompt(1), 3).unwrap();
    assert_eq!(v.votes, 2);
}

#[test]
fn http_request_shape() {
    let s = server(vec![]);
    let shot = Screenshot {
        png_bytes: vec![1, 2, 3],
        viewport_width: 320,
        region: BoundingBox { x: 0.0, y: 0.0, width: 1.0, height: 1.0 },
    };
    let mut p = prompt(10);
    p.images.push(shot);
    let mut sampling = serde_json::Map::new();
    sampling.insert("temperature".into(), serde_json::json!(0.3));
    let config = LlmConfig { endpoint: s.url.clone(), api_key: Some("k3y".into()), sampling, ..LlmConfig::default() };
    let client = LlmClient::from_config(config).unwrap();
    assert_eq!(client.complete(&p).unwrap(), "ok");
    let (body, auth) = s.bodies.lock().unwrap()[0].clone();
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["model"], DEFAULT_MODEL);
    assert_eq!(v["temperature"], 0.3);
    assert_eq!(v["messages"].as_array().unwrap().len(), 1);
    assert_eq!(v["messages"][0]["role"], "user");
    assert_eq!(v["messages"][0]["content"][0]["text"], "fix it");
    assert_eq!(v["messages"][0]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
    assert_eq!(auth.as_deref(), Some("Bearer k3y"));
}

#[test]
fn http_retries_then_succeeds() {
    let s = server(vec![(500, None, "boom".into()), (429, Some("0"), "slow down".into())]);
    let config = LlmConfig { endpoint: s.url.clone(), ..LlmConfig::default() };
    let backend = HttpBackend::new(&config).unwrap().with_retry_base(Duration::from_millis(1));
    assert_eq!(backend.send(&prompt(1)).unwrap(), "ok");
    assert_eq!(s.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn http_gives_up_after_three_retries() {
    let s = server((0..5).map(|_| (503, None, "down".to_string())).collect());
    let config = LlmConfig { endpoint: s.url.clone(), ..LlmConfig::default() };
    let backend = HttpBackend::new(&config).unwrap().with_retry_base(Duration::from_millis(1));
    assert!(matches!(backend.send(&prompt(1)), Err(LlmError::Provider { status: 503, .. })));
    assert_eq!(s.hits.load(Ordering::SeqCst), 4);
}

#[test]
fn http_context_overflow_not_retried() {
    let s = server(vec![(400, None, r#"{"error":{"code":"context_length_exceeded"}}"#.into())]);
    let config = LlmConfig { endpoint: s.url.clone(), ..LlmConfig::default() };
    let backend = HttpBackend::new(&config).unwrap();
    assert!(matches!(backend.send(&prompt(1)), Err(LlmError::ContextOverflow(_))));
    assert_eq!(s.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let config = LlmConfig { endpoint: "http://127.0.0.1:9/v1".into(), ..LlmConfig::default() };
    let backend = HttpBackend::new(&config).unwrap().with_retry_base(Duration::from_millis(1));
    assert!(matches!(backend.send(&prompt(1)), Err(LlmError::Transport(_))));
}

proptest! {
    #[test]
    fn vote_is_permutation_invariant_with_unique_mode(
        counts in proptest::collection::vec(0usize..4, 3),
        seed in any::<u64>(),
    ) {
        let mut counts = counts;
        counts[0] = counts.iter().max().unwrap() + 1; // unique mode
        let mut responses: Vec<String> = Vec::new();
        for (i, c) in counts.iter().enumerate() {
            for _ in 0..*c {
                responses.push(fenced(&format!(".p{i}{{width:{i}px}}")));
            }
        }
        let n = responses.len();
        let expected = mock_client(&responses, 10).majority_patch(&prompt(1), n).unwrap().candidate.normalized_key;
        // deterministic shuffle
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state ^= state << 13; state ^= state >> 7; state ^= state << 17;
            responses.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let got = mock_client(&responses, 10).majority_patch(&prompt(1), n).unwrap().candidate.normalized_key;
        prop_assert_eq!(got, expected);
    }
}
