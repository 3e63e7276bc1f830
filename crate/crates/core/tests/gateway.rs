mod common;

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use rework_harness::eval::{parse_predictions, score};
use rework_harness::eventlog::{format_variant, Label, LabeledDataset};
use rework_harness::gateway::transcript::{final_answers, read_events, write_events};
use rework_harness::gateway::{
    oracle_mock, run_agent_loop, DelayMock, OpenAiCompatible, ProviderConfig, ProviderError,
    ProviderKind, RateGate, RunStatus, VirtualClock,
};
use rework_harness::layout::{generate_synthetic, lay_out, Distribution, LayoutSpec, SyntheticSpec};
use rework_harness::prompt::{build_bundle, plan_chunks, PromptMode};

fn gate(budget: u64) -> RateGate {
    RateGate::new(budget, Arc::new(VirtualClock::new()))
}

fn small_dataset(n_normal: usize, n_anomalous: usize, seed: u64) -> LabeledDataset {
    let (n, a) = generate_synthetic(&SyntheticSpec {
        n_normal,
        n_anomalous,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap();
    lay_out(&LayoutSpec::new(Distribution::Uniform, seed), &n, &a, "t").unwrap().0
}

fn lines(ds: &LabeledDataset) -> Vec<String> {
    ds.items().iter().map(format_variant).collect()
}

#[tokio::test]
async fn perfect_mock_closes_the_loop_on_twenty_variants() {
    let ds = small_dataset(16, 4, 3);
    let mock = oracle_mock(&ds, 0.0, 0.0, 1);
    let bundle = build_bundle(PromptMode::One, lines(&ds));
    let out = run_agent_loop(&ProviderConfig::default(), &mock, &gate(30_000), &bundle).await;
    assert_eq!(out.status, RunStatus::Completed);
    assert_eq!(out.transcript.messages.len(), 4);
    let preds = parse_predictions(out.final_text.as_deref().unwrap());
    let got: Vec<u64> = preds.entries.keys().copied().collect();
    assert_eq!(got, common::ids_with(&ds, Label::Rework));
    assert!(preds.unparsed_lines.is_empty());
}

#[tokio::test]
async fn full_miss_rate_gives_empty_predictions() {
    let (n, a) = common::full_size(2);
    let ds = lay_out(&LayoutSpec::new(Distribution::Normal, 2), &n, &a, "t").unwrap().0;
    let mock = oracle_mock(&ds, 0.0, 1.0, 9);
    let g = gate(30_000);
    let mut text = String::new();
    for chunk in plan_chunks(&ds, PromptMode::Zero, 20_000).unwrap() {
        let bundle = build_bundle(PromptMode::Zero, chunk.lines);
        let out = run_agent_loop(&ProviderConfig::default(), &mock, &g, &bundle).await;
        text.push_str(out.final_text.as_deref().unwrap());
        text.push('\n');
    }
    let preds = parse_predictions(&text);
    assert!(preds.is_empty());
    let cm = score(&ds, &preds);
    assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (0, 689, 0, 71));
}

#[tokio::test]
async fn slow_provider_hits_the_deadline_and_stops_in_time() {
    let ds = small_dataset(8, 2, 1);
    let cfg = ProviderConfig {
        request_timeout: Duration::from_millis(200),
        run_deadline: Duration::from_millis(300),
        ..ProviderConfig::default()
    };
    let mock = DelayMock {
        delay: Duration::from_millis(150),
        inner: oracle_mock(&ds, 0.0, 0.0, 1),
    };
    let started = Instant::now();
    let out = run_agent_loop(&cfg, &mock, &gate(30_000), &build_bundle(PromptMode::Zero, lines(&ds))).await;
    let took = started.elapsed();
    assert_eq!(out.status, RunStatus::DeadlineExceeded);
    assert!(out.final_text.is_none());
    // The first exchange finished, so the tool result is on record.
    assert_eq!(out.transcript.tool_invocations.len(), 1);
    assert!(took < cfg.run_deadline + cfg.request_timeout, "took {took:?}");
}

#[tokio::test]
async fn request_timeout_inside_the_deadline_is_a_provider_error() {
    let ds = small_dataset(8, 2, 1);
    let cfg = ProviderConfig {
        request_timeout: Duration::from_millis(50),
        run_deadline: Duration::from_secs(5),
        ..ProviderConfig::default()
    };
    let mock = DelayMock {
        delay: Duration::from_millis(500),
        inner: oracle_mock(&ds, 0.0, 0.0, 1),
    };
    let out = run_agent_loop(&cfg, &mock, &gate(30_000), &build_bundle(PromptMode::Zero, lines(&ds))).await;
    assert_eq!(out.status, RunStatus::ProviderError);
    assert!(matches!(out.error, Some(ProviderError::RequestTimeout(_))));
}

#[tokio::test]
async fn shared_gate_keeps_every_window_within_budget() {
    let (n, a) = common::full_size(4);
    let ds = lay_out(&LayoutSpec::new(Distribution::Exponential, 4), &n, &a, "t").unwrap().0;
    let mock = oracle_mock(&ds, 0.02, 0.15, 4);
    let budget = 12_000;
    let g = gate(budget);
    let mut sends = Vec::new();
    for chunk in plan_chunks(&ds, PromptMode::Few, budget / 2).unwrap() {
        let bundle = build_bundle(PromptMode::Few, chunk.lines);
        let out = run_agent_loop(&ProviderConfig::default(), &mock, &g, &bundle).await;
        assert_eq!(out.status, RunStatus::Completed);
        sends.extend(out.transcript.requests.iter().map(|r| (r.at_us, r.token_estimate)));
    }
    assert!(sends.len() >= 6);
    for &(end, _) in &sends {
        let in_window: u64 = sends
            .iter()
            .filter(|&&(at, _)| at <= end && at + 60_000_000 > end)
            .map(|&(_, t)| t)
            .sum();
        assert!(in_window <= budget, "window ending {end} us holds {in_window}");
    }
}

#[tokio::test]
async fn transcript_replay_reproduces_predictions() {
    let ds = small_dataset(40, 6, 8);
    let mock = oracle_mock(&ds, 0.1, 0.2, 8);
    let g = gate(30_000);
    let mut events = Vec::new();
    let mut answers = Vec::new();
    for (i, chunk) in plan_chunks(&ds, PromptMode::One, 800).unwrap().into_iter().enumerate() {
        let out = run_agent_loop(&ProviderConfig::default(), &mock, &g, &build_bundle(PromptMode::One, chunk.lines)).await;
        events.extend(out.transcript.events(i));
        answers.push(out.final_text.unwrap());
    }
    assert!(answers.len() > 1);
    let mut buf = Vec::new();
    write_events(&events, &mut buf).unwrap();
    let replayed = final_answers(&read_events(buf.as_slice()).unwrap());
    assert_eq!(
        parse_predictions(&replayed.join("\n")),
        parse_predictions(&answers.join("\n"))
    );
}

// A minimal chat-completions endpoint: first asks for the tool, then
// answers with the last variant of the tool result.
#[derive(Default)]
struct Seen {
    auth: Vec<String>,
    bodies: Vec<Value>,
}

async fn fake_completions(
    State(seen): State<Arc<Mutex<Seen>>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let auth = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let mut s = seen.lock().unwrap();
    s.auth.push(auth.clone());
    s.bodies.push(body.clone());
    if auth != "Bearer sk-test-123" {
        return (
            StatusCode::UNAUTHORIZED,
            Json(json!({ "error": { "message": "bad key" } })),
        );
    }
    let messages = body["messages"].as_array().cloned().unwrap_or_default();
    let tool_result = messages.iter().find(|m| m["role"] == "tool");
    let reply = match tool_result {
        None => json!({ "role": "assistant", "content": null, "tool_calls": [{
            "id": "call_abc", "type": "function",
            "function": { "name": body["tools"][0]["function"]["name"], "arguments": "{}" }
        }]}),
        Some(t) => {
            let last = t["content"].as_str().unwrap().lines().last().unwrap().to_string();
            json!({ "role": "assistant", "content": last })
        }
    };
    (StatusCode::OK, Json(json!({ "choices": [{ "index": 0, "message": reply }] })))
}

async fn serve() -> (String, Arc<Mutex<Seen>>) {
    let seen = Arc::new(Mutex::new(Seen::default()));
    let app = Router::new()
        .route("/v1/chat/completions", post(fake_completions))
        .with_state(seen.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    (format!("http://{addr}/v1/chat/completions"), seen)
}

#[tokio::test]
async fn remote_provider_speaks_the_wire_format() {
    let (url, seen) = serve().await;
    let provider = OpenAiCompatible::new(&url, "sk-test-123".into()).unwrap();
    let bundle = build_bundle(PromptMode::Few, vec!["1# A -> B".into(), "2# C -> C".into()]);
    let cfg = ProviderConfig {
        kind: ProviderKind::OpenaiCompatible,
        endpoint: url,
        ..ProviderConfig::default()
    };
    let out = run_agent_loop(&cfg, &provider, &gate(30_000), &bundle).await;
    assert_eq!(out.status, RunStatus::Completed, "{:?}", out.error);
    assert_eq!(out.final_text.as_deref(), Some("2# C -> C"));

    let s = seen.lock().unwrap();
    assert_eq!(s.bodies.len(), 2);
    let first = &s.bodies[0];
    assert_eq!(first["model"], cfg.model);
    assert_eq!(first["messages"][0]["role"], "system");
    assert_eq!(first["messages"][1]["role"], "user");
    assert_eq!(first["tools"][0]["function"]["name"], "get_event_variants");
    let second = &s.bodies[1];
    assert_eq!(second["messages"][2]["tool_calls"][0]["id"], "call_abc");
    assert_eq!(second["messages"][3]["tool_call_id"], "call_abc");
    assert_eq!(second["messages"][3]["content"], "1# A -> B\n2# C -> C");

    let logged = serde_json::to_string(&out.transcript).unwrap();
    assert!(logged.contains("\"exchange\""));
    assert!(!logged.contains("sk-test-123"));
}

#[tokio::test]
async fn wrong_key_is_an_auth_error_with_transcript() {
    let (url, _) = serve().await;
    let provider = OpenAiCompatible::new(&url, "sk-wrong".into()).unwrap();
    let bundle = build_bundle(PromptMode::Zero, vec!["1# A".into()]);
    let out = run_agent_loop(&ProviderConfig::default(), &provider, &gate(30_000), &bundle).await;
    assert_eq!(out.status, RunStatus::ProviderError);
    assert!(matches!(out.error, Some(ProviderError::Auth(_))));
    assert_eq!(out.transcript.requests.len(), 1);
}

#[tokio::test]
async fn unreachable_endpoint_is_a_transport_error() {
    let provider = OpenAiCompatible::new("http://127.0.0.1:9/v1/chat/completions", "k".into()).unwrap();
    let bundle = build_bundle(PromptMode::Zero, vec!["1# A".into()]);
    let out = run_agent_loop(&ProviderConfig::default(), &provider, &gate(30_000), &bundle).await;
    assert!(matches!(out.error, Some(ProviderError::Transport(_))));
}

#[test]
fn key_comes_from_the_named_variable() {
    let mut cfg = ProviderConfig {
        api_key_env: "REWORK_HARNESS_TEST_KEY_UNSET".into(),
        ..ProviderConfig::default()
    };
    assert!(matches!(OpenAiCompatible::from_config(&cfg), Err(ProviderError::Config(_))));
    std::env::set_var("REWORK_HARNESS_TEST_KEY_SET", "sk-env");
    cfg.api_key_env = "REWORK_HARNESS_TEST_KEY_SET".into();
    let p = OpenAiCompatible::from_config(&cfg).unwrap();
    assert!(!format!("{p:?}").contains("sk-env"));
}

#[test]
fn config_invariants() {
    let ok = ProviderConfig::default();
    assert!(ok.validate().is_ok());
    let zero = ProviderConfig { tpm_budget: 0, ..ok.clone() };
    assert!(zero.validate().is_err());
    let short = ProviderConfig {
        run_deadline: Duration::from_secs(1),
        request_timeout: Duration::from_secs(2),
        ..ok
    };
    assert!(short.validate().is_err());
}
