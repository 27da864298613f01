use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use pcmi_core::lm::http::{HttpConfig, HttpScorer, ENDPOINT_ENV};
use pcmi_core::lm::replay::ReplayStore;
use pcmi_core::lm::{score_batch, score_series, Context, LmError, SamplingConfig, ScoreRequest, Scorer};
use pcmi_core::{ContextSpec, TokenizedText};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

/// Per-token values for the four fixture models; deliberately awkward floats.
fn fixture_logprobs(model: &str) -> Vec<f64> {
    match model {
        "m-full" => vec![-0.1, -std::f64::consts::E, -1e-300, -0.30000000000000004],
        "m-h" => vec![-1.5, -0.2, -7.25, -0.125],
        "m-k" => vec![-0.7, -3.3, -0.01, -12.0],
        "m-none" => vec![-4.0, -5.5, -6.0, -1.0 / 3.0],
        _ => unreachable!(),
    }
}

#[derive(Default)]
struct Stub {
    flaky_failures: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    requests: Mutex<Vec<Value>>,
}

async fn score(State(stub): State<Arc<Stub>>, Json(body): Json<Value>) -> Response {
    stub.requests.lock().unwrap().push(body.clone());
    let model = body["model"].as_str().unwrap_or_default().to_string();
    let tokens: Vec<String> = body["continuation"]
        .as_str()
        .unwrap_or_default()
        .split_whitespace()
        .map(String::from)
        .collect();
    let n = tokens.len();
    match model.as_str() {
        "m-full" | "m-h" | "m-k" | "m-none" => {
            Json(json!({"tokens": tokens, "token_logprobs": fixture_logprobs(&model)})).into_response()
        }
        "short" => Json(json!({"tokens": tokens, "token_logprobs": vec![-1.0; n - 1]})).into_response(),
        "three-tokens" => Json(json!({"tokens": ["a", "b", "c"], "token_logprobs": [-1.0, -1.0, -1.0]})).into_response(),
        "flaky" => {
            if stub.flaky_failures.fetch_add(1, Ordering::SeqCst) < 2 {
                StatusCode::SERVICE_UNAVAILABLE.into_response()
            } else {
                Json(json!({"tokens": tokens, "token_logprobs": vec![-0.5; n]})).into_response()
            }
        }
        "bad-request" => StatusCode::BAD_REQUEST.into_response(),
        "garbage" => "not json".into_response(),
        "slow" => {
            let now = stub.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            stub.peak.fetch_max(now, Ordering::SeqCst);
            tokio::time::sleep(Duration::from_millis(40)).await;
            stub.in_flight.fetch_sub(1, Ordering::SeqCst);
            Json(json!({"tokens": tokens, "token_logprobs": vec![-0.5; n]})).into_response()
        }
        _ => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn sample(State(stub): State<Arc<Stub>>, Json(body): Json<Value>) -> Response {
    stub.requests.lock().unwrap().push(body.clone());
    let n = body["n"].as_u64().unwrap() as usize;
    let samples: Vec<Value> = (0..n)
        .map(|i| json!({"tokens": ["Hi", " there", format!(" {i}")], "token_logprobs": [-0.1, -0.2, -0.3]}))
        .collect();
    Json(json!({ "samples": samples })).into_response()
}

/// Starts the stub on an ephemeral port in a background runtime.
fn start_stub() -> (String, Arc<Stub>) {
    let stub = Arc::new(Stub::default());
    let app = Router::new()
        .route("/v1/score", post(score))
        .route("/v1/sample", post(sample))
        .with_state(stub.clone());
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (format!("http://{addr}"), stub)
}

fn config(models: [&str; 4]) -> HttpConfig {
    HttpConfig {
        models: ContextSpec::ALL.iter().copied().zip(models.map(String::from)).collect(),
        initial_backoff_ms: 1,
        ..HttpConfig::default()
    }
}

fn scorer(endpoint: &str, models: [&str; 4]) -> HttpScorer {
    HttpScorer::with_endpoint_override(config(models), Some(endpoint.to_string())).unwrap()
}

fn response(words: &[&str]) -> TokenizedText {
    TokenizedText::new(words.iter().map(|w| w.to_string()).collect(), vec![0; words.len()])
}

const HISTORY: [&str; 2] = ["do you like cats", "yes"];

fn history() -> Vec<String> {
    HISTORY.map(String::from).to_vec()
}

#[test]
fn canned_fixture_gives_bit_identical_series() {
    let (url, stub) = start_stub();
    let s = scorer(&url, ["m-full", "m-h", "m-k", "m-none"]);
    let h = history();
    let g = response(&["cats", "purr", "a", "lot"]);
    let series = score_series(&s, "i", 0, Context::new(&h, "cats purr"), &g, "cats purr a lot").unwrap();
    for (spec, model) in ContextSpec::ALL.iter().zip(["m-full", "m-h", "m-k", "m-none"]) {
        let expected = fixture_logprobs(model);
        let got = series.get(*spec);
        assert_eq!(got.len(), expected.len());
        for (a, b) in got.iter().zip(&expected) {
            assert_eq!(a.to_bits(), b.to_bits(), "{spec}");
        }
    }

    let prompts: BTreeMap<String, String> = stub
        .requests
        .lock()
        .unwrap()
        .iter()
        .map(|r| (r["model"].as_str().unwrap().into(), r["prompt"].as_str().unwrap().into()))
        .collect();
    assert_eq!(prompts["m-full"], "<bos> do you like cats <sep> yes <sep> cats purr <sep>");
    assert_eq!(prompts["m-h"], "<bos> do you like cats <sep> yes <sep>");
    assert_eq!(prompts["m-k"], "<bos> cats purr <sep>");
    assert_eq!(prompts["m-none"], "<bos>");
}

#[test]
fn fewer_logprobs_than_tokens_is_an_alignment_mismatch() {
    let (url, _) = start_stub();
    let s = scorer(&url, ["short"; 4]);
    let h = history();
    let err = s.http_score(ContextSpec::Full, &Context::new(&h, "k"), "a b c d").unwrap_err();
    assert!(matches!(err, LmError::AlignmentMismatch { expected: 4, got: 3, .. }), "{err:?}");
}

#[test]
fn server_tokenization_disagreeing_with_the_response_is_rejected() {
    let (url, _) = start_stub();
    let s = scorer(&url, ["m-full", "three-tokens", "m-k", "m-none"]);
    let h = history();
    let g = response(&["cats", "purr", "a", "lot"]);
    let err = score_series(&s, "i", 0, Context::new(&h, "k"), &g, "cats purr a lot").unwrap_err();
    assert!(
        matches!(err, LmError::AlignmentMismatch { spec: ContextSpec::HistoryOnly, expected: 4, got: 3 }),
        "{err:?}"
    );
}

#[test]
fn two_model_ids_are_stored_under_their_specs() {
    let (url, stub) = start_stub();
    let s = scorer(&url, ["m-full", "m-h", "m-k", "m-none"]);
    let h = history();
    let g = response(&["cats", "purr", "a", "lot"]);
    let store = ReplayStore::in_memory();
    let series = score_series(&s, "inst", 3, Context::new(&h, "cats purr"), &g, "cats purr a lot").unwrap();
    store.insert_series("inst", 3, &g.tokens, &series).unwrap();
    let full = store.replay_score("inst", 3, ContextSpec::Full).unwrap();
    let h_only = store.replay_score("inst", 3, ContextSpec::HistoryOnly).unwrap();
    assert_eq!(full, fixture_logprobs("m-full"));
    assert_eq!(h_only, fixture_logprobs("m-h"));
    assert_ne!(full, h_only);
    let models: Vec<String> = stub
        .requests
        .lock()
        .unwrap()
        .iter()
        .map(|r| r["model"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(models.iter().filter(|m| *m == "m-full").count(), 1);
    assert_eq!(models.iter().filter(|m| *m == "m-h").count(), 1);
}

#[test]
fn server_errors_are_retried_up_to_the_limit() {
    let (url, stub) = start_stub();
    let s = scorer(&url, ["flaky"; 4]);
    let h = history();
    let (_, lp) = s.http_score(ContextSpec::Full, &Context::new(&h, "k"), "a b").unwrap();
    assert_eq!(lp, vec![-0.5, -0.5]);
    assert_eq!(stub.flaky_failures.load(Ordering::SeqCst), 3);

    let (url, stub) = start_stub();
    let strict = HttpScorer::with_endpoint_override(
        HttpConfig {
            max_retries: 1,
            ..config(["flaky"; 4])
        },
        Some(url),
    )
    .unwrap();
    let err = strict.http_score(ContextSpec::Full, &Context::new(&h, "k"), "a b").unwrap_err();
    assert!(matches!(err, LmError::Transport(_)), "{err:?}");
    assert_eq!(stub.flaky_failures.load(Ordering::SeqCst), 2);
}

#[test]
fn client_errors_and_bad_bodies_are_not_retried() {
    let (url, stub) = start_stub();
    let h = history();
    let err = scorer(&url, ["bad-request"; 4])
        .http_score(ContextSpec::Full, &Context::new(&h, "k"), "a")
        .unwrap_err();
    assert!(matches!(err, LmError::Transport(_)));
    let err = scorer(&url, ["garbage"; 4])
        .http_score(ContextSpec::Full, &Context::new(&h, "k"), "a")
        .unwrap_err();
    assert!(matches!(err, LmError::MalformedResponse(_)));
    assert_eq!(stub.requests.lock().unwrap().len(), 2);
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let s = HttpScorer::with_endpoint_override(
        HttpConfig {
            max_retries: 0,
            ..config(["m-full"; 4])
        },
        Some(format!("http://127.0.0.1:{port}")),
    )
    .unwrap();
    let h = history();
    let err = s.http_score(ContextSpec::Full, &Context::new(&h, "k"), "a").unwrap_err();
    assert!(matches!(err, LmError::Transport(_)));
}

#[test]
fn environment_variable_overrides_the_configured_endpoint() {
    let (url, _) = start_stub();
    // Only this test reads the variable.
    std::env::set_var(ENDPOINT_ENV, &url);
    let s = HttpScorer::new(HttpConfig {
        endpoint: "http://does-not-resolve.invalid".into(),
        ..config(["m-full"; 4])
    })
    .unwrap();
    std::env::remove_var(ENDPOINT_ENV);
    assert_eq!(s.endpoint(), url);
    let h = history();
    assert!(s.http_score(ContextSpec::Full, &Context::new(&h, "k"), "a b c d").is_ok());
}

#[test]
fn missing_model_id_is_a_config_error() {
    let mut c = config(["m-full"; 4]);
    c.models.remove(&ContextSpec::None);
    assert!(matches!(
        HttpScorer::with_endpoint_override(c, None),
        Err(LmError::InvalidConfig(_))
    ));
}

#[test]
fn sampling_parses_server_tokens() {
    let (url, stub) = start_stub();
    let s = scorer(&url, ["m-full", "m-h", "m-k", "m-none"]);
    let h = history();
    let config = SamplingConfig {
        num_candidates: 3,
        ..SamplingConfig::default()
    };
    let samples = s.sample(&Context::new(&h, "k"), &config, 0).unwrap();
    assert_eq!(samples.len(), 3);
    assert_eq!(samples[2].text, "Hi there 2");
    assert_eq!(samples[2].response.tokens, vec!["Hi", " there", " 2"]);
    let body = stub.requests.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "m-full");
    assert_eq!(body["n"], 3);
    assert_eq!(body["top_p"], 0.9);
    assert_eq!(body["temperature"], 0.9);
    assert_eq!(body["max_tokens"], 40);
    assert!(!s.is_deterministic());
}

#[test]
fn concurrent_requests_respect_the_in_flight_cap() {
    let (url, stub) = start_stub();
    let s = HttpScorer::with_endpoint_override(
        HttpConfig {
            max_in_flight: 3,
            ..config(["slow"; 4])
        },
        Some(url),
    )
    .unwrap();
    let h = history();
    let g = response(&["a", "b"]);
    let requests: Vec<ScoreRequest<'_>> = (0..12)
        .map(|i| ScoreRequest {
            instance_id: "i",
            candidate_id: i,
            spec: ContextSpec::Full,
            context: Context::new(&h, "k"),
            response: &g,
            response_text: "a b",
        })
        .collect();
    let results = score_batch(&s, &requests);
    assert!(results.iter().all(|r| r.as_ref().is_ok_and(|v| v.len() == 2)));
    let peak = stub.peak.load(Ordering::SeqCst);
    assert!((2..=3).contains(&peak), "peak in-flight {peak}");
}
