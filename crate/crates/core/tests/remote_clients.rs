mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::{dead_endpoint, MockServer};
use factpref_core::lm::{LanguageModel, LmError, RemoteLm};
use factpref_core::remote::{RemoteConfig, RemoteError};
use factpref_core::scorers::providers::{
    BatchConfig, EmbeddingProvider, NliProvider, ProviderError, RemoteEmbedder, RemoteNli,
};
use serde_json::json;

fn config(url: &str) -> RemoteConfig {
    RemoteConfig::new(url).with_retries(2).with_backoff_ms(1)
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn logits_round_trip() {
    let server = MockServer::start(|req| {
        assert_eq!(req.path, "/v1/logits");
        let prefix_len = req.body["prefix"].as_array().unwrap().len() as f64;
        (200, json!({ "logits": [0.0, 1.0, prefix_len, -2.5] }).to_string())
    });
    let lm = RemoteLm::new(config(&server.url), 4, 8);
    assert_eq!(lm.logits(&[1, 2], &[3]).unwrap(), vec![0.0, 1.0, 1.0, -2.5]);
}

#[test]
fn wrong_logit_length_is_a_protocol_error() {
    let server = MockServer::start(|_| (200, json!({ "logits": [0.0, 1.0] }).to_string()));
    let lm = RemoteLm::new(config(&server.url), 4, 8);
    match lm.logits(&[1], &[]) {
        Err(LmError::Remote(RemoteError::Protocol { .. })) => {}
        other => panic!("expected protocol error, got {other:?}"),
    }
}

#[test]
fn out_of_range_tokens_never_reach_the_server() {
    let server = MockServer::start(|_| (200, json!({ "logits": [0.0, 0.0, 0.0, 0.0] }).to_string()));
    let lm = RemoteLm::new(config(&server.url), 4, 8);
    assert!(matches!(lm.logits(&[9], &[]), Err(LmError::TokenOutOfRange { .. })));
    assert_eq!(server.hits(), 0);
}

#[test]
fn unreachable_server_fails_after_retries() {
    let lm = RemoteLm::new(config(&dead_endpoint()), 4, 8);
    match lm.logits(&[1], &[]) {
        Err(LmError::Remote(RemoteError::Network { attempts, .. })) => assert_eq!(attempts, 3),
        other => panic!("expected network error, got {other:?}"),
    }
}

#[test]
fn server_errors_are_retried_then_succeed() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = calls.clone();
    let server = MockServer::start(move |_| {
        if seen.fetch_add(1, Ordering::SeqCst) < 2 {
            (503, json!({ "error": "warming up" }).to_string())
        } else {
            (200, json!({ "embeddings": [[1.0, 0.0]] }).to_string())
        }
    });
    let e = RemoteEmbedder::new(config(&server.url), BatchConfig::default());
    assert_eq!(e.embed(&strings(&["a"])).unwrap(), vec![vec![1.0, 0.0]]);
    assert_eq!(server.hits(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(|_| (400, json!({ "error": "bad body" }).to_string()));
    let e = RemoteEmbedder::new(config(&server.url), BatchConfig::default());
    match e.embed(&strings(&["a"])) {
        Err(ProviderError::Remote(RemoteError::Status { status, message, .. })) => {
            assert_eq!(status, 400);
            assert_eq!(message, "bad body");
        }
        other => panic!("expected status error, got {other:?}"),
    }
    assert_eq!(server.hits(), 1);
}

#[test]
fn embeddings_are_batched_in_order() {
    let server = MockServer::start(|req| {
        let texts = req.body["texts"].as_array().unwrap();
        assert!(texts.len() <= 2);
        let rows: Vec<_> = texts
            .iter()
            .map(|t| json!([t.as_str().unwrap().len() as f64, 1.0]))
            .collect();
        (200, json!({ "embeddings": rows }).to_string())
    });
    let batch = BatchConfig {
        batch_size: 2,
        max_in_flight: 2,
    };
    let e = RemoteEmbedder::new(config(&server.url), batch);
    let out = e.embed(&strings(&["a", "bb", "ccc", "dddd", "eeeee"])).unwrap();
    let lens: Vec<f64> = out.iter().map(|v| v[0]).collect();
    assert_eq!(lens, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    assert_eq!(server.hits(), 3);
}

#[test]
fn ragged_embeddings_are_rejected() {
    let server = MockServer::start(|_| (200, json!({ "embeddings": [[1.0, 0.0], [1.0]] }).to_string()));
    let e = RemoteEmbedder::new(config(&server.url), BatchConfig::default());
    assert!(matches!(
        e.embed(&strings(&["a", "b"])),
        Err(ProviderError::Remote(RemoteError::Protocol { .. }))
    ));
}

#[test]
fn nli_matrix_is_premises_by_hypotheses() {
    let server = MockServer::start(|req| {
        assert_eq!(req.path, "/v1/nli");
        let p = req.body["premises"].as_array().unwrap().len();
        let h = req.body["hypotheses"].as_array().unwrap().len();
        let rows: Vec<Vec<f64>> = (0..p).map(|i| (0..h).map(|j| (i * h + j) as f64 / 10.0).collect()).collect();
        (200, json!({ "scores": rows }).to_string())
    });
    let nli = RemoteNli::new(config(&server.url), BatchConfig::default());
    let out = nli.nli(&strings(&["p1", "p2"]), &strings(&["h1", "h2", "h3"])).unwrap();
    assert_eq!(out, vec![vec![0.0, 0.1, 0.2], vec![0.3, 0.4, 0.5]]);
}

#[test]
fn nli_scores_outside_unit_interval_are_rejected() {
    let server = MockServer::start(|_| (200, json!({ "scores": [[1.3]] }).to_string()));
    let nli = RemoteNli::new(config(&server.url), BatchConfig::default());
    assert!(matches!(
        nli.nli(&strings(&["p"]), &strings(&["h"])),
        Err(ProviderError::Remote(RemoteError::Protocol { .. }))
    ));
}

#[test]
fn nli_wrong_shape_is_rejected() {
    let server = MockServer::start(|_| (200, json!({ "scores": [[0.5, 0.5]] }).to_string()));
    let nli = RemoteNli::new(config(&server.url), BatchConfig::default());
    assert!(matches!(
        nli.nli(&strings(&["p"]), &strings(&["h"])),
        Err(ProviderError::Remote(RemoteError::Protocol { .. }))
    ));
}

#[test]
fn empty_requests_are_refused_locally() {
    let nli = RemoteNli::new(config(&dead_endpoint()), BatchConfig::default());
    assert!(matches!(nli.nli(&[], &strings(&["h"])), Err(ProviderError::EmptyInput)));
    let e = RemoteEmbedder::new(config(&dead_endpoint()), BatchConfig::default());
    assert!(matches!(e.embed(&[]), Err(ProviderError::EmptyInput)));
}
