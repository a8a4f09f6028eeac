//! Remote embedder and generator against an in-process HTTP server that
//! speaks the model-server contract.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use heterag::embed::{hash_embed, Embedder, EmbedderSpec, Level, RemoteEmbedder};
use heterag::rag::{Generator, RemoteGenerator};
use heterag::{Error, JsonClient};
use serde_json::{json, Value};

struct Recorded {
    path: String,
    body: Value,
}

/// Serves one canned reply per connection, computed from the request body.
fn serve<F>(connections: usize, reply: F) -> (String, JoinHandle<Vec<Recorded>>)
where
    F: Fn(&str, &Value) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for _ in 0..connections {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut content_length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        content_length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; content_length];
            reader.read_exact(&mut body).unwrap();
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let (status, text) = reply(&path, &body);
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            )
            .unwrap();
            seen.push(Recorded { path, body });
        }
        seen
    });
    (url, handle)
}

fn quick_client() -> JsonClient {
    JsonClient::new(Duration::from_secs(10), 0)
}

fn remote(url: &str, dim: usize) -> RemoteEmbedder {
    let spec = EmbedderSpec { endpoint: Some(url.to_string()), ..EmbedderSpec::hash(dim) };
    RemoteEmbedder::from_spec(&spec).unwrap().with_client(quick_client())
}

#[test]
fn embed_round_trip_on_100_texts() {
    let (url, server) = serve(1, |_, body| {
        let vectors: Vec<Vec<f64>> = body["texts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| hash_embed(t.as_str().unwrap(), 16).into_values())
            .collect();
        (200, json!({"dimension": 16, "vectors": vectors}).to_string())
    });
    let texts: Vec<String> = (0..100).map(|i| format!("text number {i}")).collect();
    let got = remote(&url, 16).embed(Level::Context, &texts).unwrap();
    assert_eq!(got.len(), 100);
    for (v, t) in got.iter().zip(&texts) {
        assert_eq!(v.dim(), 16);
        assert!((v.norm() - 1.0).abs() < 1e-9);
        let want = hash_embed(t, 16);
        assert!(v.values().iter().zip(want.values()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
    let seen = server.join().unwrap();
    assert_eq!(seen[0].path, "/embed");
    let keys: Vec<&String> = seen[0].body.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["level", "texts"]);
    assert_eq!(seen[0].body["level"], "context");
    assert_eq!(seen[0].body["texts"].as_array().unwrap().len(), 100);
}

#[test]
fn instruction_prefix_is_sent() {
    let (url, server) = serve(1, |_, _| (200, json!({"dimension": 2, "vectors": [[0.6, 0.8]]}).to_string()));
    let mut spec = EmbedderSpec { endpoint: Some(format!("{url}/")), ..EmbedderSpec::hash(2) };
    spec.instruction_prefixes.insert(Level::Query, "query:".into());
    let e = RemoteEmbedder::from_spec(&spec).unwrap().with_client(quick_client());
    e.embed(Level::Query, &["where".to_string()]).unwrap();
    assert_eq!(server.join().unwrap()[0].body["texts"][0], "query: where");
}

#[test]
fn dimension_mismatch_is_a_contract_error() {
    let (url, server) = serve(1, |_, _| (200, json!({"dimension": 3, "vectors": [[1.0, 0.0, 0.0]]}).to_string()));
    let err = remote(&url, 2).embed(Level::Chunk, &["x".to_string()]).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
    server.join().unwrap();
}

#[test]
fn non_unit_vectors_are_rejected() {
    let (url, server) = serve(1, |_, _| (200, json!({"dimension": 2, "vectors": [[3.0, 4.0]]}).to_string()));
    assert!(remote(&url, 2).embed(Level::Chunk, &["x".to_string()]).is_err());
    server.join().unwrap();
}

#[test]
fn non_200_is_a_transport_error() {
    let (url, server) = serve(1, |_, _| (404, "{}".to_string()));
    let err = remote(&url, 2).embed(Level::Chunk, &["x".to_string()]).unwrap_err();
    assert!(matches!(err, Error::Transport { retries: 0, .. }), "{err}");
    server.join().unwrap();
}

#[test]
fn server_errors_are_retried() {
    let (flaky, server) = {
        let calls = std::sync::atomic::AtomicUsize::new(0);
        serve(2, move |_, _| {
            if calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) == 0 {
                (503, "{}".to_string())
            } else {
                (200, json!({"text": "second try"}).to_string())
            }
        })
    };
    let g = RemoteGenerator::new(&flaky, 8, 0.0).with_client(JsonClient::new(Duration::from_secs(10), 2));
    assert_eq!(g.generate("p").unwrap(), "second try");
    assert_eq!(server.join().unwrap().len(), 2);
}

#[test]
fn generate_round_trip() {
    let (url, server) = serve(1, |_, body| {
        let prompt = body["prompt"].as_str().unwrap().to_uppercase();
        (200, json!({"text": prompt}).to_string())
    });
    let g = RemoteGenerator::new(&url, 24, 0.0).with_client(quick_client());
    assert_eq!(g.generate("hello").unwrap(), "HELLO");
    let seen = server.join().unwrap();
    assert_eq!(seen[0].path, "/generate");
    assert_eq!(seen[0].body, json!({"prompt": "hello", "max_new_tokens": 24, "temperature": 0.0}));
}
