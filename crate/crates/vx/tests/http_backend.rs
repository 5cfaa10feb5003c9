//! HTTP backend contract tests against a minimal in-process server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use vx::backends::http::HttpBackend;
use vx::backends::{BackendError, Frame, FrameSource, ModelBackend};

struct Request {
    path: String,
    authorization: Option<String>,
    body: String,
}

/// One-thread HTTP/1.1 server; each connection gets one request/response.
fn spawn_server<F>(handler: F) -> (String, Arc<AtomicUsize>)
where
    F: Fn(&Request) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind test server");
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let hits_inner = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            hits_inner.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
            let mut content_length = 0usize;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).is_err() || line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap_or(0);
                }
                if lower.starts_with("authorization:") {
                    authorization = line.split_once(':').map(|(_, v)| v.trim().to_string());
                }
            }
            let mut body = vec![0u8; content_length];
            let _ = reader.read_exact(&mut body);
            let request = Request {
                path,
                authorization,
                body: String::from_utf8_lossy(&body).into_owned(),
            };
            let (status, response_body) = handler(&request);
            let reason = if status == 200 { "OK" } else { "ERR" };
            let _ = write!(
                stream,
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response_body}",
                response_body.len()
            );
        }
    });
    (format!("http://{addr}"), hits)
}

#[test]
fn embed_text_returns_unit_normalized_embedding() {
    let (url, _) = spawn_server(|req| {
        assert_eq!(req.path, "/embed_text");
        let values: Vec<String> = (0..512).map(|i| format!("{}.0", (i % 7) + 1)).collect();
        (200, format!("{{\"embedding\":[{}]}}", values.join(",")))
    });
    let backend = HttpBackend::new(&url);
    let embedding = backend.embed_text("hello").unwrap();
    assert_eq!(embedding.dim(), 512);
    assert!((embedding.l2_norm() - 1.0).abs() < 1e-6);
}

#[test]
fn complete_echo_passes_text_through() {
    let (url, _) = spawn_server(|req| {
        let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
        let prompt = body["prompt"].as_str().unwrap();
        (200, serde_json::json!({ "text": prompt }).to_string())
    });
    let backend = HttpBackend::new(&url);
    let text = backend.complete("echo me, word for word").unwrap();
    assert_eq!(text, "echo me, word for word");
}

#[test]
fn five_hundred_thrice_surfaces_error() {
    let (url, hits) = spawn_server(|_| (500, "{\"error\":\"boom\"}".to_string()));
    let backend = HttpBackend::new(&url).with_backoff_base(Duration::from_millis(1));
    let err = backend.complete("anything").unwrap_err();
    match err {
        BackendError::HttpStatus { status, body_excerpt, .. } => {
            assert_eq!(status, 500);
            assert!(body_excerpt.contains("boom"));
        }
        other => panic!("expected HttpStatus, got {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 3, "three attempts total");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, hits) = spawn_server(|_| (404, "{}".to_string()));
    let backend = HttpBackend::new(&url).with_backoff_base(Duration::from_millis(1));
    assert!(backend.complete("x").is_err());
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn vision_answer_posts_frame_descriptors_and_bearer_token() {
    let (url, _) = spawn_server(|req| {
        assert_eq!(req.path, "/vision_answer");
        assert_eq!(req.authorization.as_deref(), Some("Bearer sesame"));
        let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
        assert_eq!(body["question"], "what is shown?");
        let frames = body["frames"].as_array().unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0]["video_id"], "v1");
        assert_eq!(frames[0]["source"], "synthetic");
        (200, serde_json::json!({ "text": "a test pattern" }).to_string())
    });
    let backend = HttpBackend::new(&url).with_bearer_token("sesame");
    let frames: Vec<Frame> = (0..2)
        .map(|i| Frame {
            video_id: "v1".to_string(),
            timestamp_s: i as f64,
            source: FrameSource::Synthetic { descriptor: format!("f{i}") },
        })
        .collect();
    let answer = backend.vision_answer(&frames, "what is shown?").unwrap();
    assert_eq!(answer, "a test pattern");
}

#[test]
fn zero_embedding_from_service_is_rejected() {
    let (url, _) = spawn_server(|_| (200, "{\"embedding\":[0.0,0.0,0.0]}".to_string()));
    let backend = HttpBackend::new(&url);
    assert!(matches!(backend.embed_text("x").unwrap_err(), BackendError::BadEmbedding(_)));
}
