//! Answer-server protocol tests. The conformance cases run against
//! `SAF_BRIDGE_URL` when it is set, otherwise against an in-process echo
//! server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use saf_core::answerer::{
    AnswerError, AnswerRequest, Answerer, FrameEncoding, FramePayload, RemoteAnswerer, RemoteConfig,
};

const ECHO_MAX_FRAMES: usize = 1024;

struct Reply {
    status: u16,
    body: String,
}

impl Reply {
    fn json(status: u16, value: serde_json::Value) -> Self {
        Self {
            status,
            body: value.to_string(),
        }
    }
}

fn read_request(stream: &mut TcpStream) -> Option<String> {
    let mut reader = BufReader::new(stream);
    let mut length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    String::from_utf8(body).ok()
}

/// Serves `handler` on an ephemeral port, one request per connection.
fn serve(handler: impl Fn(&str) -> Reply + Send + Sync + 'static) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handler = Arc::new(handler);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let handler = Arc::clone(&handler);
            thread::spawn(move || {
                if let Some(body) = read_request(&mut stream) {
                    let r = handler(&body);
                    let head = format!(
                        "HTTP/1.1 {} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                        r.status,
                        r.body.len()
                    );
                    let _ = stream.write_all(head.as_bytes());
                    let _ = stream.write_all(r.body.as_bytes());
                }
            });
        }
    });
    format!("http://{addr}")
}

fn echo(body: &str) -> Reply {
    match serde_json::from_str::<AnswerRequest>(body) {
        Err(e) => Reply::json(400, serde_json::json!({ "error": e.to_string() })),
        Ok(r) if r.frame_indices.len() > ECHO_MAX_FRAMES => Reply::json(
            413,
            serde_json::json!({ "error": format!("{} frames exceed the limit of {ECHO_MAX_FRAMES}", r.frame_indices.len()) }),
        ),
        Ok(r) => Reply::json(
            200,
            serde_json::json!({ "answer": r.question, "model": "echo" }),
        ),
    }
}

fn endpoint() -> String {
    std::env::var("SAF_BRIDGE_URL").unwrap_or_else(|_| serve(echo))
}

fn client(url: &str) -> RemoteAnswerer {
    RemoteAnswerer::new(
        url,
        RemoteConfig {
            timeout_ms: 10_000,
            max_retries: 0,
            backoff_ms: 1,
        },
    )
}

fn feature_request(indices: Vec<usize>) -> AnswerRequest {
    let mut r = AnswerRequest::new("vid-7", "what is the man holding?", indices);
    r.frames = Some(
        r.frame_indices
            .iter()
            .map(|&i| FramePayload::Features(vec![i as f32, 0.5, -1.25]))
            .collect(),
    );
    r.frame_encoding = Some(FrameEncoding::FeaturesF32);
    r
}

#[test]
fn echo_answers_with_the_question() {
    let a = client(&endpoint());
    let req = feature_request(vec![0, 5, 9, 31]);
    assert_eq!(a.answer(&req).unwrap(), req.question);
    let unicode = AnswerRequest::new("u", "¿qué animal está corriendo? 走る犬", vec![2]);
    assert_eq!(a.answer(&unicode).unwrap(), unicode.question);
}

#[test]
fn overlong_frame_list_is_413_with_error_json() {
    let a = client(&endpoint());
    let req = AnswerRequest::new("long", "q", (0..20_000).collect());
    match a.answer(&req) {
        Err(AnswerError::Http {
            status: 413,
            message,
        }) => assert!(!message.is_empty()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn request_body_round_trips_through_the_wire() {
    let seen: Arc<Mutex<Option<AnswerRequest>>> = Arc::default();
    let sink = Arc::clone(&seen);
    let url = serve(move |body| {
        *sink.lock().unwrap() = Some(serde_json::from_str(body).unwrap());
        echo(body)
    });
    let mut req = feature_request(vec![1, 4, 17, 30]);
    req.options = Some(vec!["a cup".into(), "a ball".into()]);
    client(&url).answer(&req).unwrap();
    assert_eq!(seen.lock().unwrap().as_ref(), Some(&req));
}

#[test]
fn non_json_body_is_malformed() {
    let url = serve(|_| Reply {
        status: 200,
        body: "<html>oops</html>".into(),
    });
    assert!(matches!(
        client(&url).answer(&feature_request(vec![0])),
        Err(AnswerError::Malformed(_))
    ));
}

#[test]
fn server_errors_are_retried_then_reported() {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&calls);
    let url = serve(move |body| {
        if counter.fetch_add(1, Ordering::SeqCst) < 2 {
            Reply::json(503, serde_json::json!({ "error": "warming up" }))
        } else {
            echo(body)
        }
    });
    let patient = RemoteAnswerer::new(
        &url,
        RemoteConfig {
            timeout_ms: 10_000,
            max_retries: 3,
            backoff_ms: 1,
        },
    );
    let req = feature_request(vec![3]);
    assert_eq!(patient.answer(&req).unwrap(), req.question);
    assert_eq!(calls.load(Ordering::SeqCst), 3);

    let failing = serve(|_| Reply::json(500, serde_json::json!({ "error": "model crashed" })));
    match client(&failing).answer(&req) {
        Err(AnswerError::Http {
            status: 500,
            message,
        }) => assert_eq!(message, "model crashed"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn client_errors_are_not_retried() {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&calls);
    let url = serve(move |_| {
        counter.fetch_add(1, Ordering::SeqCst);
        Reply::json(404, serde_json::json!({ "error": "unknown instance" }))
    });
    let a = RemoteAnswerer::new(
        &url,
        RemoteConfig {
            timeout_ms: 10_000,
            max_retries: 3,
            backoff_ms: 1,
        },
    );
    assert!(matches!(
        a.answer(&feature_request(vec![0])),
        Err(AnswerError::Http { status: 404, .. })
    ));
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn refused_connection_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let err = client(&format!("http://127.0.0.1:{port}"))
        .answer(&feature_request(vec![0]))
        .unwrap_err();
    assert!(matches!(err, AnswerError::Transport(_)), "{err:?}");
    assert!(err.is_retriable());
}

#[test]
fn invalid_requests_never_reach_the_server() {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&calls);
    let url = serve(move |body| {
        counter.fetch_add(1, Ordering::SeqCst);
        echo(body)
    });
    let a = client(&url);
    for bad in [
        AnswerRequest::new("x", "q", vec![]),
        AnswerRequest::new("x", "q", vec![3, 1]),
        AnswerRequest::new("x", "q", vec![1, 1]),
    ] {
        assert!(
            matches!(a.answer(&bad), Err(AnswerError::InvalidRequest(_))),
            "{bad:?}"
        );
    }
    assert_eq!(calls.load(Ordering::SeqCst), 0);
}
