//! HttpBackend against a minimal local chat-completions server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use nameprobe::gateway::{GatewayError, HttpBackend, ResponseStatus, RetryPolicy};
use nameprobe::{Gateway, ModelSpec, PromptText};

struct Request {
    headers: Vec<(String, String)>,
    body: serde_json::Value,
}

fn read_request(stream: &mut TcpStream) -> Request {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut headers = Vec::new();
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    loop {
        line.clear();
        reader.read_line(&mut line).unwrap();
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        let (k, v) = l.split_once(':').unwrap();
        headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
    }
    let len: usize = headers.iter().find(|(k, _)| k == "content-length").map_or(0, |(_, v)| v.parse().unwrap());
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    Request { headers, body: serde_json::from_slice(&body).unwrap() }
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) {
    let reason = match status {
        200 => "OK",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        _ => "Error",
    };
    let msg = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(msg.as_bytes()).unwrap();
}

fn completion(text: &str) -> String {
    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] }).to_string()
}

/// Serves each connection on its own thread; `handler` gets the request
/// ordinal and the parsed request and returns (status, body).
fn serve<F>(handler: F) -> String
where
    F: Fn(usize, &Request) -> (u16, String) + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handler = Arc::new(handler);
    let count = Arc::new(AtomicUsize::new(0));
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let handler = Arc::clone(&handler);
            let n = count.fetch_add(1, Ordering::SeqCst);
            thread::spawn(move || {
                let req = read_request(&mut stream);
                let (status, body) = handler(n, &req);
                respond(&mut stream, status, &body);
            });
        }
    });
    format!("http://{addr}/v1")
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy { max_attempts: 3, base_delay_ms: 5, jitter: 0.0 }
}

fn prompt(id: &str, text: &str) -> PromptText {
    PromptText { text: text.into(), profile: "simple".into(), record_id: id.into() }
}

#[test]
fn retries_through_rate_limits() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let url = serve(move |n, req| {
        log.lock().unwrap().push((req.body.clone(), req.headers.clone()));
        if n < 2 {
            (429, r#"{"error":"slow down"}"#.into())
        } else {
            (200, completion("Gender: F\nNationality: USA"))
        }
    });
    std::env::set_var("NAMEPROBE_STUB_KEY", "sk-test");
    let mut spec = ModelSpec::new("stub-model", url.parse().unwrap());
    spec.api_key_env = "NAMEPROBE_STUB_KEY".into();
    let gw = Gateway::new(HttpBackend::new(Duration::from_secs(5))).with_retry(fast_retry());
    let resp = gw.complete(&spec, &prompt("1", "Given the full name")).unwrap();
    assert_eq!(resp.status, ResponseStatus::Ok);
    assert_eq!(resp.retry_count, 2);
    assert_eq!(resp.text, "Gender: F\nNationality: USA");

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    let (body, headers) = &seen[2];
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0]["content"], "Given the full name");
    assert!(headers.iter().any(|(k, v)| k == "authorization" && v == "Bearer sk-test"));

    // Now cached: no further request.
    let again = gw.complete(&spec, &prompt("1", "Given the full name")).unwrap();
    assert!(again.from_cache);
    assert_eq!(seen.len(), 3);
}

#[test]
fn server_errors_give_up_after_three_attempts() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = Arc::clone(&hits);
    let url = serve(move |_, _| {
        h.fetch_add(1, Ordering::SeqCst);
        (503, "{}".into())
    });
    let spec = ModelSpec::new("down", url.parse().unwrap());
    let gw = Gateway::new(HttpBackend::new(Duration::from_secs(5))).with_retry(fast_retry());
    let out = gw.complete_batch(&[spec], &[prompt("1", "x")]);
    assert_eq!(out[0].status, ResponseStatus::TransportError);
    assert_eq!(out[0].retry_count, 2);
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn unauthorized_is_not_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = Arc::clone(&hits);
    let url = serve(move |_, _| {
        h.fetch_add(1, Ordering::SeqCst);
        (401, r#"{"error":"bad key"}"#.into())
    });
    let spec = ModelSpec::new("locked", url.parse().unwrap());
    let gw = Gateway::new(HttpBackend::new(Duration::from_secs(5))).with_retry(fast_retry());
    assert!(matches!(gw.complete(&spec, &prompt("1", "x")), Err(GatewayError::Auth { .. })));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn missing_key_names_the_variable() {
    let mut spec = ModelSpec::new("m", "http://127.0.0.1:9/v1".parse().unwrap());
    spec.api_key_env = "NAMEPROBE_DEFINITELY_UNSET".into();
    let gw = Gateway::new(HttpBackend::new(Duration::from_secs(1)));
    let err = gw.complete(&spec, &prompt("1", "x")).unwrap_err();
    assert!(err.to_string().contains("NAMEPROBE_DEFINITELY_UNSET"), "{err}");
}

#[test]
fn in_flight_requests_respect_max_parallel() {
    let current = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (c, p) = (Arc::clone(&current), Arc::clone(&peak));
    let url = serve(move |_, req| {
        let now = c.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(60));
        c.fetch_sub(1, Ordering::SeqCst);
        let content = req.body["messages"][0]["content"].as_str().unwrap().to_string();
        (200, completion(&format!("echo {content}")))
    });
    let mut spec = ModelSpec::new("busy", url.parse().unwrap());
    spec.max_parallel = 3;
    let prompts: Vec<PromptText> = (0..12).map(|i| prompt(&i.to_string(), &format!("p{i}"))).collect();
    let gw = Gateway::new(HttpBackend::new(Duration::from_secs(5)));
    let out = gw.complete_batch(&[spec], &prompts);
    assert_eq!(peak.load(Ordering::SeqCst), 3);
    for (i, r) in out.iter().enumerate() {
        assert_eq!(r.record_id, i.to_string());
        assert_eq!(r.text, format!("echo p{i}"));
    }
}
