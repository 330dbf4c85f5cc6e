//! Minimal scripted HTTP/1.1 server for exercising client paths in unit
//! tests without external dependencies.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread::JoinHandle;

/// Serves one scripted (status, json_body) response per incoming request,
/// then stops. Returns the server URL and a handle yielding the request
/// bodies it saw.
pub(crate) fn serve_script(script: Vec<(u16, String)>) -> (String, JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let mut seen_bodies = Vec::new();
        for (status, body) in script {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut tmp = [0u8; 4096];
            let request = loop {
                let n = stream.read(&mut tmp).unwrap();
                buf.extend_from_slice(&tmp[..n]);
                if let Some(head_end) = find_header_end(&buf) {
                    let head = String::from_utf8_lossy(&buf[..head_end]).to_string();
                    let content_length = head
                        .lines()
                        .find_map(|l| {
                            l.to_ascii_lowercase()
                                .strip_prefix("content-length:")
                                .map(|v| v.trim().parse::<usize>().unwrap())
                        })
                        .unwrap_or(0);
                    while buf.len() < head_end + 4 + content_length {
                        let n = stream.read(&mut tmp).unwrap();
                        buf.extend_from_slice(&tmp[..n]);
                    }
                    break String::from_utf8_lossy(&buf[head_end + 4..head_end + 4 + content_length])
                        .to_string();
                }
            };
            seen_bodies.push(request);
            let reason = match status {
                200 => "OK",
                400 => "Bad Request",
                429 => "Too Many Requests",
                500 => "Internal Server Error",
                _ => "Status",
            };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
        seen_bodies
    });
    (format!("http://{addr}/v1"), handle)
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

/// A chat-completions response body with the given message content.
pub(crate) fn chat_body(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 120, "completion_tokens": 8}
    })
    .to_string()
}

/// An embeddings response body with the given vectors.
pub(crate) fn embeddings_body(vectors: &[Vec<f64>]) -> String {
    let data: Vec<serde_json::Value> = vectors
        .iter()
        .map(|v| serde_json::json!({"embedding": v}))
        .collect();
    serde_json::json!({ "data": data }).to_string()
}
