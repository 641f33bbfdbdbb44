//! Request/response transport over stdin and stdout, one JSON object per line.
//!
//! Input: `{"method": "POST", "path": "/session/s1/query", "body": {"text": "hi"}}`.
//! A string body is sent as-is, anything else as JSON.
//! Output: `{"status": 200, "body": {...}}`.

use axum::body::{to_bytes, Body};
use axum::http::Request;
use axum::Router;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncWrite, AsyncWriteExt};
use tower::ServiceExt;

#[derive(Deserialize)]
struct Line {
    #[serde(default = "post")]
    method: String,
    path: String,
    #[serde(default)]
    body: Value,
}

fn post() -> String {
    "POST".into()
}

const BODY_LIMIT: usize = 16 << 20;

async fn handle(router: &Router, line: &str) -> Value {
    let req: Line = match serde_json::from_str(line) {
        Ok(req) => req,
        Err(e) => return json!({"status": 400, "body": {"error": {"code": "invalid_body", "message": e.to_string()}}}),
    };
    if req.path.ends_with("/events") {
        let error = json!({"code": "not_supported", "message": "event streams need the HTTP transport"});
        return json!({"status": 400, "body": {"error": error}});
    }
    let body = match req.body {
        Value::Null => Body::empty(),
        Value::String(s) => Body::from(s),
        other => Body::from(other.to_string()),
    };
    let request = Request::builder().method(req.method.as_str()).uri(&req.path).body(body);
    let request = match request {
        Ok(r) => r,
        Err(e) => return json!({"status": 400, "body": {"error": {"code": "invalid_body", "message": e.to_string()}}}),
    };
    let response = router.clone().oneshot(request).await.expect("router is infallible");
    let status = response.status().as_u16();
    let bytes = to_bytes(response.into_body(), BODY_LIMIT).await.unwrap_or_default();
    let body = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    json!({"status": status, "body": body})
}

/// Serves requests from `input` until EOF.
pub async fn serve(
    router: Router,
    input: impl AsyncBufRead + Unpin,
    mut output: impl AsyncWrite + Unpin,
) -> std::io::Result<()> {
    let mut lines = input.lines();
    while let Some(line) = lines.next_line().await? {
        if line.trim().is_empty() {
            continue;
        }
        let mut out = handle(&router, &line).await.to_string();
        out.push('\n');
        output.write_all(out.as_bytes()).await?;
        output.flush().await?;
    }
    Ok(())
}
