#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use rowlight_cli::server::AgentFactory;
use rowlight_cli::Service;
use rowlight_core::agent::{AgentClient, ScriptedAgent, Tape};
use rowlight_core::device::{SimDevice, VirtualFixture};
use rowlight_core::{BoardCommand, DeviceHandle};
use serde_json::Value;
use tower::ServiceExt;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn sim(name: &str) -> DeviceHandle<SimDevice> {
    DeviceHandle::new(SimDevice::open(&VirtualFixture::from_yaml(&fixture_text(name)).unwrap()).unwrap())
}

pub fn scripted(tape: Option<&str>) -> AgentFactory {
    let tape = tape.map(|t| Tape::from_yaml(&fixture_text(&format!("tapes/{t}"))).unwrap()).unwrap_or_default();
    Arc::new(move || Ok(Box::new(ScriptedAgent::new(tape.clone())) as Box<dyn AgentClient>))
}

pub struct App {
    pub router: Router,
    pub device: DeviceHandle<SimDevice>,
}

pub fn app(fixture: &str, tape: Option<&str>, log_dir: Option<&Path>) -> App {
    let device = sim(fixture);
    let service = Service::new(Box::new(device.clone()), scripted(tape), log_dir.map(Path::to_path_buf)).unwrap();
    App { router: service.router(), device }
}

pub enum Payload<'a> {
    None,
    Json(Value),
    Text(&'a str),
}

impl App {
    pub async fn call(&self, method: &str, path: &str, payload: Payload<'_>) -> (StatusCode, Value) {
        let body = match payload {
            Payload::None => Body::empty(),
            Payload::Json(v) => Body::from(v.to_string()),
            Payload::Text(t) => Body::from(t.to_string()),
        };
        let req = Request::builder().method(method).uri(path).body(body).unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        let body = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, body)
    }

    pub async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.call("POST", path, Payload::Json(body)).await
    }

    /// Creates a session and returns its id.
    pub async fn session(&self) -> String {
        let (status, body) = self.call("POST", "/session", Payload::None).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["id"].as_str().unwrap().to_string()
    }

    pub fn frames(&self) -> Vec<BoardCommand> {
        self.device.lock().history().to_vec()
    }
}
