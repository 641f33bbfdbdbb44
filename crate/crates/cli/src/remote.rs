//! Agent reached over an OpenAI-compatible chat completions endpoint.

use std::time::Duration;

use rowlight_core::agent::{AgentClient, AgentError, AgentReply, AgentRequest};
use rowlight_core::{Role, ToolCall, Turn};
use serde_json::{json, Value};

pub struct RemoteAgent {
    endpoint: String,
    model: String,
    key: Option<String>,
    http: reqwest::blocking::Client,
}

impl RemoteAgent {
    pub fn new(endpoint: String, model: String, key: Option<String>) -> Self {
        let http =
            reqwest::blocking::Client::builder().timeout(Duration::from_secs(120)).build().expect("http client builds");
        RemoteAgent { endpoint, model, key, http }
    }
}

fn message(turn: &Turn) -> Value {
    let role = match turn.role {
        Role::System => "system",
        Role::Developer => "developer",
        Role::User => "user",
        Role::Assistant => "assistant",
        // tool outcomes are replayed as plain context
        Role::Tool => "user",
    };
    json!({"role": role, "content": turn.render()})
}

/// Request body for `request`.
pub fn request_body(model: &str, request: &AgentRequest<'_>) -> Value {
    let tools: Vec<Value> = request
        .tools
        .iter()
        .map(|t| {
            json!({"type": "function", "function": {
                "name": t.name, "description": t.description, "parameters": t.parameters
            }})
        })
        .collect();
    let mut body = json!({
        "model": model,
        "messages": request.turns.iter().map(message).collect::<Vec<_>>(),
    });
    if !tools.is_empty() {
        body["tools"] = json!(tools);
    }
    body
}

/// Reads the first choice of a completion.
pub fn parse_completion(body: &Value) -> Result<AgentReply, AgentError> {
    let msg = &body["choices"][0]["message"];
    if msg.is_null() {
        return Err(AgentError(format!("completion has no message: {body}")));
    }
    let text = msg["content"].as_str().unwrap_or_default().to_string();
    let mut calls = Vec::new();
    for call in msg["tool_calls"].as_array().into_iter().flatten() {
        let f = &call["function"];
        let name = f["name"].as_str().ok_or_else(|| AgentError("tool call without a name".into()))?;
        let arguments = match &f["arguments"] {
            Value::String(s) if s.trim().is_empty() => json!({}),
            Value::String(s) => serde_json::from_str(s).map_err(|e| AgentError(format!("{name} arguments: {e}")))?,
            other => other.clone(),
        };
        calls.push(ToolCall::new(name, arguments));
    }
    Ok(AgentReply { text, calls })
}

impl AgentClient for RemoteAgent {
    fn respond(&mut self, request: &AgentRequest<'_>) -> Result<AgentReply, AgentError> {
        let mut req = self.http.post(&self.endpoint).json(&request_body(&self.model, request));
        if let Some(key) = &self.key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| AgentError(e.to_string()))?;
        let status = resp.status();
        let body: Value = resp.json().map_err(|e| AgentError(e.to_string()))?;
        if !status.is_success() {
            return Err(AgentError(format!("agent returned {status}: {body}")));
        }
        parse_completion(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rowlight_core::tools::tools_for_mode;
    use rowlight_core::Mode;

    #[test]
    fn body_maps_roles_and_tools() {
        let turns = vec![Turn::text(Role::System, "sys", 0), Turn::text(Role::Developer, "ctx", 1)];
        let request = AgentRequest { turns: &turns, tools: tools_for_mode(Mode::Ask) };
        let body = request_body("m", &request);
        assert_eq!(body["messages"][1], json!({"role": "developer", "content": "ctx"}));
        assert_eq!(body["tools"][0]["function"]["name"], request.tools[0].name);
    }

    #[test]
    fn completion_with_calls() {
        let body = json!({"choices": [{"message": {"content": null, "tool_calls": [
            {"id": "c1", "type": "function", "function": {"name": "highlight_rows", "arguments": "{\"rows\":[4],\"pattern\":\"on\"}"}}
        ]}}]});
        let reply = parse_completion(&body).unwrap();
        assert_eq!(reply.text, "");
        assert_eq!(reply.calls, vec![ToolCall::new("highlight_rows", json!({"rows": [4], "pattern": "on"}))]);
        assert!(parse_completion(&json!({"error": "x"})).is_err());
    }
}
