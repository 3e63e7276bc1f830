//! Chat-completions client for OpenAI-compatible endpoints.

use std::fmt;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, Completion, ProviderConfig, ProviderError, Reply, ToolCall, Turn};
use crate::prompt::ToolSpec;

const REDACTED: &str = "[REDACTED]";

pub struct OpenAiCompatible {
    endpoint: String,
    api_key: String,
    client: reqwest::Client,
}

impl fmt::Debug for OpenAiCompatible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpenAiCompatible")
            .field("endpoint", &self.endpoint)
            .field("api_key", &REDACTED)
            .finish()
    }
}

impl OpenAiCompatible {
    /// Reads the key from the environment variable named in the config.
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&cfg.api_key_env).map_err(|_| {
            ProviderError::Config(format!(
                "environment variable {} is not set",
                cfg.api_key_env
            ))
        })?;
        if api_key.trim().is_empty() {
            return Err(ProviderError::Config(format!(
                "environment variable {} is empty",
                cfg.api_key_env
            )));
        }
        Self::new(&cfg.endpoint, api_key)
    }

    pub fn new(endpoint: &str, api_key: String) -> Result<Self, ProviderError> {
        // Only one crypto provider is compiled in; a second install is harmless.
        let _ = rustls::crypto::ring::default_provider().install_default();
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| ProviderError::Config(format!("http client: {e}")))?;
        Ok(OpenAiCompatible {
            endpoint: endpoint.to_string(),
            api_key,
            client,
        })
    }

    fn redact(&self, v: Value) -> Value {
        let text = v.to_string();
        if self.api_key.is_empty() || !text.contains(&self.api_key) {
            return v;
        }
        serde_json::from_str(&text.replace(&self.api_key, REDACTED)).unwrap_or(Value::Null)
    }
}

fn turn_json(t: &Turn) -> Value {
    match t {
        Turn::System(s) => json!({ "role": "system", "content": s }),
        Turn::Human(s) => json!({ "role": "user", "content": s }),
        Turn::AiText(s) => json!({ "role": "assistant", "content": s }),
        Turn::AiToolCalls(calls) => json!({
            "role": "assistant",
            "content": Value::Null,
            "tool_calls": calls.iter().map(|c| json!({
                "id": c.id,
                "type": "function",
                "function": { "name": c.name, "arguments": c.arguments },
            })).collect::<Vec<_>>(),
        }),
        Turn::ToolResult { call_id, content } => json!({
            "role": "tool",
            "tool_call_id": call_id,
            "content": content,
        }),
    }
}

pub fn request_body(model: &str, turns: &[Turn], tools: &[ToolSpec]) -> Value {
    let mut body = json!({
        "model": model,
        "messages": turns.iter().map(turn_json).collect::<Vec<_>>(),
    });
    if !tools.is_empty() {
        body["tools"] = tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": t.name,
                        "description": t.description,
                        "parameters": t.parameters,
                    },
                })
            })
            .collect();
    }
    body
}

pub fn parse_response(status: u16, body: &Value) -> Result<Reply, ProviderError> {
    let detail = || {
        body.pointer("/error/message")
            .and_then(Value::as_str)
            .unwrap_or("")
            .to_string()
    };
    match status {
        401 | 403 => return Err(ProviderError::Auth(format!("HTTP {status} {}", detail()))),
        200..=299 => {}
        _ => {
            return Err(ProviderError::Transport(format!(
                "HTTP {status} {}",
                detail()
            )))
        }
    }
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| ProviderError::Protocol("response has no choices[0].message".into()))?;
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        if !calls.is_empty() {
            let parsed = calls
                .iter()
                .map(|c| {
                    let field = |p: &str| c.pointer(p).and_then(Value::as_str).map(str::to_string);
                    Ok(ToolCall {
                        id: field("/id").unwrap_or_default(),
                        name: field("/function/name").ok_or_else(|| {
                            ProviderError::Protocol("tool call without function name".into())
                        })?,
                        arguments: field("/function/arguments").unwrap_or_else(|| "{}".into()),
                    })
                })
                .collect::<Result<Vec<_>, ProviderError>>()?;
            return Ok(Reply::ToolCalls(parsed));
        }
    }
    match message.get("content") {
        Some(Value::String(s)) => Ok(Reply::Text(s.clone())),
        Some(Value::Null) | None => Ok(Reply::Text(String::new())),
        Some(other) => Err(ProviderError::Protocol(format!("unexpected content {other}"))),
    }
}

#[async_trait]
impl ChatProvider for OpenAiCompatible {
    fn name(&self) -> &str {
        "openai-compatible"
    }

    async fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, ProviderError> {
        let body = request_body(request.model, request.turns, request.tools);
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(|e| ProviderError::Transport(e.without_url().to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .await
            .map_err(|e| ProviderError::Transport(e.without_url().to_string()))?;
        let parsed: Value = serde_json::from_str(&text).unwrap_or_else(|_| json!({ "raw": text }));
        let exchange = self.redact(json!({
            "request": body,
            "status": status,
            "response": parsed,
        }));
        let reply = parse_response(status, &parsed)?;
        Ok(Completion {
            reply,
            exchange: Some(exchange),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_shapes_tool_turns() {
        let turns = vec![
            Turn::System("s".into()),
            Turn::Human("h".into()),
            Turn::AiToolCalls(vec![ToolCall {
                id: "c1".into(),
                name: "get_event_variants".into(),
                arguments: "{}".into(),
            }]),
            Turn::ToolResult {
                call_id: "c1".into(),
                content: "1# A".into(),
            },
        ];
        let b = request_body("m", &turns, &[ToolSpec::default()]);
        assert_eq!(b["messages"][1]["role"], "user");
        assert_eq!(b["messages"][2]["tool_calls"][0]["function"]["name"], "get_event_variants");
        assert_eq!(b["messages"][3]["role"], "tool");
        assert_eq!(b["messages"][3]["tool_call_id"], "c1");
        assert_eq!(b["tools"][0]["type"], "function");
    }

    #[test]
    fn parses_text_tool_calls_and_auth() {
        let text = json!({ "choices": [{ "message": { "content": "1# A->A" } }] });
        assert_eq!(parse_response(200, &text), Ok(Reply::Text("1# A->A".into())));
        let call = json!({ "choices": [{ "message": { "content": null, "tool_calls": [
            { "id": "x", "type": "function", "function": { "name": "f", "arguments": "{}" } }
        ] } }] });
        assert!(matches!(parse_response(200, &call), Ok(Reply::ToolCalls(c)) if c[0].name == "f"));
        assert!(matches!(parse_response(401, &json!({})), Err(ProviderError::Auth(_))));
        assert!(matches!(parse_response(500, &json!({})), Err(ProviderError::Transport(_))));
        assert!(matches!(parse_response(200, &json!({})), Err(ProviderError::Protocol(_))));
    }

    #[test]
    fn debug_hides_key() {
        let p = OpenAiCompatible::new("http://localhost:1", "sk-secret".into()).unwrap();
        assert!(!format!("{p:?}").contains("sk-secret"));
        let v = p.redact(json!({ "echo": "Bearer sk-secret" }));
        assert_eq!(v["echo"], "Bearer [REDACTED]");
    }
}
