//! Chat-completion wire shape: messages with text and base64 image parts.

use std::path::Path;

use base64::Engine;
use serde_json::{json, Value};

use super::prompt::{ContentPart, Message, Role};
use super::{BackendConfig, BackendError};
use crate::model::ImageSource;

fn media_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        _ => "image/png",
    }
}

async fn data_url(image: &ImageSource) -> Result<String, BackendError> {
    match image {
        ImageSource::Path { path } => {
            let bytes = tokio::fs::read(path).await.map_err(|e| BackendError::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
            Ok(format!("data:{};base64,{encoded}", media_type(path)))
        }
        ImageSource::Inline {
            media_type,
            data_base64,
        } => Ok(format!("data:{media_type};base64,{data_base64}")),
    }
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

/// Builds the request body. Image bytes are read and encoded here, at
/// transmission time.
pub async fn chat_request(config: &BackendConfig, messages: &[Message]) -> Result<Value, BackendError> {
    let mut wire_messages = Vec::with_capacity(messages.len());
    for m in messages {
        let only_text = m.parts.iter().all(|p| matches!(p, ContentPart::Text { .. }));
        let content = if only_text {
            Value::String(m.joined_text())
        } else {
            let mut parts = Vec::with_capacity(m.parts.len());
            for p in &m.parts {
                parts.push(match p {
                    ContentPart::Text { text } => json!({"type": "text", "text": text}),
                    ContentPart::Image { image } => {
                        json!({"type": "image_url", "image_url": {"url": data_url(image).await?}})
                    }
                });
            }
            Value::Array(parts)
        };
        wire_messages.push(json!({"role": role_name(m.role), "content": content}));
    }
    Ok(json!({
        "model": config.model_name.clone().unwrap_or_default(),
        "messages": wire_messages,
        "temperature": 0,
        "n": 1,
        "stream": false,
    }))
}

/// Assistant text of the first choice.
pub fn response_text(body: &Value) -> Option<String> {
    let content = body.pointer("/choices/0/message/content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => {
            let text: Vec<&str> = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            (!text.is_empty()).then(|| text.join(""))
        }
        _ => None,
    }
}

/// Serializes with object keys sorted at every level, independent of how
/// `serde_json` orders maps in the current build.
pub fn canonical_json(value: &Value) -> String {
    fn write(v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&Value::String(k.clone()).to_string());
                    out.push(':');
                    write(&map[k], out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}
