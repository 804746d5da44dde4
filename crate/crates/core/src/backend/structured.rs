//! Structured completion: turns free-form model text into a typed answer.
//!
//! Ladder per response: parse as-is, strip markdown fences, extract the first
//! balanced JSON object. If all fail, the model is re-asked with a corrective
//! instruction, up to `max_retries` extra calls.

use serde_json::Value;

use super::schema::StructuredOutput;
use super::transport::{Transport, TransportError};
use super::{BackendError, BackendConfig};
use super::prompt::{Message, Role};
use super::wire;

/// Removes a surrounding ```` ``` ```` / ```` ```json ```` fence, if any.
pub fn strip_fences(raw: &str) -> Option<&str> {
    let t = raw.trim();
    let rest = t.strip_prefix("```")?;
    let body_start = rest.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &rest[body_start..];
    let body = body.trim_end();
    let body = body.strip_suffix("```").unwrap_or(body);
    Some(body.trim())
}

/// First balanced `{...}` in `raw`, honouring string literals and escapes.
pub fn first_json_object(raw: &str) -> Option<&str> {
    let bytes = raw.as_bytes();
    let mut search = 0;
    while let Some(rel) = raw[search..].find('{') {
        let start = search + rel;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        let candidate = &raw[start..=i];
                        if serde_json::from_str::<Value>(candidate).is_ok() {
                            return Some(candidate);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        search = start + 1;
    }
    None
}

fn decode<T: StructuredOutput>(candidate: &str) -> Result<T, String> {
    let value: T = serde_json::from_str(candidate).map_err(|e| e.to_string())?;
    value.check()?;
    Ok(value)
}

/// Applies the local repair steps to one response.
pub fn parse_structured<T: StructuredOutput>(raw: &str) -> Result<T, String> {
    let mut last = match decode(raw.trim()) {
        Ok(v) => return Ok(v),
        Err(e) => e,
    };
    if let Some(inner) = strip_fences(raw) {
        match decode(inner) {
            Ok(v) => return Ok(v),
            Err(e) => last = e,
        }
    }
    if let Some(obj) = first_json_object(raw) {
        match decode(obj) {
            Ok(v) => return Ok(v),
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn corrective(problem: &str, schema: &str) -> String {
    format!(
        "Your previous answer could not be used: {problem}. \
         Reply again with strict JSON only, no Markdown and no code fences, \
         matching exactly this shape: {schema}"
    )
}

/// Sends `messages` and returns a validated `T`. Total transport calls never
/// exceed `1 + config.max_retries`.
pub async fn complete_structured<T: StructuredOutput>(
    transport: &dyn Transport,
    config: &BackendConfig,
    messages: &[Message],
    output_schema: &str,
) -> Result<T, BackendError> {
    let mut conversation = messages.to_vec();
    let attempts = 1 + config.max_retries as usize;
    let mut last_problem = String::from("no attempt made");
    for _ in 0..attempts {
        let request = wire::chat_request(config, &conversation).await?;
        let sent = tokio::time::timeout(config.request_timeout(), transport.send(&request)).await;
        let body = match sent {
            Err(_) => {
                last_problem = "request timed out".into();
                continue;
            }
            Ok(Err(TransportError::Auth(msg))) => return Err(BackendError::Auth(msg)),
            Ok(Err(e)) => {
                last_problem = e.to_string();
                continue;
            }
            Ok(Ok(body)) => body,
        };
        let Some(content) = wire::response_text(&body) else {
            last_problem = "response has no message content".into();
            continue;
        };
        match parse_structured::<T>(&content) {
            Ok(v) => return Ok(v),
            Err(problem) => {
                tracing::debug!(%problem, "unparseable judge response, re-asking");
                conversation.push(Message::text(Role::Assistant, content));
                conversation.push(Message::text(Role::User, corrective(&problem, output_schema)));
                last_problem = problem;
            }
        }
    }
    Err(BackendError::Failure {
        attempts,
        last: last_problem,
    })
}
