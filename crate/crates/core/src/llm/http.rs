use std::sync::atomic::{AtomicU32, Ordering};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, ChatRole, LlmError, ProviderConfig};

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
    attempts: AtomicU32,
}

enum Failure {
    Transient(String),
    Fatal(LlmError),
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpProvider {
            config,
            agent,
            attempts: AtomicU32::new(0),
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Total HTTP attempts made by this provider so far.
    pub fn attempts_made(&self) -> u32 {
        self.attempts.load(Ordering::Relaxed)
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn body(request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    ChatRole::System => "system",
                    ChatRole::User => "user",
                    ChatRole::Assistant => "assistant",
                };
                json!({ "role": role, "content": m.content })
            })
            .collect();
        json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn attempt(&self, request: &ChatRequest, api_key: Option<&str>) -> Result<String, Failure> {
        self.attempts.fetch_add(1, Ordering::Relaxed);
        let mut req = self.agent.post(&self.url()).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(Self::body(request))
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(Failure::Fatal(LlmError::Auth(format!("HTTP {status}")))),
            408 | 429 | 500..=599 => return Err(Failure::Transient(format!("HTTP {status}"))),
            _ => return Err(Failure::Fatal(LlmError::Rejected(format!("HTTP {status}: {text}")))),
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| Failure::Fatal(LlmError::Rejected(format!("bad JSON: {e}"))))?;
        match value.pointer("/choices/0/message/content").and_then(Value::as_str) {
            Some(s) if !s.trim().is_empty() => Ok(s.to_string()),
            _ => Err(Failure::Fatal(LlmError::ResponseEmpty)),
        }
    }
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        let api_key = match &self.config.credentials_env {
            Some(var) => Some(std::env::var(var).map_err(|_| LlmError::Auth(format!("environment variable {var} is not set")))?),
            None => None,
        };
        let max = self.config.retry.max_attempts;
        let mut last_error = String::new();
        for attempt in 0..max {
            if attempt > 0 {
                let wait = self.config.retry.delay_before_retry(attempt as usize - 1);
                debug!("retrying chat request in {wait} ms");
                thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(request, api_key.as_deref()) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(e)) => {
                    warn!("chat attempt {}/{max} failed: {e}", attempt + 1);
                    last_error = e;
                }
            }
        }
        Err(LlmError::ProviderUnavailable {
            attempts: max,
            last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::RetryPolicy;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn closed_port() -> u16 {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    }

    fn config(endpoint: String, attempts: u32) -> ProviderConfig {
        ProviderConfig {
            endpoint,
            credentials_env: None,
            retry: RetryPolicy {
                max_attempts: attempts,
                backoff_ms: vec![1],
            },
            timeout_secs: 5,
        }
    }

    #[test]
    fn unreachable_endpoint_exhausts_retries() {
        let p = HttpProvider::new(config(format!("http://127.0.0.1:{}/v1", closed_port()), 3)).unwrap();
        match p.complete(&ChatRequest::user("m", "hi", 0.0)) {
            Err(LlmError::ProviderUnavailable { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }
        assert_eq!(p.attempts_made(), 3);
    }

    #[test]
    fn zero_attempts_is_rejected() {
        assert!(HttpProvider::new(config("http://x".into(), 0)).is_err());
    }

    #[test]
    fn missing_credentials_is_auth_error() {
        let mut cfg = config("http://127.0.0.1:9/v1".into(), 1);
        cfg.credentials_env = Some("SITEWALK_TEST_KEY_THAT_IS_NOT_SET".into());
        let p = HttpProvider::new(cfg).unwrap();
        assert!(matches!(p.complete(&ChatRequest::user("m", "hi", 0.0)), Err(LlmError::Auth(_))));
        assert_eq!(p.attempts_made(), 0);
    }

    /// Serves `responses` in order, one per connection.
    fn serve(responses: Vec<(u16, String)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}/v1")
    }

    #[test]
    fn transient_errors_are_retried_and_content_errors_are_not() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#.to_string();
        let endpoint = serve(vec![(503, "{}".into()), (200, ok)]);
        let p = HttpProvider::new(config(endpoint, 3)).unwrap();
        assert_eq!(p.complete(&ChatRequest::user("m", "hi", 0.0)).unwrap(), "hello");
        assert_eq!(p.attempts_made(), 2);

        let endpoint = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
        let p = HttpProvider::new(config(endpoint, 3)).unwrap();
        assert!(matches!(p.complete(&ChatRequest::user("m", "hi", 0.0)), Err(LlmError::Rejected(_))));
        assert_eq!(p.attempts_made(), 1);
    }
}
