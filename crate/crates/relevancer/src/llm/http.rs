//! Chat-completions HTTP backend: one user message carrying the full
//! assembled prompt, bearer auth from `RELEVANCER_LLM_API_KEY`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendCallError, BackendReply, LlmConfig, TokenCounts};

pub struct HttpBackend {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: &str) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build();
        HttpBackend {
            endpoint: endpoint.to_string(),
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

impl Backend for HttpBackend {
    fn call(&self, prompt: &str, config: &LlmConfig) -> Result<BackendReply, BackendCallError> {
        let body = ChatRequest {
            model: &config.model,
            messages: [Message {
                role: "user",
                content: prompt,
            }],
            temperature: config.temperature,
            top_p: config.top_p,
            max_tokens: config.max_tokens,
        };
        let mut request = self.agent.post(&self.endpoint);
        if let Ok(key) = std::env::var("RELEVANCER_LLM_API_KEY") {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(|e| BackendCallError::Retryable {
            status: None,
            message: format!("transport: {e}"),
        })?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendCallError::Retryable {
                status: Some(status),
                message: format!("http status {status}"),
            });
        }
        if !(200..300).contains(&status) {
            return Err(BackendCallError::Rejected {
                status,
                message: format!("http status {status}"),
            });
        }
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendCallError::Fatal(format!("malformed response body: {e}")))?;
        let first = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendCallError::Fatal("response has no choices".into()))?;
        let token_counts = parsed.usage.and_then(|u| {
            Some(TokenCounts {
                prompt: u.prompt_tokens?,
                completion: u.completion_tokens?,
            })
        });
        Ok(BackendReply {
            text: first.message.content,
            token_counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{complete_with_policy, Cache, LlmError, RetryPolicy};
    use crate::testutil::{chat_body, serve_script};

    fn fast_policy() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 4,
            base_delay: std::time::Duration::from_millis(1),
            jitter: 0.25,
        }
    }

    #[test]
    fn posts_chat_request_and_reads_first_choice() {
        let (url, server) = serve_script(vec![(200, chat_body("{'rating': 'Exact'}"))]);
        let backend = HttpBackend::new(&url);
        let config = LlmConfig::new("test-model", &url);
        let reply = backend.call("the prompt", &config).unwrap();
        assert_eq!(reply.text, "{'rating': 'Exact'}");
        assert_eq!(
            reply.token_counts,
            Some(TokenCounts { prompt: 120, completion: 8 })
        );
        let bodies = server.join().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["messages"][0]["role"], "user");
        assert_eq!(sent["messages"][0]["content"], "the prompt");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["top_p"], 1.0);
    }

    #[test]
    fn rate_limit_then_server_error_then_success_retries_through() {
        let (url, server) = serve_script(vec![
            (429, "{}".into()),
            (429, "{}".into()),
            (200, chat_body("{'rating': 'Partial'}")),
        ]);
        let backend = HttpBackend::new(&url);
        let config = LlmConfig::new("m", &url);
        let cache = Cache::in_memory();
        let out = complete_with_policy(&backend, "p", &config, &cache, &fast_policy()).unwrap();
        assert_eq!(out.record.response, "{'rating': 'Partial'}");
        assert_eq!(server.join().unwrap().len(), 3);
    }

    #[test]
    fn client_error_is_rejected_not_retried() {
        let (url, server) = serve_script(vec![(400, "{}".into())]);
        let backend = HttpBackend::new(&url);
        let config = LlmConfig::new("m", &url);
        let cache = Cache::in_memory();
        let err = complete_with_policy(&backend, "p", &config, &cache, &fast_policy()).unwrap_err();
        assert!(matches!(err, LlmError::BackendRejected { status: 400, .. }));
        server.join().unwrap();
    }
}
