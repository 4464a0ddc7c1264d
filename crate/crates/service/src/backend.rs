//! Profiler backends turn an utterance into lexicon features. The external
//! chat-completion backend must answer with structured hits
//! (`{"hits": [{"category", "start", "end"}]}`) that are validated against
//! the utterance; free-form model text is never turned into numbers.

use std::sync::Arc;
use std::time::Duration;

use advisor_core::risk::{DialogueEncoding, Lexicon, TokenSpan};
use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// What a backend may know about the conversation so far.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ContextDigest {
    pub session_id: String,
    pub turns: usize,
    pub risk_appetite: f64,
}

#[async_trait]
pub trait ProfilerBackend: Send + Sync {
    fn name(&self) -> &str;
    async fn encode(&self, utterance: &str, context: &ContextDigest) -> ServiceResult<DialogueEncoding>;
}

pub struct LexiconBackend {
    lexicon: Arc<Lexicon>,
}

impl LexiconBackend {
    pub fn new(lexicon: Arc<Lexicon>) -> Self {
        Self { lexicon }
    }

    pub fn encode_now(&self, utterance: &str) -> DialogueEncoding {
        self.lexicon.encode(utterance)
    }
}

#[async_trait]
impl ProfilerBackend for LexiconBackend {
    fn name(&self) -> &str {
        "lexicon"
    }

    async fn encode(&self, utterance: &str, _context: &ContextDigest) -> ServiceResult<DialogueEncoding> {
        Ok(self.encode_now(utterance))
    }
}

fn default_timeout_ms() -> u64 {
    5_000
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSettings {
    #[default]
    Lexicon,
    ChatCompletion {
        endpoint: String,
        model: String,
        /// Name of the environment variable holding a bearer token.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

impl BackendSettings {
    pub fn timeout(&self) -> Option<Duration> {
        match self {
            Self::Lexicon => None,
            Self::ChatCompletion { timeout_ms, .. } => Some(Duration::from_millis(*timeout_ms)),
        }
    }

    pub fn build(&self, lexicon: Arc<Lexicon>) -> ServiceResult<Arc<dyn ProfilerBackend>> {
        Ok(match self {
            Self::Lexicon => Arc::new(LexiconBackend::new(lexicon)),
            Self::ChatCompletion {
                endpoint,
                model,
                api_key_env,
                timeout_ms,
            } => {
                let api_key = api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
                Arc::new(ChatCompletionBackend::new(
                    endpoint.clone(),
                    model.clone(),
                    api_key,
                    Duration::from_millis(*timeout_ms),
                    lexicon,
                )?)
            }
        })
    }
}

pub struct ChatCompletionBackend {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    lexicon: Arc<Lexicon>,
}

#[derive(Debug, Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[derive(Debug, Deserialize)]
struct Hits {
    hits: Vec<Hit>,
}

#[derive(Debug, Deserialize)]
struct Hit {
    category: String,
    start: usize,
    end: usize,
}

impl ChatCompletionBackend {
    pub fn new(
        endpoint: String,
        model: String,
        api_key: Option<String>,
        timeout: Duration,
        lexicon: Arc<Lexicon>,
    ) -> ServiceResult<Self> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ServiceError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            client,
            endpoint,
            model,
            api_key,
            lexicon,
        })
    }

    fn instructions(&self) -> String {
        let cats: Vec<String> = self
            .lexicon
            .categories
            .iter()
            .map(|c| format!("{} ({} {})", c.name, if c.sign < 0 { "lowers" } else { "raises" }, c.dimension.name()))
            .collect();
        format!(
            "Find phrases in the user's message that express investment risk preferences. \
             Reply with JSON only: {{\"hits\": [{{\"category\": <name>, \"start\": <byte offset>, \"end\": <byte offset>}}]}}. \
             Allowed categories: {}.",
            cats.join(", ")
        )
    }

    /// Checks the structured reply against the utterance and the lexicon.
    pub fn parse_hits(&self, utterance: &str, content: &str) -> ServiceResult<DialogueEncoding> {
        let hits: Hits =
            serde_json::from_str(content).map_err(|e| ServiceError::Backend(format!("unstructured reply: {e}")))?;
        let mut enc = DialogueEncoding::zeros(self.lexicon.dim());
        let mut spans: Vec<TokenSpan> = Vec::new();
        for h in hits.hits {
            let feature = self
                .lexicon
                .category_index(&h.category)
                .ok_or_else(|| ServiceError::Backend(format!("unknown category `{}`", h.category)))?;
            let in_bounds = h.start < h.end
                && h.end <= utterance.len()
                && utterance.is_char_boundary(h.start)
                && utterance.is_char_boundary(h.end);
            if !in_bounds {
                return Err(ServiceError::Backend(format!("span {}..{} outside the utterance", h.start, h.end)));
            }
            if spans.iter().any(|s| h.start < s.end && s.start < h.end) {
                return Err(ServiceError::Backend(format!("overlapping span {}..{}", h.start, h.end)));
            }
            enc.feature_counts[feature] += 1.0;
            spans.push(TokenSpan {
                feature,
                category: h.category,
                start: h.start,
                end: h.end,
            });
        }
        spans.sort_by_key(|s| s.start);
        enc.token_spans = spans;
        Ok(enc)
    }
}

#[async_trait]
impl ProfilerBackend for ChatCompletionBackend {
    fn name(&self) -> &str {
        "chat_completion"
    }

    async fn encode(&self, utterance: &str, context: &ContextDigest) -> ServiceResult<DialogueEncoding> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": self.instructions()},
                {"role": "system", "content": format!("Session context: {}", serde_json::to_string(context).unwrap_or_default())},
                {"role": "user", "content": utterance},
            ],
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .and_then(|r| r.error_for_status())
            .map_err(|e| ServiceError::Backend(e.to_string()))?;
        let completion: Completion = resp.json().await.map_err(|e| ServiceError::Backend(e.to_string()))?;
        let content = completion
            .choices
            .first()
            .map(|c| c.message.content.as_str())
            .ok_or_else(|| ServiceError::Backend("completion has no choices".into()))?;
        self.parse_hits(utterance, content)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backend() -> ChatCompletionBackend {
        ChatCompletionBackend::new(
            "http://127.0.0.1:9".into(),
            "m".into(),
            None,
            Duration::from_millis(100),
            Arc::new(Lexicon::default()),
        )
        .unwrap()
    }

    #[test]
    fn valid_hits_match_the_lexicon_encoding() {
        let b = backend();
        let text = "I prefer safer assets this month";
        let enc = b
            .parse_hits(text, r#"{"hits": [{"category": "safety_seeking", "start": 9, "end": 14}]}"#)
            .unwrap();
        assert_eq!(enc, Lexicon::default().encode(text));
    }

    #[test]
    fn malformed_replies_are_rejected() {
        let b = backend();
        let text = "short";
        for bad in [
            "the user wants safety",
            r#"{"hits": [{"category": "nope", "start": 0, "end": 1}]}"#,
            r#"{"hits": [{"category": "safety_seeking", "start": 0, "end": 99}]}"#,
            r#"{"hits": [{"category": "safety_seeking", "start": 0, "end": 3}, {"category": "risk_seeking", "start": 2, "end": 4}]}"#,
        ] {
            assert!(matches!(b.parse_hits(text, bad), Err(ServiceError::Backend(_))), "{bad}");
        }
    }
}
