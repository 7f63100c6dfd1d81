use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    CompletionProvider, GatewayError, ModelRequest, ProviderCapabilities, ProviderReply, Tokenizer,
    Usage, WhitespaceTokenizer,
};

/// Substring condition over the serialized prompt. A list matches only when
/// every entry is present; an empty list matches anything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Matcher {
    One(String),
    All(Vec<String>),
}

impl Default for Matcher {
    fn default() -> Self {
        Matcher::All(Vec::new())
    }
}

impl Matcher {
    pub fn matches(&self, haystack: &str) -> bool {
        match self {
            Matcher::One(s) => haystack.contains(s.as_str()),
            Matcher::All(all) => all.iter().all(|s| haystack.contains(s.as_str())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match", default)]
    pub matcher: Matcher,
    #[serde(default)]
    pub response: String,
    #[serde(default)]
    pub latency_ms: u64,
    /// When set, the call fails with this provider error instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MockRule {
    pub fn fallback(response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::default(),
            response: response.into(),
            latency_ms: 0,
            error: None,
        }
    }
}

/// Ordered rule list; the first matching rule answers, otherwise `default`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default = "empty_fallback")]
    pub default: MockRule,
    /// Sleep for the scripted latency instead of only reporting it.
    #[serde(default)]
    pub realtime: bool,
    /// Flat token charge per attached image.
    #[serde(default)]
    pub image_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_id: Option<String>,
}

fn empty_fallback() -> MockRule {
    MockRule::fallback("")
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            default: empty_fallback(),
            realtime: false,
            image_tokens: 0,
            provider_id: None,
        }
    }
}

impl MockScript {
    pub fn from_json_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }

    pub fn select(&self, prompt: &str) -> &MockRule {
        self.rules
            .iter()
            .find(|r| r.matcher.matches(prompt))
            .unwrap_or(&self.default)
    }
}

/// Deterministic scripted completion provider. Usage is counted with the
/// whitespace tokenizer over the serialized prompt and the response text.
#[derive(Debug, Clone)]
pub struct MockProvider {
    script: MockScript,
    id: String,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        let id = script.provider_id.clone().unwrap_or_else(|| "mock".to_owned());
        Self { script, id }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl CompletionProvider for MockProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> ProviderCapabilities {
        ProviderCapabilities {
            supports_images: true,
            embedding_dim: None,
        }
    }

    fn complete(&self, request: &ModelRequest) -> Result<ProviderReply, GatewayError> {
        let prompt = request.prompt.serialized_text();
        let rule = self.script.select(&prompt);
        if self.script.realtime && rule.latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(rule.latency_ms));
        }
        if let Some(err) = &rule.error {
            return Err(GatewayError::Provider(err.clone()));
        }
        let tok = WhitespaceTokenizer;
        let images = request.prompt.image_count() as u64;
        Ok(ProviderReply {
            text: rule.response.clone(),
            usage: Usage {
                input_tokens: tok.count_tokens(&prompt) as u64 + images * self.script.image_tokens,
                output_tokens: tok.count_tokens(&rule.response) as u64,
            },
            latency_ms: rule.latency_ms,
        })
    }
}
