//! Thin adapters for OpenAI-compatible HTTP endpoints
//! (`/chat/completions` and `/embeddings`).

use std::time::{Duration, Instant};

use base64::Engine as _;
use serde_json::{json, Value};

use super::{
    CompletionProvider, Embedding, EmbeddingProvider, GatewayError, ModelRequest,
    ProviderCapabilities, ProviderReply, Usage,
};
use crate::prompt::PromptPart;

fn agent(timeout_ms: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms.max(1))))
        .build()
        .into()
}

fn post(agent: &ureq::Agent, url: &str, key: Option<&str>, body: &Value) -> Result<Value, GatewayError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(k) = key {
        req = req.header("Authorization", &format!("Bearer {k}"));
    }
    let mut resp = req
        .send(body.to_string())
        .map_err(|e| match e {
            ureq::Error::Timeout(_) => GatewayError::Timeout,
            other => GatewayError::Provider(other.to_string()),
        })?;
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| GatewayError::Provider(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| GatewayError::Provider(format!("bad response body: {e}")))
}

fn join(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

pub struct OpenAiCompatProvider {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    max_output_tokens: u32,
    agent: ureq::Agent,
    id: String,
}

impl std::fmt::Debug for OpenAiCompatProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiCompatProvider")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl OpenAiCompatProvider {
    pub fn new(
        endpoint: String,
        model: String,
        api_key: Option<String>,
        max_output_tokens: u32,
        timeout_ms: u64,
    ) -> Self {
        Self {
            id: format!("openai-compat:{model}"),
            endpoint,
            model,
            api_key,
            max_output_tokens,
            agent: agent(timeout_ms),
        }
    }

    pub fn request_body(&self, request: &ModelRequest) -> Result<Value, GatewayError> {
        let mut content = Vec::new();
        for part in &request.prompt.user_parts {
            match part {
                PromptPart::Text(t) => content.push(json!({"type": "text", "text": t})),
                PromptPart::Image(shot) => {
                    let png = shot
                        .encode_png()
                        .map_err(|e| GatewayError::Provider(format!("png encode: {e}")))?;
                    let url = format!(
                        "data:image/png;base64,{}",
                        base64::engine::general_purpose::STANDARD.encode(png)
                    );
                    content.push(json!({"type": "image_url", "image_url": {"url": url}}));
                }
            }
        }
        Ok(json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.prompt.system},
                {"role": "user", "content": content},
            ],
            "max_completion_tokens": request.max_output_tokens.min(self.max_output_tokens),
        }))
    }
}

impl CompletionProvider for OpenAiCompatProvider {
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
        let body = self.request_body(request)?;
        let started = Instant::now();
        let v = post(
            &self.agent,
            &join(&self.endpoint, "chat/completions"),
            self.api_key.as_deref(),
            &body,
        )?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::Provider("response has no message content".into()))?
            .to_owned();
        Ok(ProviderReply {
            text,
            usage: Usage {
                input_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
                output_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            },
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

pub struct OpenAiCompatEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
    agent: ureq::Agent,
    id: String,
}

impl std::fmt::Debug for OpenAiCompatEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiCompatEmbedder")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl OpenAiCompatEmbedder {
    pub fn new(endpoint: String, model: String, api_key: Option<String>, dim: usize, timeout_ms: u64) -> Self {
        Self {
            id: format!("openai-compat:{model}"),
            endpoint,
            model,
            api_key,
            dim,
            agent: agent(timeout_ms),
        }
    }
}

impl EmbeddingProvider for OpenAiCompatEmbedder {
    fn embedder_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, GatewayError> {
        let non_empty: Vec<&str> = texts.iter().copied().filter(|t| !t.trim().is_empty()).collect();
        let mut fetched = Vec::with_capacity(non_empty.len());
        if !non_empty.is_empty() {
            let v = post(
                &self.agent,
                &join(&self.endpoint, "embeddings"),
                self.api_key.as_deref(),
                &json!({"model": self.model, "input": non_empty, "dimensions": self.dim}),
            )?;
            let data = v["data"]
                .as_array()
                .ok_or_else(|| GatewayError::Provider("embedding response has no data".into()))?;
            for item in data {
                let values: Vec<f32> = item["embedding"]
                    .as_array()
                    .ok_or_else(|| GatewayError::Provider("embedding missing".into()))?
                    .iter()
                    .map(|x| x.as_f64().unwrap_or(0.0) as f32)
                    .collect();
                if values.len() != self.dim {
                    return Err(GatewayError::Provider(format!(
                        "expected dim {}, got {}",
                        self.dim,
                        values.len()
                    )));
                }
                let mut e = Embedding(values);
                e.normalize();
                fetched.push(e);
            }
            if fetched.len() != non_empty.len() {
                return Err(GatewayError::Provider("embedding count mismatch".into()));
            }
        }
        let mut fetched = fetched.into_iter();
        Ok(texts
            .iter()
            .map(|t| {
                if t.trim().is_empty() {
                    Embedding::zeros(self.dim)
                } else {
                    fetched.next().unwrap_or_else(|| Embedding::zeros(self.dim))
                }
            })
            .collect())
    }
}
