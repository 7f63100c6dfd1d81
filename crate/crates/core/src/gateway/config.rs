use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    CompletionProvider, EmbeddingProvider, GatewayError, HashingEmbedder, MockProvider,
    MockScript, OpenAiCompatEmbedder, OpenAiCompatProvider, HASHING_EMBEDDER_ID,
};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PriceTable {
    pub per_input_token: f64,
    pub per_output_token: f64,
}

/// Provider selection. Read from a TOML file, then overridden by
/// `STEPWISE_*` environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    /// `mock` or `openai-compat`.
    pub provider_id: String,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    /// Environment variable holding the API key for HTTP providers.
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub heartbeat_ms: u64,
    pub max_output_tokens: u32,
    pub price_table: PriceTable,
    /// Mock script fixture; relative paths resolve against the config file.
    pub mock_script: Option<PathBuf>,
    /// `test-fnv-256` or `openai-compat:<model>`.
    pub embedder_id: String,
    pub embedding_dim: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            provider_id: "mock".into(),
            endpoint: None,
            model_name: None,
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_ms: 60_000,
            heartbeat_ms: 1_000,
            max_output_tokens: 1_024,
            price_table: PriceTable::default(),
            mock_script: None,
            embedder_id: HASHING_EMBEDDER_ID.into(),
            embedding_dim: 256,
        }
    }
}

impl GatewayConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, GatewayError> {
        toml::from_str(s).map_err(|e| GatewayError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(script), Some(dir)) = (&cfg.mock_script, path.parent()) {
            if script.is_relative() {
                cfg.mock_script = Some(dir.join(script));
            }
        }
        Ok(cfg)
    }

    /// Applies overrides from `vars` (normally `std::env::vars()`).
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), GatewayError> {
        let num = |k: &str, v: &str| {
            v.parse::<u64>()
                .map_err(|_| GatewayError::Config(format!("{k}: not a number: {v}")))
        };
        for (k, v) in vars {
            match k.as_str() {
                "STEPWISE_PROVIDER_ID" => self.provider_id = v,
                "STEPWISE_ENDPOINT" => self.endpoint = Some(v),
                "STEPWISE_MODEL" => self.model_name = Some(v),
                "STEPWISE_TIMEOUT_MS" => self.timeout_ms = num(&k, &v)?,
                "STEPWISE_HEARTBEAT_MS" => self.heartbeat_ms = num(&k, &v)?,
                "STEPWISE_MOCK_SCRIPT" => self.mock_script = Some(PathBuf::from(v)),
                "STEPWISE_EMBEDDER_ID" => self.embedder_id = v,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>) -> Result<Self, GatewayError> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env).ok()
    }

    pub fn build_completion(&self) -> Result<Arc<dyn CompletionProvider>, GatewayError> {
        match self.provider_id.as_str() {
            "mock" => {
                let script = match &self.mock_script {
                    Some(p) => MockScript::from_json_file(p)?,
                    None => MockScript::default(),
                };
                Ok(Arc::new(MockProvider::new(script)))
            }
            "openai-compat" => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| GatewayError::Config("endpoint required".into()))?;
                let model = self
                    .model_name
                    .clone()
                    .ok_or_else(|| GatewayError::Config("model_name required".into()))?;
                Ok(Arc::new(OpenAiCompatProvider::new(
                    endpoint,
                    model,
                    self.api_key(),
                    self.max_output_tokens,
                    self.timeout_ms,
                )))
            }
            other => Err(GatewayError::Config(format!("unknown provider_id {other:?}"))),
        }
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn EmbeddingProvider>, GatewayError> {
        if let Some(model) = self.embedder_id.strip_prefix("openai-compat:") {
            let endpoint = self
                .endpoint
                .clone()
                .ok_or_else(|| GatewayError::Config("endpoint required".into()))?;
            return Ok(Arc::new(OpenAiCompatEmbedder::new(
                endpoint,
                model.to_owned(),
                self.api_key(),
                self.embedding_dim,
                self.timeout_ms,
            )));
        }
        match self.embedder_id.strip_prefix("test-fnv-") {
            Some(dim) => {
                let dim: usize = dim
                    .parse()
                    .map_err(|_| GatewayError::Config(format!("bad embedder id {}", self.embedder_id)))?;
                if dim == 0 {
                    return Err(GatewayError::Config("embedding dim must be positive".into()));
                }
                Ok(Arc::new(HashingEmbedder::new(dim)))
            }
            None => Err(GatewayError::Config(format!(
                "unknown embedder_id {:?}",
                self.embedder_id
            ))),
        }
    }
}
