use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Session;
use crate::context::ContextConfig;
use crate::gateway::{
    CompletionProvider, EmbeddingProvider, Gateway, GatewayConfig, GatewayError, Tokenizer,
    WhitespaceTokenizer,
};
use crate::kb::{KbError, KnowledgeBase, DEFAULT_K};
use crate::platform::{NullAdapter, PlatformAdapter, SimulatedDesktop, SimulatedDesktopScript};
use crate::prompt::{PromptAssembler, PromptError, PromptLibrary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Retrieved chunks per question.
    pub k: usize,
    pub use_hyde: bool,
    /// Hide the dialog and restore focus after an answer is announced.
    pub auto_hide: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            use_hyde: false,
            auto_hide: true,
        }
    }
}

/// Everything needed to start an engine. Loaded from TOML by the CLI and
/// from JSON by the C interface; relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub gateway: GatewayConfig,
    pub session: SessionConfig,
    pub context: ContextConfig,
    pub kb_dir: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    /// Simulated desktop script for sessions; none means no desktop.
    pub desktop_script: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Config(_) => "config_error",
            EngineError::Gateway(e) => e.code(),
            EngineError::Kb(e) => e.code(),
            EngineError::Prompt(e) => e.code(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, EngineError> {
        toml::from_str(s).map_err(|e| EngineError::Config(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self, EngineError> {
        serde_json::from_str(s).map_err(|e| EngineError::Config(e.to_string()))
    }

    /// Reads a TOML (or `.json`) config and resolves relative paths.
    pub fn from_file(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.kb_dir);
        fix(&mut self.prompts_dir);
        fix(&mut self.desktop_script);
        fix(&mut self.gateway.mock_script);
    }
}

/// Shared, read-only engine state. Each connection gets its own
/// [`Session`]; the knowledge base is shared.
pub struct Engine {
    config: EngineConfig,
    gateway: Gateway,
    embedder: Arc<dyn EmbeddingProvider>,
    kb: Option<Arc<KnowledgeBase>>,
    prompts: Arc<PromptLibrary>,
    assembler: PromptAssembler,
    tokenizer: Arc<dyn Tokenizer>,
    desktop: Option<SimulatedDesktopScript>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("provider", &self.gateway.provider().provider_id())
            .field("embedder", &self.embedder.embedder_id())
            .field("kb_chunks", &self.kb.as_ref().map(|k| k.chunks.len()))
            .finish()
    }
}

/// Explicit components for [`Engine::from_parts`].
pub struct EngineParts {
    pub config: EngineConfig,
    pub completion: Arc<dyn CompletionProvider>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub kb: Option<KnowledgeBase>,
    pub prompts: PromptLibrary,
    pub desktop: Option<SimulatedDesktopScript>,
}

impl Engine {
    pub fn from_parts(parts: EngineParts) -> Self {
        let tokenizer: Arc<dyn Tokenizer> = Arc::new(WhitespaceTokenizer);
        let prompts = Arc::new(parts.prompts);
        let g = &parts.config.gateway;
        Self {
            gateway: Gateway::new(parts.completion, g.heartbeat_ms, g.timeout_ms),
            assembler: PromptAssembler::new(
                Arc::clone(&prompts),
                Arc::clone(&tokenizer),
                parts.config.context.budgets.question,
            ),
            prompts,
            tokenizer,
            embedder: parts.embedder,
            kb: parts.kb.map(Arc::new),
            desktop: parts.desktop,
            config: parts.config,
        }
    }

    pub fn from_config(config: EngineConfig) -> Result<Self, EngineError> {
        let completion = config.gateway.build_completion()?;
        let embedder = config.gateway.build_embedder()?;
        let kb = match &config.kb_dir {
            Some(dir) => Some(KnowledgeBase::load(dir, Some((embedder.embedder_id(), embedder.dim())))?),
            None => None,
        };
        let prompts = match &config.prompts_dir {
            Some(dir) => PromptLibrary::load_dir(dir)?,
            None => PromptLibrary::builtin(),
        };
        let desktop = match &config.desktop_script {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| EngineError::Config(format!("{}: {e}", p.display())))?;
                let script: SimulatedDesktopScript = serde_json::from_str(&text)
                    .map_err(|e| EngineError::Config(format!("{}: {e}", p.display())))?;
                script.validate().map_err(EngineError::Config)?;
                Some(script)
            }
            None => None,
        };
        Ok(Self::from_parts(EngineParts {
            config,
            completion,
            embedder,
            kb,
            prompts,
            desktop,
        }))
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.embedder
    }

    pub fn kb(&self) -> Option<&Arc<KnowledgeBase>> {
        self.kb.as_ref()
    }

    pub fn prompts(&self) -> &PromptLibrary {
        &self.prompts
    }

    pub fn assembler(&self) -> &PromptAssembler {
        &self.assembler
    }

    pub fn tokenizer(&self) -> &Arc<dyn Tokenizer> {
        &self.tokenizer
    }

    /// Knowledge-base search with this engine's embedder and provider.
    pub fn search(&self, query: &str, k: usize, use_hyde: bool) -> Result<Vec<crate::kb::RetrievalHit>, KbError> {
        let kb = self.kb.as_ref().ok_or(KbError::IndexNotLoaded)?;
        kb.search(
            query,
            k,
            use_hyde,
            self.embedder.as_ref(),
            Some(self.gateway.provider().as_ref()),
            &self.prompts,
        )
    }

    /// The adapter a new session should use: a fresh simulator over the
    /// configured script, or no desktop at all.
    pub fn default_adapter(&self) -> Arc<dyn PlatformAdapter> {
        match &self.desktop {
            Some(script) => match SimulatedDesktop::new(script.clone()) {
                Ok(sim) => Arc::new(sim),
                Err(_) => Arc::new(NullAdapter),
            },
            None => Arc::new(NullAdapter),
        }
    }

    pub fn new_session(self: &Arc<Self>, id: impl Into<String>) -> Session {
        Session::new(Arc::clone(self), self.default_adapter(), id)
    }
}
