//! Pipeline configuration, read from a TOML file.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Provider credentials are never read from the file, only from the
//! environment variables named by `key_env`.

use crate::illustrator::{self, ImageProvider, ProceduralProvider, RemoteImageProvider};
use crate::par::Execution;
use crate::textprep::{LemmaTable, Preprocessor, StopwordList, TextprepError};
use crate::topics::{self, ChatCompletionProvider, TopicProvider};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

pub const LLM_KEY_ENV: &str = "MINDMAP_LLM_KEY";
pub const IMG_KEY_ENV: &str = "MINDMAP_IMG_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid setting {key}: {message}")]
    Invalid { key: &'static str, message: String },
    #[error(transparent)]
    Textprep(#[from] TextprepError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicBackend {
    /// TF-IDF fallback only, no network.
    #[default]
    Offline,
    Chat,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageBackend {
    #[default]
    Procedural,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicSettings {
    pub provider: TopicBackend,
    pub endpoint: Option<String>,
    pub model: String,
    pub key_env: String,
    pub timeout_s: u64,
    pub char_budget: usize,
    pub concurrency: usize,
}

impl Default for TopicSettings {
    fn default() -> Self {
        Self {
            provider: TopicBackend::Offline,
            endpoint: None,
            model: "gpt-3.5-turbo".into(),
            key_env: LLM_KEY_ENV.into(),
            timeout_s: 60,
            char_budget: topics::DEFAULT_CHAR_BUDGET,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSettings {
    pub provider: ImageBackend,
    pub endpoint: Option<String>,
    pub key_env: String,
    pub timeout_s: u64,
    pub size: u32,
    pub price_per_image: f64,
    pub concurrency: usize,
}

impl Default for ImageSettings {
    fn default() -> Self {
        Self {
            provider: ImageBackend::Procedural,
            endpoint: None,
            key_env: IMG_KEY_ENV.into(),
            timeout_s: 120,
            size: illustrator::DEFAULT_SIZE,
            price_per_image: illustrator::DEFAULT_PRICE_PER_IMAGE,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSettings {
    pub bind: String,
    /// Allowed CORS origins; `["*"]` allows any.
    pub cors_origins: Vec<String>,
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServerSettings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            cors_origins: vec!["*".into()],
            ui_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus_root: PathBuf,
    pub derived_root: PathBuf,
    /// Bundled list when unset.
    pub stopword_path: Option<PathBuf>,
    /// Bundled table when unset.
    pub lemma_path: Option<PathBuf>,
    pub min_df: usize,
    pub max_df_ratio: f64,
    pub seed: u64,
    pub residual_name: String,
    pub execution: Execution,
    pub topics: TopicSettings,
    pub images: ImageSettings,
    pub server: ServerSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus_root: PathBuf::from("corpus"),
            derived_root: PathBuf::from("derived"),
            stopword_path: None,
            lemma_path: None,
            min_df: crate::vectorizer::DEFAULT_MIN_DF,
            max_df_ratio: crate::vectorizer::DEFAULT_MAX_DF_RATIO,
            seed: 42,
            residual_name: crate::clusterer::DEFAULT_RESIDUAL_NAME.into(),
            execution: Execution::default(),
            topics: TopicSettings::default(),
            images: ImageSettings::default(),
            server: ServerSettings::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.corpus_root);
        resolve(base, &mut cfg.derived_root);
        for p in [&mut cfg.stopword_path, &mut cfg.lemma_path, &mut cfg.server.ui_dir].into_iter().flatten() {
            resolve(base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key, message: String| Err(ConfigError::Invalid { key, message });
        if !(self.max_df_ratio > 0.0 && self.max_df_ratio <= 1.0) {
            return invalid("max_df_ratio", format!("{} not in (0, 1]", self.max_df_ratio));
        }
        if self.min_df == 0 {
            return invalid("min_df", "must be at least 1".into());
        }
        if !(illustrator::MIN_SIZE..=illustrator::MAX_SIZE).contains(&self.images.size) {
            return invalid("images.size", format!("{} outside [64, 1024]", self.images.size));
        }
        if self.residual_name.trim().is_empty() {
            return invalid("residual_name", "must not be empty".into());
        }
        if self.topics.provider == TopicBackend::Chat && self.topics.endpoint.is_none() {
            return invalid("topics.endpoint", "required for the chat provider".into());
        }
        if self.images.provider == ImageBackend::Remote && self.images.endpoint.is_none() {
            return invalid("images.endpoint", "required for the remote provider".into());
        }
        Ok(())
    }

    pub fn preprocessor(&self) -> Result<Preprocessor, ConfigError> {
        let stopwords = match &self.stopword_path {
            Some(p) => StopwordList::from_file(p)?,
            None => StopwordList::bundled(),
        };
        let lemmas = match &self.lemma_path {
            Some(p) => LemmaTable::from_file(p)?,
            None => LemmaTable::bundled(),
        };
        Ok(Preprocessor::new(stopwords, lemmas))
    }

    /// `None` in offline mode.
    pub fn topic_provider(&self) -> Option<Box<dyn TopicProvider>> {
        let t = &self.topics;
        match t.provider {
            TopicBackend::Offline => None,
            TopicBackend::Chat => Some(Box::new(ChatCompletionProvider::new(
                t.endpoint.clone().unwrap_or_default(),
                t.model.clone(),
                std::env::var(&t.key_env).ok(),
                Duration::from_secs(t.timeout_s),
            ))),
        }
    }

    pub fn image_provider(&self) -> Box<dyn ImageProvider> {
        let i = &self.images;
        match i.provider {
            ImageBackend::Procedural => Box::new(ProceduralProvider),
            ImageBackend::Remote => Box::new(RemoteImageProvider::new(
                i.endpoint.clone().unwrap_or_default(),
                std::env::var(&i.key_env).ok(),
                Duration::from_secs(i.timeout_s),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_file() {
        let cfg = PipelineConfig::from_toml("", Path::new("/etc/mm/config.toml")).unwrap();
        assert_eq!(cfg.corpus_root, Path::new("/etc/mm/corpus"));
        assert_eq!(cfg.derived_root, Path::new("/etc/mm/derived"));
        assert_eq!(cfg.min_df, 2);
        assert_eq!(cfg.max_df_ratio, 0.5);
        assert_eq!(cfg.topics.provider, TopicBackend::Offline);
        assert_eq!(cfg.images.provider, ImageBackend::Procedural);
        assert_eq!(cfg.images.size, 256);
        assert!(cfg.topic_provider().is_none());
    }

    #[test]
    fn parses_full_file() {
        let text = r#"
            corpus_root = "/data/ted"
            derived_root = "out"
            min_df = 3
            max_df_ratio = 0.4
            seed = 7
            execution = "sequential"

            [topics]
            provider = "chat"
            endpoint = "http://localhost:9/v1/chat/completions"

            [images]
            size = 128

            [server]
            bind = "0.0.0.0:9000"
            ui_dir = "ui/dist"
        "#;
        let cfg = PipelineConfig::from_toml(text, Path::new("/srv/config.toml")).unwrap();
        assert_eq!(cfg.corpus_root, Path::new("/data/ted"));
        assert_eq!(cfg.derived_root, Path::new("/srv/out"));
        assert_eq!(cfg.execution, Execution::Sequential);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.server.ui_dir.as_deref(), Some(Path::new("/srv/ui/dist")));
        assert_eq!(cfg.topics.key_env, LLM_KEY_ENV);
        assert!(cfg.topic_provider().is_some());
    }

    #[test]
    fn rejects_bad_values() {
        let p = Path::new("c.toml");
        assert!(matches!(
            PipelineConfig::from_toml("max_df_ratio = 1.5", p),
            Err(ConfigError::Invalid { key: "max_df_ratio", .. })
        ));
        assert!(PipelineConfig::from_toml("[topics]\nprovider = \"chat\"", p).is_err());
        assert!(PipelineConfig::from_toml("[images]\nsize = 32", p).is_err());
        assert!(matches!(PipelineConfig::from_toml("bogus = 1", p), Err(ConfigError::Parse { .. })));
    }
}
