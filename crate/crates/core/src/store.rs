//! On-disk layout of the derived store and the read-only snapshot served by
//! the API.
//!
//! ```text
//! derived/
//!   manifest.json        settings, tool version, per-stage completion times
//!   recordings.json      recordings; audio paths relative to the corpus root
//!   tokens/<id>.txt      cleaned tokens, one per line
//!   vocab.tsv            term, df
//!   vectors.json         TF-IDF model
//!   session.json         curation session
//!   categories.json      final categories
//!   topics.json          one topic per recording
//!   enrich_failures.json items the providers could not produce
//!   images/              PNG assets and their manifest.json
//!   search_index.json    search cache, rebuildable from the files above
//! ```
//!
//! Only `manifest.json` carries timestamps.

use crate::clusterer::Category;
use crate::corpus::Recording;
use crate::fsutil;
use crate::illustrator::{ImageAsset, ImageManifest, MANIFEST_FILE};
use crate::search::{build_index, Boosts, SearchError, SearchIndex};
use crate::textprep::Preprocessor;
use crate::topics::TopicAssignment;
use crate::vectorizer::TfIdfModel;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error(transparent)]
    Search(#[from] SearchError),
}

#[derive(Debug, Clone)]
pub struct StoreLayout {
    root: PathBuf,
}

impl StoreLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn recordings(&self) -> PathBuf {
        self.root.join("recordings.json")
    }
    pub fn tokens_dir(&self) -> PathBuf {
        self.root.join("tokens")
    }
    pub fn token_file(&self, id: &str) -> PathBuf {
        self.tokens_dir().join(format!("{}.txt", fsutil::file_stem_for(id)))
    }
    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.tsv")
    }
    pub fn vectors(&self) -> PathBuf {
        self.root.join("vectors.json")
    }
    pub fn session(&self) -> PathBuf {
        self.root.join("session.json")
    }
    pub fn categories(&self) -> PathBuf {
        self.root.join("categories.json")
    }
    pub fn topics(&self) -> PathBuf {
        self.root.join("topics.json")
    }
    pub fn enrich_failures(&self) -> PathBuf {
        self.root.join("enrich_failures.json")
    }
    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }
    pub fn search_index(&self) -> PathBuf {
        self.root.join("search_index.json")
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), StoreError> {
    fsutil::write_json(path, value).map_err(io_err(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    fsutil::write_atomic(path, bytes).map_err(io_err(path))
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, StoreError> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestSettings {
    pub min_df: usize,
    pub max_df_ratio: f64,
    pub stopwords_sha256: String,
    pub lemmas_sha256: String,
    pub residual_name: String,
    pub topic_provider: String,
    pub image_provider: String,
    pub image_size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStamp {
    pub completed_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub idf_variant: String,
    pub settings: ManifestSettings,
    pub stages: BTreeMap<String, StageStamp>,
}

impl StoreManifest {
    pub fn new(seed: u64, settings: ManifestSettings) -> Self {
        Self {
            format_version: STORE_FORMAT_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            seed,
            idf_variant: crate::vectorizer::IDF_VARIANT.to_string(),
            settings,
            stages: BTreeMap::new(),
        }
    }

    /// Loads the existing manifest, refreshes settings and stamps `stage`.
    pub fn record_stage(
        layout: &StoreLayout,
        seed: u64,
        settings: ManifestSettings,
        stage: &str,
    ) -> Result<StoreManifest, StoreError> {
        let mut m = read_optional::<StoreManifest>(&layout.manifest())?.unwrap_or_else(|| Self::new(seed, settings.clone()));
        m.tool_version = TOOL_VERSION.to_string();
        m.seed = seed;
        m.settings = settings;
        m.stages.insert(
            stage.to_string(),
            StageStamp {
                completed_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            },
        );
        write_json(&layout.manifest(), &m)?;
        Ok(m)
    }
}

pub fn read_tokens(layout: &StoreLayout, id: &str) -> Result<Vec<String>, StoreError> {
    let path = layout.token_file(id);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
}

pub fn write_tokens(layout: &StoreLayout, id: &str, tokens: &[String]) -> Result<(), StoreError> {
    let mut text = tokens.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    write_bytes(&layout.token_file(id), text.as_bytes())
}

/// Everything the API serves, loaded once.
#[derive(Debug, Clone)]
pub struct StoreSnapshot {
    /// Audio paths are absolute.
    pub recordings: BTreeMap<String, Recording>,
    pub categories: Vec<Category>,
    pub topics: BTreeMap<String, TopicAssignment>,
    pub images: ImageManifest,
    pub images_dir: PathBuf,
    pub index: SearchIndex,
    pub prep: Preprocessor,
}

impl StoreSnapshot {
    /// Requires `recordings.json` and `categories.json`. Topics and images
    /// are optional. The search index is read from `search_index.json` when
    /// it matches the recordings and rebuilt from `vectors.json` otherwise.
    pub fn load(derived_root: &Path, corpus_root: &Path, prep: Preprocessor) -> Result<Self, StoreError> {
        let layout = StoreLayout::new(derived_root);
        let recordings: Vec<Recording> = read_json(&layout.recordings())?;
        let categories: Vec<Category> = read_json(&layout.categories())?;
        let topics: Vec<TopicAssignment> = read_optional(&layout.topics())?.unwrap_or_default();
        let images: ImageManifest = read_optional(&layout.images_dir().join(MANIFEST_FILE))?.unwrap_or_default();

        let ids: BTreeSet<&str> = recordings.iter().map(|r| r.id.as_str()).collect();
        let cached: Option<SearchIndex> = read_optional(&layout.search_index())?;
        let index = match cached {
            Some(idx) if idx.doc_norms.keys().map(String::as_str).eq(ids.iter().copied()) => idx,
            _ => {
                let model = TfIdfModel::from_json(&std::fs::read(layout.vectors()).map_err(io_err(&layout.vectors()))?)
                    .map_err(|e| StoreError::Malformed {
                        path: layout.vectors(),
                        message: e.to_string(),
                    })?;
                build_index(&model, &recordings, &topics, &categories, &prep, Boosts::default())?
            }
        };

        let recordings = recordings
            .into_iter()
            .map(|mut r| {
                r.audio_path = r.audio_path.map(|p| corpus_root.join(p));
                (r.id.clone(), r)
            })
            .collect();
        Ok(Self {
            recordings,
            categories,
            topics: topics.into_iter().map(|t| (t.recording_id.clone(), t)).collect(),
            images,
            images_dir: layout.images_dir(),
            index,
            prep,
        })
    }

    pub fn recording_image(&self, id: &str) -> Option<&ImageAsset> {
        self.present(self.images.assets.get(id)?)
    }

    pub fn category_image(&self, name: &str) -> Option<&ImageAsset> {
        self.present(self.images.assets.get(&format!("category:{name}"))?)
    }

    /// Asset by file name, as used in illustration URLs.
    pub fn image_by_file(&self, file: &str) -> Option<&ImageAsset> {
        self.images.assets.values().find(|a| a.file == file).and_then(|a| self.present(a))
    }

    fn present<'a>(&self, asset: &'a ImageAsset) -> Option<&'a ImageAsset> {
        self.images_dir.join(&asset.file).is_file().then_some(asset)
    }

    pub fn category_of(&self, id: &str) -> Option<&str> {
        self.index.category_of(id)
    }
}
