//! Batch stages behind the `mindmap` command: ingest, vectorize, curate and
//! enrich. Each stage reads its inputs from the derived store and writes its
//! outputs back atomically.

use crate::clusterer::{
    self, accept, default_k, finalize, run_round, start_session, Category, ClusterError, CurationSession,
    RoundProposal, Selection,
};
use crate::config::{ConfigError, PipelineConfig};
use crate::corpus::{load_corpus_with, CorpusError, Recording};
use crate::illustrator::{
    cost_report, render_request, CostReport, IllustratorError, ImageProvider, ImageProviderKind, ImageRequest,
    ImageStore,
};
use crate::par;
use crate::provider::RetryPolicy;
use crate::search::{build_index, Boosts, SearchError};
use crate::store::{self, ManifestSettings, StoreError, StoreLayout, StoreManifest};
use crate::textprep::{Preprocessor, BUNDLED_LEMMAS, BUNDLED_STOPWORDS};
use crate::topics::{extract_topic, TopicAssignment, TopicJob, TopicProvider, TopicSource};
use crate::vectorizer::{build_vocabulary, tfidf_rows_with, CleanDocument, TfIdfModel, VectorizerError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Vectorizer(#[from] VectorizerError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Illustrator(#[from] IllustratorError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("{missing} not found; run `mindmap {stage}` first")]
    MissingStage { missing: String, stage: &'static str },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn require(path: &std::path::Path, stage: &'static str) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingStage {
            missing: path.display().to_string(),
            stage,
        })
    }
}

fn resource_digest(path: &Option<std::path::PathBuf>, bundled: &str) -> Result<String, PipelineError> {
    Ok(match path {
        Some(p) => crate::fsutil::sha256_hex(&std::fs::read(p)?),
        None => crate::fsutil::sha256_hex(bundled.as_bytes()),
    })
}

/// Settings recorded in the manifest. Paths are left out so stores built
/// from the same inputs in different places stay identical.
pub fn manifest_settings(cfg: &PipelineConfig) -> Result<ManifestSettings, PipelineError> {
    Ok(ManifestSettings {
        min_df: cfg.min_df,
        max_df_ratio: cfg.max_df_ratio,
        stopwords_sha256: resource_digest(&cfg.stopword_path, BUNDLED_STOPWORDS)?,
        lemmas_sha256: resource_digest(&cfg.lemma_path, BUNDLED_LEMMAS)?,
        residual_name: cfg.residual_name.clone(),
        topic_provider: match &cfg.topics.endpoint {
            Some(e) if cfg.topics.provider == crate::config::TopicBackend::Chat => format!("chat:{}@{e}", cfg.topics.model),
            _ => "tfidf_fallback".into(),
        },
        image_provider: match &cfg.images.endpoint {
            Some(e) if cfg.images.provider == crate::config::ImageBackend::Remote => format!("remote:{e}"),
            _ => "procedural".into(),
        },
        image_size: cfg.images.size,
    })
}

fn stamp(cfg: &PipelineConfig, layout: &StoreLayout, stage: &str) -> Result<(), PipelineError> {
    StoreManifest::record_stage(layout, cfg.seed, manifest_settings(cfg)?, stage)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub recordings: usize,
    pub with_audio: usize,
    pub tokens: usize,
}

pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<IngestReport, PipelineError> {
    let prep = cfg.preprocessor()?;
    let corpus = load_corpus_with(&cfg.corpus_root, cfg.execution)?;
    let layout = StoreLayout::new(&cfg.derived_root);
    std::fs::create_dir_all(layout.tokens_dir())?;

    let tokens = par::map(cfg.execution, &corpus.recordings, |r| prep.clean(&r.raw_transcript));
    let recordings: Vec<Recording> = corpus
        .recordings
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.audio_path = r
                .audio_path
                .map(|p| p.strip_prefix(&corpus.root).map(|rel| rel.to_path_buf()).unwrap_or(p));
            r
        })
        .collect();

    let mut keep = HashSet::new();
    for (r, toks) in recordings.iter().zip(&tokens) {
        store::write_tokens(&layout, &r.id, toks)?;
        keep.insert(layout.token_file(&r.id));
    }
    for entry in std::fs::read_dir(layout.tokens_dir())? {
        let path = entry?.path();
        if !keep.contains(&path) {
            std::fs::remove_file(path)?;
        }
    }
    store::write_json(&layout.recordings(), &recordings)?;
    stamp(cfg, &layout, "ingest")?;
    Ok(IngestReport {
        recordings: recordings.len(),
        with_audio: recordings.iter().filter(|r| r.audio_path.is_some()).count(),
        tokens: tokens.iter().map(Vec::len).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VectorizeReport {
    pub documents: usize,
    pub terms: usize,
}

pub fn cmd_vectorize(cfg: &PipelineConfig) -> Result<VectorizeReport, PipelineError> {
    let layout = StoreLayout::new(&cfg.derived_root);
    require(&layout.recordings(), "ingest")?;
    let recordings: Vec<Recording> = store::read_json(&layout.recordings())?;
    let docs = recordings
        .iter()
        .map(|r| {
            Ok(CleanDocument {
                recording_id: r.id.clone(),
                tokens: store::read_tokens(&layout, &r.id)?,
            })
        })
        .collect::<Result<Vec<_>, StoreError>>()?;
    let vocab = build_vocabulary(&docs, cfg.min_df, cfg.max_df_ratio)?;
    let model = tfidf_rows_with(&docs, &vocab, cfg.execution)?;
    store::write_bytes(&layout.vocab(), vocab.to_tsv().as_bytes())?;
    store::write_bytes(&layout.vectors(), &model.to_json())?;
    stamp(cfg, &layout, "vectorize")?;
    Ok(VectorizeReport {
        documents: docs.len(),
        terms: vocab.len(),
    })
}

pub fn load_model(layout: &StoreLayout) -> Result<TfIdfModel, PipelineError> {
    require(&layout.vectors(), "vectorize")?;
    let bytes = std::fs::read(layout.vectors())?;
    TfIdfModel::from_json(&bytes).map_err(|e| {
        PipelineError::Store(StoreError::Malformed {
            path: layout.vectors(),
            message: e.to_string(),
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Quit,
}

/// State of an interactive curation run. Commands:
///
/// * `round [k]` proposes clusters for the unassigned recordings
/// * `show <cluster>` lists members with titles and transcript files
/// * `keep <cluster> as <name>` stages a cluster as a category
/// * `commit` applies staged selections and saves the session
/// * `finish [name]` writes `categories.json`, the rest goes to `name`
/// * `quit` saves the session and exits
pub struct Curator {
    layout: StoreLayout,
    model: TfIdfModel,
    recordings: BTreeMap<String, Recording>,
    session: CurationSession,
    proposal: Option<RoundProposal>,
    staged: Vec<Selection>,
    cfg: PipelineConfig,
    finished: Option<Vec<Category>>,
}

impl Curator {
    /// Resumes `session.json` when present, otherwise starts a new session.
    pub fn open(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let layout = StoreLayout::new(&cfg.derived_root);
        let model = load_model(&layout)?;
        let recordings: Vec<Recording> = store::read_json(&layout.recordings())?;
        let session = if layout.session().exists() {
            CurationSession::load(&layout.session())?
        } else {
            let s = start_session(model.ids(), cfg.seed)?;
            s.save(&layout.session())?;
            s
        };
        Ok(Self {
            layout,
            model,
            recordings: recordings.into_iter().map(|r| (r.id.clone(), r)).collect(),
            session,
            proposal: None,
            staged: Vec::new(),
            cfg: cfg.clone(),
            finished: None,
        })
    }

    pub fn session(&self) -> &CurationSession {
        &self.session
    }

    pub fn proposal(&self) -> Option<&RoundProposal> {
        self.proposal.as_ref()
    }

    pub fn staged(&self) -> &[Selection] {
        &self.staged
    }

    /// Categories written by the last `finish`.
    pub fn finished(&self) -> Option<&[Category]> {
        self.finished.as_deref()
    }

    /// Reads commands until `quit` or end of input. The session is saved on
    /// the way out either way.
    pub fn run<R: BufRead, W: Write>(&mut self, input: R, out: &mut W) -> Result<(), PipelineError> {
        writeln!(
            out,
            "session round {}: {} unassigned, {} categories accepted",
            self.session.round,
            self.session.unassigned.len(),
            self.session.accepted.len()
        )?;
        let mut lines = input.lines();
        loop {
            write!(out, "mindmap> ")?;
            out.flush()?;
            let Some(line) = lines.next().transpose()? else {
                writeln!(out)?;
                self.quit(out)?;
                return Ok(());
            };
            if self.execute(&line, out)? == Flow::Quit {
                return Ok(());
            }
        }
    }

    /// Runs one command. Bad input prints an `error:` line and leaves the
    /// state unchanged.
    pub fn execute<W: Write>(&mut self, line: &str, out: &mut W) -> Result<Flow, PipelineError> {
        let line = line.trim();
        let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let result = match cmd {
            "" => Ok(()),
            "round" => self.round(rest, out),
            "show" => self.show(rest, out),
            "keep" => self.keep(rest, out),
            "commit" => self.commit(out),
            "finish" => self.finish(rest, out),
            "help" => {
                writeln!(out, "commands: round [k] | show <cluster> | keep <cluster> as <name> | commit | finish [name] | quit")?;
                Ok(())
            }
            "quit" | "exit" => {
                self.quit(out)?;
                return Ok(Flow::Quit);
            }
            other => Err(format!("unknown command {other:?}; try `help`")),
        };
        if let Err(msg) = result {
            writeln!(out, "error: {msg}")?;
        }
        Ok(Flow::Continue)
    }

    fn round<W: Write>(&mut self, arg: &str, out: &mut W) -> Result<(), String> {
        let n = self.session.unassigned.len();
        if n == 0 {
            return Err("nothing left to cluster; use `finish`".into());
        }
        let k = if arg.is_empty() {
            default_k(n)
        } else {
            arg.parse::<usize>().map_err(|_| format!("bad k {arg:?}"))?
        };
        let proposal = run_round(&self.session, &self.model, k, self.session.round_seed(), self.cfg.execution)
            .map_err(|e| e.to_string())?;
        let mut text = format!(
            "round {}: k={} seed={} inertia={:.4}\n",
            proposal.round, proposal.k, proposal.seed, proposal.inertia
        );
        for c in &proposal.clusters {
            let flag = if c.low_confidence { " (low confidence)" } else { "" };
            text.push_str(&format!(
                "  [{}] {} recordings: {}{flag}\n",
                c.id,
                c.members.len(),
                c.suggested_terms.join(", ")
            ));
        }
        out.write_all(text.as_bytes()).map_err(|e| e.to_string())?;
        self.proposal = Some(proposal);
        self.staged.clear();
        Ok(())
    }

    fn cluster_arg(&self, arg: &str) -> Result<&clusterer::ProposedCluster, String> {
        let proposal = self.proposal.as_ref().ok_or("no proposal; run `round` first")?;
        let id: usize = arg.parse().map_err(|_| format!("bad cluster id {arg:?}"))?;
        proposal
            .cluster(id)
            .ok_or_else(|| format!("no cluster {id}; this round has {}", proposal.clusters.len()))
    }

    fn show<W: Write>(&self, arg: &str, out: &mut W) -> Result<(), String> {
        let cluster = self.cluster_arg(arg)?;
        let mut text = format!("cluster {}: {}\n", cluster.id, cluster.suggested_terms.join(", "));
        for id in &cluster.members {
            match self.recordings.get(id) {
                Some(r) => text.push_str(&format!("  {id}  {}  ({})\n", r.title, r.source_file)),
                None => text.push_str(&format!("  {id}\n")),
            }
        }
        out.write_all(text.as_bytes()).map_err(|e| e.to_string())
    }

    fn keep<W: Write>(&mut self, arg: &str, out: &mut W) -> Result<(), String> {
        let (id, name) = arg.split_once(" as ").ok_or("usage: keep <cluster> as <name>")?;
        let (id, name) = (id.trim(), name.trim());
        let cluster = self.cluster_arg(id)?;
        let cid = cluster.id;
        if cluster.members.is_empty() {
            return Err(format!("cluster {cid} is empty"));
        }
        if name.is_empty() {
            return Err("category name must not be empty".into());
        }
        if self.staged.iter().any(|s| s.cluster == cid) {
            return Err(format!("cluster {cid} is already staged"));
        }
        let lower = name.to_lowercase();
        let taken = self.session.accepted.iter().map(|c| &c.name).chain(self.staged.iter().map(|s| &s.name));
        if taken.into_iter().any(|n| n.to_lowercase() == lower) {
            return Err(format!("category name {name:?} already in use"));
        }
        writeln!(out, "staged cluster {cid} as {name}").map_err(|e| e.to_string())?;
        self.staged.push(Selection::new(cid, name));
        Ok(())
    }

    fn commit<W: Write>(&mut self, out: &mut W) -> Result<(), String> {
        let proposal = self.proposal.as_ref().ok_or("no proposal; run `round` first")?;
        let next = accept(&self.session, proposal, &self.staged).map_err(|e| e.to_string())?;
        next.save(&self.layout.session()).map_err(|e| e.to_string())?;
        writeln!(
            out,
            "committed {} categories; {} recordings unassigned",
            self.staged.len(),
            next.unassigned.len()
        )
        .map_err(|e| e.to_string())?;
        self.session = next;
        self.proposal = None;
        self.staged.clear();
        Ok(())
    }

    fn finish<W: Write>(&mut self, arg: &str, out: &mut W) -> Result<(), String> {
        if !self.staged.is_empty() {
            return Err("staged selections pending; `commit` them first".into());
        }
        let residual = if arg.is_empty() { self.cfg.residual_name.as_str() } else { arg };
        let categories = finalize(&self.session, residual).map_err(|e| e.to_string())?;
        let save = || -> Result<(), PipelineError> {
            store::write_json(&self.layout.categories(), &categories)?;
            self.session.save(&self.layout.session())?;
            stamp(&self.cfg, &self.layout, "curate")
        };
        save().map_err(|e| e.to_string())?;
        writeln!(out, "wrote {} categories", categories.len()).map_err(|e| e.to_string())?;
        for c in &categories {
            writeln!(out, "  {} ({})", c.name, c.member_ids.len()).map_err(|e| e.to_string())?;
        }
        self.finished = Some(categories);
        Ok(())
    }

    fn quit<W: Write>(&mut self, out: &mut W) -> Result<(), PipelineError> {
        self.session.save(&self.layout.session())?;
        if !self.staged.is_empty() {
            writeln!(out, "discarding {} uncommitted selections", self.staged.len())?;
        }
        writeln!(out, "session saved")?;
        Ok(())
    }
}

/// Runs a curation script (one command per line) to completion.
pub fn cmd_curate<R: BufRead, W: Write>(cfg: &PipelineConfig, input: R, out: &mut W) -> Result<Curator, PipelineError> {
    let mut curator = Curator::open(cfg)?;
    curator.run(input, out)?;
    Ok(curator)
}

pub struct EnrichProviders {
    /// `None` keeps topics offline.
    pub topic: Option<Box<dyn TopicProvider>>,
    pub image: Box<dyn ImageProvider>,
    pub retry: RetryPolicy,
}

impl EnrichProviders {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            topic: cfg.topic_provider(),
            image: cfg.image_provider(),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichFailure {
    pub target: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnrichReport {
    pub topics_llm: usize,
    pub topics_fallback: usize,
    pub images_generated: usize,
    pub images_cached: usize,
    pub failures: Vec<EnrichFailure>,
    pub cost: Option<CostReport>,
}

/// Topics and illustrations for every recording and category, then the
/// search index. Item failures are reported, not fatal.
pub fn cmd_enrich(cfg: &PipelineConfig, providers: &EnrichProviders) -> Result<EnrichReport, PipelineError> {
    let layout = StoreLayout::new(&cfg.derived_root);
    let prep: Preprocessor = cfg.preprocessor()?;
    let model = load_model(&layout)?;
    require(&layout.categories(), "curate")?;
    let recordings: Vec<Recording> = store::read_json(&layout.recordings())?;
    let categories: Vec<Category> = store::read_json(&layout.categories())?;

    let empty = crate::vectorizer::SparseVector::default();
    let topics: Vec<TopicAssignment> =
        par::map_bounded(cfg.execution, cfg.topics.concurrency, &recordings, |r| {
            let job = TopicJob {
                recording_id: &r.id,
                transcript: &r.raw_transcript,
                vector: model.row(&r.id).unwrap_or(&empty),
            };
            extract_topic(&job, &model.vocabulary, providers.topic.as_deref(), &providers.retry, cfg.topics.char_budget)
        });
    store::write_json(&layout.topics(), &topics)?;

    let size = cfg.images.size;
    let mut requests: Vec<ImageRequest> = topics
        .iter()
        .map(|t| ImageRequest::for_recording(&t.recording_id, &t.topic, size))
        .collect();
    requests.extend(categories.iter().map(|c| ImageRequest::for_category(&c.name, size)));

    let image = providers.image.as_ref();
    let mut images = ImageStore::open(&layout.images_dir())?;
    let mut keep = BTreeSet::new();
    let mut misses = Vec::new();
    let mut cached = 0;
    for req in requests {
        if images.lookup(&req, image.name()).is_some() {
            keep.insert(req.target.key());
            cached += 1;
        } else {
            misses.push(req);
        }
    }
    let rendered = par::map_bounded(cfg.execution, cfg.images.concurrency, &misses, |req| {
        render_request(req, image, &providers.retry)
    });
    let mut failures = Vec::new();
    let mut generated = 0;
    for (req, result) in misses.iter().zip(rendered) {
        match result.and_then(|png| images.insert(req, image, &png)) {
            Ok(_) => {
                keep.insert(req.target.key());
                generated += 1;
            }
            Err(e) => {
                log::warn!("illustration for {} failed: {e}", req.target.key());
                failures.push(EnrichFailure {
                    target: req.target.key(),
                    error: e.to_string(),
                });
            }
        }
    }
    images.retain(&keep)?;
    images.save()?;
    store::write_json(&layout.enrich_failures(), &failures)?;

    let index = build_index(&model, &recordings, &topics, &categories, &prep, Boosts::default())?;
    store::write_json(&layout.search_index(), &index)?;
    stamp(cfg, &layout, "enrich")?;

    let llm = topics.iter().filter(|t| t.provider == TopicSource::Llm).count();
    Ok(EnrichReport {
        topics_llm: llm,
        topics_fallback: topics.len() - llm,
        images_generated: generated,
        images_cached: cached,
        failures,
        cost: (image.kind() == ImageProviderKind::Remote).then(|| cost_report(generated, cfg.images.price_per_image)),
    })
}
