//! Synthetic corpora and derived stores for demos and tests.
//!
//! Stores are produced by the real pipeline: STM files and sidecars are
//! written to a corpus directory, then ingest, vectorize and enrich run with
//! offline providers. Only curation is replaced by writing the category
//! assignment directly.

use crate::clusterer::Category;
use crate::config::PipelineConfig;
use crate::pipeline::{cmd_enrich, cmd_ingest, cmd_vectorize, EnrichProviders, EnrichReport, PipelineError};
use crate::provider::RetryPolicy;
use crate::store::{self, StoreLayout};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// The 20 largest categories reported for the TED collection.
pub const CATEGORY_SIZES: [(&str, usize); 20] = [
    ("Computer Science", 44),
    ("Climate", 42),
    ("Health", 39),
    ("Studying and Learning", 36),
    ("Brain", 36),
    ("Music", 33),
    ("World", 33),
    ("Technology", 32),
    ("Cancer", 28),
    ("Psychology", 28),
    ("Food", 26),
    ("School", 26),
    ("Robotics", 24),
    ("Linguistics", 24),
    ("Book", 24),
    ("Genetics", 23),
    ("Africa", 23),
    ("Video", 23),
    ("Insects", 22),
    ("Poetry", 21),
];

/// Size of the audio file attached to the first recording of each
/// fixture category.
pub const FIXTURE_AUDIO_BYTES: usize = 1000;

/// The 60-talk corpus with six planted topics shipped with this crate.
pub fn planted60_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/planted60")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureRecording {
    pub id: String,
    pub speaker: String,
    pub title: String,
    pub transcript: String,
    pub audio: Option<Vec<u8>>,
}

/// Letters-only pseudo-word, distinct for distinct `(a, b)`.
pub fn pseudo_word(a: usize, b: usize) -> String {
    let letter = |n: usize| (b'a' + (n % 26) as u8) as char;
    [letter(a / 26), letter(a), letter(b / 26), letter(b)].iter().fold(String::from("q"), |mut s, c| {
        s.push(*c);
        s
    })
}

/// Writes `stm/`, `audio/` and `metadata.tsv` under `corpus_root`.
pub fn write_corpus(corpus_root: &Path, recordings: &[FixtureRecording]) -> std::io::Result<()> {
    std::fs::create_dir_all(corpus_root.join("stm"))?;
    let mut meta = String::from("id\tspeaker\ttitle\n");
    for r in recordings {
        let stm = format!(
            ";; synthetic fixture\n{id} 1 {id} 0.00 30.00 <o,f0,male> {}\n",
            r.transcript,
            id = r.id
        );
        std::fs::write(corpus_root.join("stm").join(format!("{}.stm", r.id)), stm)?;
        if let Some(bytes) = &r.audio {
            std::fs::create_dir_all(corpus_root.join("audio"))?;
            std::fs::write(corpus_root.join("audio").join(format!("{}.wav", r.id)), bytes)?;
        }
        let _ = writeln!(meta, "{}\t{}\t{}", r.id, r.speaker, r.title);
    }
    std::fs::write(corpus_root.join("metadata.tsv"), meta)
}

/// Runs ingest, vectorize, the given category assignment and an offline
/// enrich over `recordings`.
pub fn build_store(
    cfg: &PipelineConfig,
    recordings: &[FixtureRecording],
    categories: &[(String, Vec<String>)],
) -> Result<EnrichReport, PipelineError> {
    write_corpus(&cfg.corpus_root, recordings)?;
    cmd_ingest(cfg)?;
    cmd_vectorize(cfg)?;
    let cats: Vec<Category> = categories
        .iter()
        .map(|(name, ids)| Category {
            name: name.clone(),
            member_ids: ids.iter().cloned().collect::<BTreeSet<_>>(),
            suggested_terms: Vec::new(),
            origin_round: 0,
        })
        .collect();
    store::write_json(&StoreLayout::new(&cfg.derived_root).categories(), &cats)?;
    let providers = EnrichProviders {
        topic: None,
        image: cfg.image_provider(),
        retry: RetryPolicy::no_wait(1),
    };
    cmd_enrich(cfg, &providers)
}

/// Offline config rooted at `dir` with `corpus/` and `derived/` below it.
pub fn offline_config(dir: &Path, image_size: u32) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        corpus_root: dir.join("corpus"),
        derived_root: dir.join("derived"),
        ..PipelineConfig::default()
    };
    cfg.images.size = image_size;
    cfg
}

pub fn sized_category_recordings() -> (Vec<FixtureRecording>, Vec<(String, Vec<String>)>) {
    let mut recordings = Vec::new();
    let mut categories = Vec::new();
    for (ci, (name, count)) in CATEGORY_SIZES.iter().enumerate() {
        let slug: String = name.split_whitespace().collect();
        let name_words = name.to_lowercase();
        let mut ids = Vec::new();
        for j in 0..*count {
            let id = format!("{slug}_{j:03}");
            let mut words: Vec<String> = (0..24).map(|k| pseudo_word(ci, (j * 5 + k * 3) % 12)).collect();
            for _ in 0..8 {
                words.push(name_words.clone());
            }
            recordings.push(FixtureRecording {
                id: id.clone(),
                speaker: format!("Speaker {}", (ci * 7 + j) % 50),
                title: format!("{name} talk {}", pseudo_word(ci, 100 + j)),
                transcript: words.join(" "),
                audio: (j == 0).then(|| (0..FIXTURE_AUDIO_BYTES).map(|i| (i % 251) as u8).collect()),
            });
            ids.push(id);
        }
        categories.push((name.to_string(), ids));
    }
    (recordings, categories)
}

/// Twenty-category store under `dir`: 587 recordings in 20 categories with
/// 64px illustrations. Returns the config that reads it back.
pub fn sized_category_store(dir: &Path) -> Result<PipelineConfig, PipelineError> {
    let cfg = offline_config(dir, 64);
    let (recordings, categories) = sized_category_recordings();
    build_store(&cfg, &recordings, &categories)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_words_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for a in 0..30 {
            for b in 0..150 {
                assert!(seen.insert(pseudo_word(a, b)));
            }
        }
    }

    #[test]
    fn table1_sizes() {
        let (recs, cats) = sized_category_recordings();
        assert_eq!(recs.len(), CATEGORY_SIZES.iter().map(|(_, n)| n).sum::<usize>());
        assert_eq!(cats[0].1.len(), 44);
        assert_eq!(recs.iter().filter(|r| r.audio.is_some()).count(), 20);
    }
}
