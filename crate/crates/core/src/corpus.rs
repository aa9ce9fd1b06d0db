//! Loading STM transcript corpora into [`Recording`]s.
//!
//! Layout on disk:
//!
//! ```text
//! <root>/stm/*.stm          one transcript per talk, file stem = recording id
//! <root>/audio/*.{wav,mp3,sph}
//! <root>/metadata.tsv       optional, columns id, speaker, title
//! ```

use crate::par::{self, Execution};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Audio extensions in lookup precedence order.
pub const AUDIO_EXTENSIONS: [&str; 3] = ["wav", "mp3", "sph"];

/// Segment text TED-LIUM uses for regions excluded from scoring.
const IGNORED_SEGMENT_TEXT: &str = "ignore_time_segment_in_scoring";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("{file}: {source}")]
    InFile {
        file: String,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("missing directory {0}")]
    MissingDirectory(PathBuf),
    #[error("duplicate recording id {0}")]
    DuplicateId(String),
    #[error("metadata.tsv: {0}")]
    MalformedMetadata(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StmSegment {
    pub source_id: String,
    pub channel: String,
    pub speaker_label: String,
    pub start_s: f64,
    pub end_s: f64,
    pub condition_label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub id: String,
    pub speaker: String,
    pub title: String,
    pub raw_transcript: String,
    pub audio_path: Option<PathBuf>,
    pub duration_s: f64,
    /// Transcript file relative to the corpus root, shown during curation.
    pub source_file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    pub recordings: Vec<Recording>,
}

impl Corpus {
    pub fn get(&self, id: &str) -> Option<&Recording> {
        self.recordings
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.recordings[i])
    }

    pub fn ids(&self) -> Vec<String> {
        self.recordings.iter().map(|r| r.id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingMetadata {
    pub speaker: String,
    pub title: String,
}

/// Parses STM text. Blank lines and lines starting with `;;` are skipped.
pub fn parse_stm(stm_text: &str) -> Result<Vec<StmSegment>, CorpusError> {
    let mut segments = Vec::new();
    for (idx, line) in stm_text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim_start();
        if trimmed.is_empty() || trimmed.starts_with(";;") {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedLine { line_no, reason };

        let mut fields = Vec::with_capacity(6);
        let mut rest = trimmed;
        for _ in 0..6 {
            rest = rest.trim_start();
            if rest.is_empty() {
                break;
            }
            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            fields.push(&rest[..end]);
            rest = &rest[end..];
        }
        if fields.len() < 6 {
            return Err(malformed(format!("expected at least 6 fields, found {}", fields.len())));
        }
        let parse_time = |s: &str, name: &str| -> Result<f64, CorpusError> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
                _ => Err(malformed(format!("{name} time {s:?} is not a non-negative number"))),
            }
        };
        let start_s = parse_time(fields[3], "start")?;
        let end_s = parse_time(fields[4], "end")?;
        if end_s < start_s {
            return Err(malformed(format!("end {end_s} precedes start {start_s}")));
        }
        segments.push(StmSegment {
            source_id: fields[0].to_string(),
            channel: fields[1].to_string(),
            speaker_label: fields[2].to_string(),
            start_s,
            end_s,
            condition_label: fields[5].to_string(),
            text: rest.trim().to_string(),
        });
    }
    Ok(segments)
}

/// Splits a CamelCase name into words: `AalaElKhani` -> `Aala El Khani`.
fn split_camel_case(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len() + 4);
    for (i, &c) in chars.iter().enumerate() {
        if i > 0 && c.is_uppercase() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev.is_lowercase() || (prev.is_uppercase() && next_lower) {
                out.push(' ');
            }
        }
        out.push(c);
    }
    out
}

/// Derives display metadata from a `SpeakerName_Suffix` style id.
pub fn recording_metadata(id: &str) -> RecordingMetadata {
    let (head, remainder) = match id.split_once('_') {
        Some((head, rest)) => (head, Some(rest)),
        None => (id, None),
    };
    if head.is_empty() {
        return RecordingMetadata {
            speaker: id.to_string(),
            title: id.to_string(),
        };
    }
    let speaker = split_camel_case(head);
    let title = match remainder {
        Some(r) if !r.is_empty() => format!("{speaker} ({r})"),
        _ => speaker.clone(),
    };
    RecordingMetadata { speaker, title }
}

/// Sidecar overrides keyed by recording id. Empty cells mean "no override".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetadataOverrides {
    entries: BTreeMap<String, (Option<String>, Option<String>)>,
}

impl MetadataOverrides {
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| CorpusError::MalformedMetadata("missing header row".into()))?;
        let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
        let find = |name: &str| cols.iter().position(|c| c.eq_ignore_ascii_case(name));
        let id_col = find("id")
            .ok_or_else(|| CorpusError::MalformedMetadata("header lacks an id column".into()))?;
        let speaker_col = find("speaker");
        let title_col = find("title");
        if speaker_col.is_none() && title_col.is_none() {
            return Err(CorpusError::MalformedMetadata(
                "header needs a speaker or title column".into(),
            ));
        }
        let mut entries = BTreeMap::new();
        for line in lines {
            let cells: Vec<&str> = line.split('\t').collect();
            let cell = |col: Option<usize>| {
                col.and_then(|c| cells.get(c))
                    .map(|s| s.trim())
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
            };
            let Some(id) = cell(Some(id_col)) else {
                continue;
            };
            entries.insert(id, (cell(speaker_col), cell(title_col)));
        }
        Ok(Self { entries })
    }

    pub fn apply(&self, id: &str, mut meta: RecordingMetadata) -> RecordingMetadata {
        if let Some((speaker, title)) = self.entries.get(id) {
            if let Some(s) = speaker {
                meta.speaker = s.clone();
            }
            if let Some(t) = title {
                meta.title = t.clone();
            }
        }
        meta
    }
}

fn find_audio(audio_dir: &Path, stem: &str) -> Option<PathBuf> {
    AUDIO_EXTENSIONS
        .iter()
        .map(|ext| audio_dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

/// Builds a recording from its parsed segments. Segments are ordered by start
/// time (stably, so file order breaks ties).
pub fn assemble_recording(
    id: &str,
    mut segments: Vec<StmSegment>,
    meta: RecordingMetadata,
    audio_path: Option<PathBuf>,
    source_file: String,
) -> Recording {
    segments.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let raw_transcript = segments
        .iter()
        .map(|s| s.text.as_str())
        .filter(|t| !t.is_empty() && *t != IGNORED_SEGMENT_TEXT)
        .collect::<Vec<_>>()
        .join(" ");
    let duration_s = match (segments.first(), segments.iter().map(|s| s.end_s).reduce(f64::max)) {
        (Some(first), Some(last_end)) => (last_end - first.start_s).max(0.0),
        _ => 0.0,
    };
    Recording {
        id: id.to_string(),
        speaker: meta.speaker,
        title: meta.title,
        raw_transcript,
        audio_path,
        duration_s,
        source_file,
    }
}

pub fn load_corpus(root: &Path) -> Result<Corpus, CorpusError> {
    load_corpus_with(root, Execution::default())
}

pub fn load_corpus_with(root: &Path, exec: Execution) -> Result<Corpus, CorpusError> {
    let stm_dir = root.join("stm");
    if !stm_dir.is_dir() {
        return Err(CorpusError::MissingDirectory(stm_dir));
    }
    let audio_dir = root.join("audio");
    let overrides = match fs::read_to_string(root.join("metadata.tsv")) {
        Ok(text) => MetadataOverrides::parse(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => MetadataOverrides::default(),
        Err(e) => return Err(e.into()),
    };

    let mut stm_files: Vec<PathBuf> = fs::read_dir(&stm_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "stm"))
        .collect();
    stm_files.sort();

    let loaded = par::map(exec, &stm_files, |path| -> Result<Recording, CorpusError> {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let file_name = format!("stm/{}", path.file_name().unwrap_or_default().to_string_lossy());
        let text = fs::read_to_string(path)?;
        let segments = parse_stm(&text).map_err(|e| CorpusError::InFile {
            file: file_name.clone(),
            source: Box::new(e),
        })?;
        let meta = overrides.apply(&stem, recording_metadata(&stem));
        Ok(assemble_recording(
            &stem,
            segments,
            meta,
            find_audio(&audio_dir, &stem),
            file_name,
        ))
    });

    let mut recordings = loaded.into_iter().collect::<Result<Vec<_>, _>>()?;
    recordings.sort_by(|a, b| a.id.cmp(&b.id));
    let mut seen = HashSet::new();
    for r in &recordings {
        if !seen.insert(r.id.as_str()) {
            return Err(CorpusError::DuplicateId(r.id.clone()));
        }
    }
    Ok(Corpus {
        root: root.to_path_buf(),
        recordings,
    })
}
