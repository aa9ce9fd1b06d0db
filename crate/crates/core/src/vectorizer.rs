//! TF-IDF document vectors.
//!
//! Weights are raw term count times smoothed idf, `ln((1 + n) / (1 + df)) + 1`,
//! and every non-empty row is scaled to unit L2 norm, so Euclidean distance
//! between rows is a monotone function of cosine distance.

use crate::par::{self, Execution};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use thiserror::Error;

/// Recorded in the derived-store manifest and in `vectors.json`.
pub const IDF_VARIANT: &str = "smooth:ln((1+n_docs)/(1+df))+1";
pub const VECTORS_FORMAT_VERSION: u32 = 1;

pub const DEFAULT_MIN_DF: usize = 2;
pub const DEFAULT_MAX_DF_RATIO: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum VectorizerError {
    #[error("no term survives document-frequency pruning")]
    EmptyVocabulary,
    #[error("idf undefined for df={df}, n_docs={n_docs}")]
    DomainError { df: usize, n_docs: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("duplicate document id {0}")]
    DuplicateDocument(String),
    #[error("vocab.tsv line {0}: malformed")]
    MalformedVocab(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub recording_id: String,
    pub tokens: Vec<String>,
}

/// Sparse vector with entries sorted by column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    /// Sorts by column and sums duplicate columns; zero weights are dropped.
    pub fn from_entries(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (c, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += w,
                _ => merged.push((c, w)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        Self { entries: merged }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, col: u32) -> f64 {
        self.entries
            .binary_search_by_key(&col, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Returns the vector scaled to unit norm; the zero vector stays zero.
    pub fn normalized(&self) -> SparseVector {
        let n = self.norm();
        if n == 0.0 {
            return SparseVector::default();
        }
        SparseVector {
            entries: self.entries.iter().map(|&(c, w)| (c, w / n)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> SparseVector {
        SparseVector::from_entries(self.entries.iter().map(|&(c, w)| (c, w * factor)).collect())
    }

    pub fn cosine(&self, other: &SparseVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: Vec<String>,
    df: Vec<usize>,
    n_docs: usize,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// `terms` must be sorted and unique; `df` aligned with `terms`.
    pub fn from_parts(terms: Vec<String>, df: Vec<usize>, n_docs: usize) -> Result<Self, VectorizerError> {
        if terms.len() != df.len() {
            return Err(VectorizerError::InvalidParameter("terms and df lengths differ".into()));
        }
        if terms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(VectorizerError::InvalidParameter("terms must be sorted and unique".into()));
        }
        if df.iter().any(|&d| d == 0 || d > n_docs) {
            return Err(VectorizerError::InvalidParameter("df out of range".into()));
        }
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Self { terms, df, n_docs, index })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn column(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term(&self, column: u32) -> &str {
        &self.terms[column as usize]
    }

    pub fn df(&self, term: &str) -> Option<usize> {
        self.column(term).map(|c| self.df[c as usize])
    }

    pub fn df_at(&self, column: u32) -> usize {
        self.df[column as usize]
    }

    /// `term<TAB>df` per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, d) in self.terms.iter().zip(&self.df) {
            let _ = writeln!(out, "{t}\t{d}");
        }
        out
    }

    pub fn from_tsv(text: &str, n_docs: usize) -> Result<Self, VectorizerError> {
        let mut terms = Vec::new();
        let mut df = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (t, d) = line.split_once('\t').ok_or(VectorizerError::MalformedVocab(i + 1))?;
            terms.push(t.to_string());
            df.push(d.parse().map_err(|_| VectorizerError::MalformedVocab(i + 1))?);
        }
        Self::from_parts(terms, df, n_docs)
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }
}

/// Largest document frequency admitted for a ratio, `ceil(ratio * n_docs)`.
///
/// A small epsilon keeps products like `0.7 * 10` from rounding up past 7.
pub fn max_df_count(max_df_ratio: f64, n_docs: usize) -> usize {
    (max_df_ratio * n_docs as f64 - 1e-9).ceil().max(0.0) as usize
}

pub fn build_vocabulary(
    docs: &[CleanDocument],
    min_df: usize,
    max_df_ratio: f64,
) -> Result<Vocabulary, VectorizerError> {
    if min_df < 1 {
        return Err(VectorizerError::InvalidParameter("min_df must be >= 1".into()));
    }
    if !(max_df_ratio > 0.0 && max_df_ratio <= 1.0) {
        return Err(VectorizerError::InvalidParameter("max_df_ratio must be in (0, 1]".into()));
    }
    let n_docs = docs.len();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let mut seen: Vec<&str> = doc.tokens.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *counts.entry(t).or_default() += 1;
        }
    }
    let max_df = max_df_count(max_df_ratio, n_docs);
    let (terms, df): (Vec<String>, Vec<usize>) = counts
        .into_iter()
        .filter(|&(_, d)| d >= min_df && d <= max_df)
        .map(|(t, d)| (t.to_string(), d))
        .unzip();
    if terms.is_empty() {
        return Err(VectorizerError::EmptyVocabulary);
    }
    Vocabulary::from_parts(terms, df, n_docs)
}

pub fn idf(df: usize, n_docs: usize) -> Result<f64, VectorizerError> {
    if df < 1 || df > n_docs {
        return Err(VectorizerError::DomainError { df, n_docs });
    }
    Ok(((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    pub format_version: u32,
    pub idf_variant: String,
    pub vocabulary: Vocabulary,
    pub n_docs: usize,
    pub idf: Vec<f64>,
    pub rows: BTreeMap<String, SparseVector>,
}

impl TfIdfModel {
    pub fn row(&self, id: &str) -> Option<&SparseVector> {
        self.rows.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    /// Unnormalized tf-idf weights for an ad-hoc token list (terms outside
    /// the vocabulary are ignored).
    pub fn weigh(&self, tokens: &[String]) -> SparseVector {
        raw_weights(tokens, &self.vocabulary, &self.idf)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec(self).expect("model serializes");
        v.push(b'\n');
        v
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        let mut model: TfIdfModel = serde_json::from_slice(bytes)?;
        model.vocabulary.rebuild_index();
        Ok(model)
    }
}

fn raw_weights(tokens: &[String], vocab: &Vocabulary, idf_table: &[f64]) -> SparseVector {
    let entries = tokens
        .iter()
        .filter_map(|t| vocab.column(t))
        .map(|c| (c, idf_table[c as usize]))
        .collect();
    SparseVector::from_entries(entries)
}

pub fn tfidf_rows(docs: &[CleanDocument], vocab: &Vocabulary) -> Result<TfIdfModel, VectorizerError> {
    tfidf_rows_with(docs, vocab, Execution::default())
}

pub fn tfidf_rows_with(
    docs: &[CleanDocument],
    vocab: &Vocabulary,
    exec: Execution,
) -> Result<TfIdfModel, VectorizerError> {
    let n_docs = vocab.n_docs();
    let idf_table = (0..vocab.len() as u32)
        .map(|c| idf(vocab.df_at(c), n_docs))
        .collect::<Result<Vec<_>, _>>()?;
    let vectors = par::map(exec, docs, |doc| {
        raw_weights(&doc.tokens, vocab, &idf_table).normalized()
    });
    let mut rows = BTreeMap::new();
    for (doc, v) in docs.iter().zip(vectors) {
        if rows.insert(doc.recording_id.clone(), v).is_some() {
            return Err(VectorizerError::DuplicateDocument(doc.recording_id.clone()));
        }
    }
    Ok(TfIdfModel {
        format_version: VECTORS_FORMAT_VERSION,
        idf_variant: IDF_VARIANT.to_string(),
        vocabulary: vocab.clone(),
        n_docs,
        idf: idf_table,
        rows,
    })
}
