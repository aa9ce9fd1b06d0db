//! Ranked full-text search with category filtering.
//!
//! Each document vector is the sum of three L2-normalized fields: the body
//! row of the TF-IDF model, and the title and topic tokens weighted by an
//! index-level idf, scaled by per-field boosts. Scores are cosines between
//! the query vector and the document vector.

use crate::clusterer::Category;
use crate::corpus::Recording;
use crate::textprep::Preprocessor;
use crate::topics::TopicAssignment;
use crate::vectorizer::{idf, TfIdfModel};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

pub const SEARCH_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TOP_K: usize = 25;

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("inconsistent derived store: {0}")]
    InconsistentStore(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boosts {
    pub title: f64,
    pub topic: f64,
    pub body: f64,
}

impl Default for Boosts {
    fn default() -> Self {
        Self {
            title: 3.0,
            topic: 2.0,
            body: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchIndex {
    pub format_version: u32,
    pub n_docs: usize,
    pub boosts: Boosts,
    /// Index-level idf over all fields, used to weigh queries and labels.
    pub idf: BTreeMap<String, f64>,
    /// Unnormalized boosted weights.
    pub postings: BTreeMap<String, Vec<(String, f64)>>,
    pub doc_norms: BTreeMap<String, f64>,
    pub category_of: BTreeMap<String, String>,
    pub category_names: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub recording_id: String,
    pub score: f64,
    pub category: String,
    pub matched_terms: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryFilter {
    pub ids: BTreeSet<String>,
    pub unknown: Vec<String>,
}

fn add_field(acc: &mut BTreeMap<String, f64>, weights: &BTreeMap<String, f64>, boost: f64) {
    let norm = weights.values().map(|w| w * w).sum::<f64>().sqrt();
    if norm == 0.0 || boost == 0.0 {
        return;
    }
    for (t, w) in weights {
        *acc.entry(t.clone()).or_insert(0.0) += boost * w / norm;
    }
}

fn term_counts(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

fn weigh_counts(counts: &BTreeMap<&str, usize>, idf_of: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    counts
        .iter()
        .filter_map(|(t, &c)| idf_of.get(*t).map(|w| (t.to_string(), c as f64 * w)))
        .collect()
}

fn id_set<'a>(ids: impl Iterator<Item = &'a str>) -> BTreeSet<&'a str> {
    ids.collect()
}

fn check_same(what: &str, expected: &BTreeSet<&str>, got: &BTreeSet<&str>) -> Result<(), SearchError> {
    if let Some(id) = expected.symmetric_difference(got).next() {
        let side = if expected.contains(id) { "missing from" } else { "unknown in" };
        return Err(SearchError::InconsistentStore(format!("recording {id} {side} {what}")));
    }
    Ok(())
}

pub fn build_index(
    model: &TfIdfModel,
    recordings: &[Recording],
    topics: &[TopicAssignment],
    categories: &[Category],
    prep: &Preprocessor,
    boosts: Boosts,
) -> Result<SearchIndex, SearchError> {
    let ids = id_set(model.ids());
    check_same("recordings", &ids, &id_set(recordings.iter().map(|r| r.id.as_str())))?;

    let mut category_of = BTreeMap::new();
    for c in categories {
        for id in &c.member_ids {
            if let Some(prev) = category_of.insert(id.clone(), c.name.clone()) {
                return Err(SearchError::InconsistentStore(format!(
                    "recording {id} in both {prev:?} and {:?}",
                    c.name
                )));
            }
        }
    }
    check_same("categories", &ids, &id_set(category_of.keys().map(String::as_str)))?;

    let mut topic_of = HashMap::new();
    for t in topics {
        if !ids.contains(t.recording_id.as_str()) {
            return Err(SearchError::InconsistentStore(format!("topic for unknown recording {}", t.recording_id)));
        }
        topic_of.insert(t.recording_id.as_str(), t.topic.as_str());
    }

    struct Fields<'a> {
        id: &'a str,
        title: Vec<String>,
        topic: Vec<String>,
    }
    let mut fields: Vec<Fields> = recordings
        .iter()
        .map(|r| Fields {
            id: &r.id,
            title: prep.clean_label(&r.title),
            topic: topic_of.get(r.id.as_str()).map(|t| prep.clean_label(t)).unwrap_or_default(),
        })
        .collect();
    fields.sort_by(|a, b| a.id.cmp(b.id));

    let n_docs = fields.len();
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for f in &fields {
        let row = model.row(f.id).expect("checked above");
        let mut terms: BTreeSet<&str> = row.entries().iter().map(|(c, _)| model.vocabulary.term(*c)).collect();
        terms.extend(f.title.iter().map(String::as_str));
        terms.extend(f.topic.iter().map(String::as_str));
        for t in terms {
            *df.entry(t.to_string()).or_insert(0) += 1;
        }
    }
    let idf_of: BTreeMap<String, f64> = df
        .into_iter()
        .map(|(t, d)| (t, idf(d, n_docs).expect("df within 1..=n")))
        .collect();

    let mut postings: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    let mut doc_norms = BTreeMap::new();
    for f in &fields {
        let row = model.row(f.id).expect("checked above");
        let body: BTreeMap<String, f64> =
            row.entries().iter().map(|&(c, w)| (model.vocabulary.term(c).to_string(), w)).collect();
        let mut doc = BTreeMap::new();
        add_field(&mut doc, &body, boosts.body);
        add_field(&mut doc, &weigh_counts(&term_counts(&f.title), &idf_of), boosts.title);
        add_field(&mut doc, &weigh_counts(&term_counts(&f.topic), &idf_of), boosts.topic);
        let norm = doc.values().map(|w| w * w).sum::<f64>().sqrt();
        for (t, w) in doc {
            postings.entry(t).or_default().push((f.id.to_string(), w));
        }
        doc_norms.insert(f.id.to_string(), norm);
    }

    Ok(SearchIndex {
        format_version: SEARCH_FORMAT_VERSION,
        n_docs,
        boosts,
        idf: idf_of,
        postings,
        doc_norms,
        category_of,
        category_names: categories.iter().map(|c| c.name.clone()).collect(),
    })
}

impl SearchIndex {
    pub fn category_of(&self, id: &str) -> Option<&str> {
        self.category_of.get(id).map(String::as_str)
    }

    /// Union of the members of the named categories. Unknown names are
    /// reported in `unknown` rather than failing.
    pub fn filter_by_categories<S: AsRef<str>>(&self, categories: &[S]) -> CategoryFilter {
        let wanted: BTreeSet<&str> = categories.iter().map(AsRef::as_ref).collect();
        CategoryFilter {
            ids: self
                .category_of
                .iter()
                .filter(|(_, c)| wanted.contains(c.as_str()))
                .map(|(id, _)| id.clone())
                .collect(),
            unknown: wanted
                .into_iter()
                .filter(|c| !self.category_names.contains(*c))
                .map(str::to_string)
                .collect(),
        }
    }

    /// Query tokens weighted by index idf, L2-normalized. Unknown terms
    /// drop out.
    pub fn query_vector(&self, tokens: &[String]) -> BTreeMap<String, f64> {
        let weights = weigh_counts(&term_counts(tokens), &self.idf);
        let mut q = BTreeMap::new();
        add_field(&mut q, &weights, 1.0);
        q
    }

    /// An empty `categories` slice means no filter.
    pub fn search<S: AsRef<str>>(
        &self,
        prep: &Preprocessor,
        query: &str,
        categories: &[S],
        top_k: usize,
    ) -> Vec<SearchHit> {
        let q = self.query_vector(&prep.clean_label(query));
        if q.is_empty() || top_k == 0 {
            return Vec::new();
        }
        let allowed = (!categories.is_empty()).then(|| self.filter_by_categories(categories).ids);

        let mut acc: BTreeMap<&str, (f64, Vec<&str>)> = BTreeMap::new();
        for (term, qw) in &q {
            for (id, w) in self.postings.get(term).into_iter().flatten() {
                if allowed.as_ref().is_some_and(|a| !a.contains(id)) {
                    continue;
                }
                let e = acc.entry(id.as_str()).or_default();
                e.0 += qw * w;
                e.1.push(term.as_str());
            }
        }
        let mut hits: Vec<SearchHit> = acc
            .into_iter()
            .map(|(id, (dot, terms))| SearchHit {
                recording_id: id.to_string(),
                score: dot / self.doc_norms[id],
                category: self.category_of[id].clone(),
                matched_terms: terms.into_iter().map(str::to_string).collect(),
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.recording_id.cmp(&b.recording_id)));
        hits.truncate(top_k);
        hits
    }
}
