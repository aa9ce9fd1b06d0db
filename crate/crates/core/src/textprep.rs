//! Transcript cleaning: meta-token removal, lowercasing, alphabetic
//! filtering, short-word and stopword removal, table lemmatization.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

/// Tokens shorter than this are dropped.
pub const MIN_TOKEN_LEN: usize = 3;

/// NLTK's English stopword list with apostrophes stripped.
pub const BUNDLED_STOPWORDS: &str = include_str!("../resources/stopwords_en.txt");
/// Inflection -> lemma pairs, see `resources/README.md`.
pub const BUNDLED_LEMMAS: &str = include_str!("../resources/lemmas_en.tsv");

#[derive(Debug, Error)]
pub enum TextprepError {
    #[error("lemma table line {line_no}: {reason}")]
    MalformedLemma { line_no: usize, reason: String },
    #[error("lemma table has a cycle through {0:?}")]
    LemmaCycle(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopwordList {
    words: HashSet<String>,
    source_name: String,
}

impl StopwordList {
    /// One word per line. Entries are normalized the same way tokens are
    /// (lowercased, non a-z characters removed) so `don't` matches `dont`.
    pub fn parse(text: &str, source_name: impl Into<String>) -> Self {
        let words = text
            .lines()
            .map(|l| alpha_only(&l.trim().to_lowercase()))
            .filter(|w| !w.is_empty())
            .collect();
        Self {
            words,
            source_name: source_name.into(),
        }
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_STOPWORDS, "bundled:nltk-english")
    }

    pub fn from_file(path: &Path) -> Result<Self, TextprepError> {
        let text = read(path)?;
        Ok(Self::parse(&text, path.display().to_string()))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }
}

/// Exact-match lemma lookup.
///
/// Chains (`a -> b`, `b -> c`) are resolved at load time so every lemma is a
/// fixed point of the table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LemmaTable {
    map: HashMap<String, String>,
    source_name: String,
}

impl LemmaTable {
    pub fn parse(text: &str, source_name: impl Into<String>) -> Result<Self, TextprepError> {
        let mut map = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| TextprepError::MalformedLemma {
                line_no: idx + 1,
                reason: reason.to_string(),
            };
            let (inflected, lemma) = line.split_once('\t').ok_or_else(|| bad("expected two tab-separated columns"))?;
            let (inflected, lemma) = (inflected.trim(), lemma.trim());
            let valid = |w: &str| !w.is_empty() && w.bytes().all(|b| b.is_ascii_lowercase());
            if !valid(inflected) || !valid(lemma) {
                return Err(bad("entries must be lowercase a-z words"));
            }
            if inflected != lemma {
                map.insert(inflected.to_string(), lemma.to_string());
            }
        }
        let mut resolved = HashMap::with_capacity(map.len());
        for (k, v) in &map {
            let mut target = v;
            let mut steps = 0;
            while let Some(next) = map.get(target) {
                if next == k || steps > map.len() {
                    return Err(TextprepError::LemmaCycle(k.clone()));
                }
                target = next;
                steps += 1;
            }
            resolved.insert(k.clone(), target.clone());
        }
        Ok(Self {
            map: resolved,
            source_name: source_name.into(),
        })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEMMAS, "bundled:lemmas-en").expect("bundled lemma table is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self, TextprepError> {
        let text = read(path)?;
        Self::parse(&text, path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn lookup(&self, token: &str) -> Option<&str> {
        self.map.get(token).map(String::as_str)
    }
}

fn read(path: &Path) -> Result<String, TextprepError> {
    std::fs::read_to_string(path).map_err(|source| TextprepError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Identity when the token has no entry.
pub fn lemmatize(token: &str, lemmas: &LemmaTable) -> String {
    lemmas.lookup(token).unwrap_or(token).to_string()
}

/// `<unk>`, `<NA>`, `<sil>`, and any other `<...>` token.
pub fn is_meta_token(token: &str) -> bool {
    token.len() >= 2 && token.starts_with('<') && token.ends_with('>')
}

fn alpha_only(s: &str) -> String {
    s.chars().filter(|c| c.is_ascii_lowercase()).collect()
}

/// Lowercased, alphabetic-only words with meta tokens removed. No length,
/// stopword or lemma filtering. Shared by [`clean_tokens`] and title indexing.
pub fn normalize_words(raw_text: &str) -> Vec<String> {
    raw_text
        .split_whitespace()
        .filter(|t| !is_meta_token(t))
        .map(|t| alpha_only(&t.to_lowercase()))
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub stopwords: StopwordList,
    pub lemmas: LemmaTable,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self {
            stopwords: StopwordList::bundled(),
            lemmas: LemmaTable::bundled(),
        }
    }
}

impl Preprocessor {
    pub fn new(stopwords: StopwordList, lemmas: LemmaTable) -> Self {
        Self { stopwords, lemmas }
    }

    pub fn clean(&self, raw_text: &str) -> Vec<String> {
        clean_tokens(raw_text, &self.stopwords, &self.lemmas)
    }

    /// Same pipeline without the short-word filter, used for titles and
    /// topic labels where words such as "ai" carry meaning.
    pub fn clean_label(&self, text: &str) -> Vec<String> {
        let keep = |t: &str| !self.stopwords.contains(t);
        normalize_words(text)
            .into_iter()
            .filter(|t| keep(t))
            .map(|t| lemmatize(&t, &self.lemmas))
            .filter(|t| keep(t))
            .collect()
    }
}

pub fn clean_tokens(raw_text: &str, stopwords: &StopwordList, lemmas: &LemmaTable) -> Vec<String> {
    let keep = |t: &str| t.len() >= MIN_TOKEN_LEN && !stopwords.contains(t);
    normalize_words(raw_text)
        .into_iter()
        .filter(|t| keep(t))
        .map(|t| lemmatize(&t, lemmas))
        .filter(|t| keep(t))
        .collect()
}
