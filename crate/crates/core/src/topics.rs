//! One short topic label per recording.
//!
//! A chat-completion style LLM is asked for a one-word topic. When no LLM is
//! configured, or it keeps failing, the highest-weighted TF-IDF term of the
//! recording is used instead.

use crate::provider::{self, ProviderError, RetryPolicy};
use crate::textprep::is_meta_token;
use crate::vectorizer::{SparseVector, Vocabulary};
use serde::{Deserialize, Serialize};
use std::time::Duration;
use thiserror::Error;

pub const TOPIC_PROMPT: &str = "Identify the primary topic of the text in one word, similar to how 'technology' might summarize a discussion on smartphones, or 'environment' could describe a passage on climate change: ";
pub const DEFAULT_CHAR_BUDGET: usize = 12_000;
pub const MAX_TOPIC_WORDS: usize = 3;
pub const MAX_TOPIC_CHARS: usize = 40;
pub const UNTITLED_TOPIC: &str = "Untitled";

#[derive(Debug, Error, PartialEq)]
pub enum TopicError {
    #[error("transcript is empty")]
    EmptyTranscript,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicSource {
    Llm,
    TfidfFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicAssignment {
    pub recording_id: String,
    pub topic: String,
    pub provider: TopicSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

/// A text-completion service answering a single user prompt.
pub trait TopicProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, ProviderError>;
}

/// Prompt text followed by the transcript, cut to at most `char_budget`
/// characters at a word boundary.
pub fn build_topic_prompt(transcript: &str, char_budget: usize) -> Result<String, TopicError> {
    let transcript = transcript.trim();
    if transcript.is_empty() {
        return Err(TopicError::EmptyTranscript);
    }
    Ok(format!("{TOPIC_PROMPT}{}", truncate_at_word(transcript, char_budget)))
}

fn truncate_at_word(text: &str, budget: usize) -> &str {
    let Some((cut, _)) = text.char_indices().nth(budget) else {
        return text;
    };
    if text[cut..].starts_with(char::is_whitespace) {
        return text[..cut].trim_end();
    }
    match text[..cut].rfind(char::is_whitespace) {
        Some(ws) => text[..ws].trim_end(),
        // a single word longer than the budget
        None => &text[..cut],
    }
}

fn title_case(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
        None => String::new(),
    }
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

/// Cleans a provider answer into a topic label: surrounding whitespace and
/// quotes and trailing periods removed, whitespace collapsed, title case.
/// Answers that end up empty, longer than three words or longer than 40
/// characters are rejected.
pub fn normalize_topic(raw: &str) -> Result<String, ProviderError> {
    let mut s = raw;
    loop {
        let next = s.trim().trim_matches(QUOTES).trim_end_matches('.');
        if next == s {
            break;
        }
        s = next;
    }
    let words: Vec<String> = s.split_whitespace().map(title_case).collect();
    let topic = words.join(" ");
    if topic.is_empty() {
        return Err(ProviderError::InvalidResponse("empty topic".into()));
    }
    if words.len() > MAX_TOPIC_WORDS || topic.chars().count() > MAX_TOPIC_CHARS {
        return Err(ProviderError::InvalidResponse(format!("topic too long: {topic:?}")));
    }
    Ok(topic)
}

/// Highest-weighted term, ties broken lexicographically, title-cased.
pub fn fallback_topic(doc_vector: &SparseVector, vocab: &Vocabulary) -> String {
    doc_vector
        .entries()
        .iter()
        .filter(|e| e.1 > 0.0)
        .map(|&(c, w)| (vocab.term(c), w))
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(t, _)| title_case(t))
        .unwrap_or_else(|| UNTITLED_TOPIC.to_string())
}

/// Raw transcript with `<...>` meta tokens removed.
pub fn prompt_text(raw_transcript: &str) -> String {
    raw_transcript
        .split_whitespace()
        .filter(|t| !is_meta_token(t))
        .collect::<Vec<_>>()
        .join(" ")
}

pub struct TopicJob<'a> {
    pub recording_id: &'a str,
    pub transcript: &'a str,
    pub vector: &'a SparseVector,
}

/// Never fails: provider errors fall back to the TF-IDF topic and are kept
/// in `raw_response`.
pub fn extract_topic(
    job: &TopicJob<'_>,
    vocab: &Vocabulary,
    provider: Option<&dyn TopicProvider>,
    retry: &RetryPolicy,
    char_budget: usize,
) -> TopicAssignment {
    let fallback = |raw_response: Option<String>| TopicAssignment {
        recording_id: job.recording_id.to_string(),
        topic: fallback_topic(job.vector, vocab),
        provider: TopicSource::TfidfFallback,
        raw_response,
    };
    let Some(provider) = provider else {
        return fallback(None);
    };
    let prompt = match build_topic_prompt(&prompt_text(job.transcript), char_budget) {
        Ok(p) => p,
        Err(e) => return fallback(Some(format!("error: {e}"))),
    };
    let mut last_raw = None;
    let outcome = retry.run(|_| {
        let raw = provider.complete(&prompt)?;
        last_raw = Some(raw.clone());
        normalize_topic(&raw)
    });
    match outcome {
        Ok(topic) => TopicAssignment {
            recording_id: job.recording_id.to_string(),
            topic,
            provider: TopicSource::Llm,
            raw_response: last_raw,
        },
        Err(e) => {
            log::warn!("topic provider {} failed for {}: {e}", provider.name(), job.recording_id);
            fallback(Some(format!("error: {e}")))
        }
    }
}

/// OpenAI-compatible `/chat/completions` client: one user message,
/// temperature 0.
pub struct ChatCompletionProvider {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl ChatCompletionProvider {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent: provider::http_agent(timeout),
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl TopicProvider for ChatCompletionProvider {
    fn name(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(provider::transport)?;
        provider::check_status(&mut resp)?;
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::InvalidResponse("no choices".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<String, ProviderError>>>,
        calls: AtomicUsize,
    }

    impl Scripted {
        fn new(replies: Vec<Result<String, ProviderError>>) -> Self {
            Self {
                replies: Mutex::new(replies),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl TopicProvider for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }
        fn complete(&self, _prompt: &str) -> Result<String, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_parts(
            vec!["alpha".into(), "beta".into(), "hacker".into(), "password".into()],
            vec![1, 1, 1, 1],
            2,
        )
        .unwrap()
    }

    #[test]
    fn prompt_starts_with_template() {
        let p = build_topic_prompt("solar panels convert light", DEFAULT_CHAR_BUDGET).unwrap();
        assert!(p.starts_with("Identify the primary topic of the text in one word"));
        assert!(p.ends_with("change: solar panels convert light"));
        assert_eq!(build_topic_prompt("  ", 10), Err(TopicError::EmptyTranscript));
    }

    #[test]
    fn prompt_truncates_at_word_boundary() {
        let transcript = "lorem ipsum ".repeat(1700); // 20400 chars
        let p = build_topic_prompt(&transcript, 12_000).unwrap();
        let body = &p[TOPIC_PROMPT.len()..];
        assert!(body.chars().count() <= 12_000);
        assert!(transcript.starts_with(body));
        let next = &transcript[body.len()..];
        assert!(next.starts_with(' '), "cut inside a word");
        assert!(body.ends_with("lorem") || body.ends_with("ipsum"));

        assert_eq!(truncate_at_word("abcdef", 3), "abc");
        assert_eq!(truncate_at_word("ab cdef", 4), "ab");
        assert_eq!(truncate_at_word("ab cd ef", 5), "ab cd");
        assert_eq!(truncate_at_word("short", 100), "short");
    }

    #[test]
    fn normalizes_provider_answers() {
        assert_eq!(normalize_topic("  cyber security.").unwrap(), "Cyber Security");
        assert_eq!(normalize_topic("\"Technology.\"\n").unwrap(), "Technology");
        assert_eq!(normalize_topic("climate    CHANGE").unwrap(), "Climate Change");
        assert!(normalize_topic("").is_err());
        assert!(normalize_topic(" '.' ").is_err());
        assert!(normalize_topic("the primary topic is music").is_err());
        assert!(normalize_topic(&"x".repeat(41)).is_err());
    }

    #[test]
    fn fallback_argmax_and_ties() {
        let v = vocab();
        let w = SparseVector::from_entries(vec![(3, 0.8), (2, 0.6)]);
        assert_eq!(fallback_topic(&w, &v), "Password");
        let w = SparseVector::from_entries(vec![(1, 0.5), (0, 0.5)]);
        assert_eq!(fallback_topic(&w, &v), "Alpha");
        assert_eq!(fallback_topic(&SparseVector::default(), &v), "Untitled");
    }

    #[test]
    fn provider_success() {
        let v = vocab();
        let vec = SparseVector::from_entries(vec![(3, 0.8)]);
        let job = TopicJob { recording_id: "r", transcript: "<unk> hack the planet", vector: &vec };
        let p = Scripted::new(vec![Ok("  cyber security.".into())]);
        let t = extract_topic(&job, &v, Some(&p), &RetryPolicy::no_wait(3), DEFAULT_CHAR_BUDGET);
        assert_eq!(t.topic, "Cyber Security");
        assert_eq!(t.provider, TopicSource::Llm);
    }

    #[test]
    fn timeouts_fall_back_after_three_attempts() {
        let v = vocab();
        let vec = SparseVector::from_entries(vec![(3, 0.8), (2, 0.6)]);
        let job = TopicJob { recording_id: "r", transcript: "words here", vector: &vec };
        let p = Scripted::new(vec![
            Err(ProviderError::Transport("timeout".into())),
            Err(ProviderError::Transport("timeout".into())),
            Err(ProviderError::Transport("timeout".into())),
        ]);
        let t = extract_topic(&job, &v, Some(&p), &RetryPolicy::no_wait(3), DEFAULT_CHAR_BUDGET);
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
        assert_eq!(t.topic, "Password");
        assert_eq!(t.provider, TopicSource::TfidfFallback);
        assert!(t.raw_response.unwrap().contains("timeout"));
    }

    #[test]
    fn empty_answer_is_a_provider_error() {
        let v = vocab();
        let vec = SparseVector::from_entries(vec![(2, 0.6)]);
        let job = TopicJob { recording_id: "r", transcript: "words here", vector: &vec };
        let p = Scripted::new(vec![Ok(String::new())]);
        let t = extract_topic(&job, &v, Some(&p), &RetryPolicy::no_wait(3), DEFAULT_CHAR_BUDGET);
        assert_eq!(t.provider, TopicSource::TfidfFallback);
        assert_eq!(t.topic, "Hacker");
    }

    #[test]
    fn offline_mode_uses_fallback() {
        let v = vocab();
        let vec = SparseVector::from_entries(vec![(0, 0.6)]);
        let job = TopicJob { recording_id: "r", transcript: "", vector: &vec };
        let t = extract_topic(&job, &v, None, &RetryPolicy::default(), DEFAULT_CHAR_BUDGET);
        assert_eq!(t.topic, "Alpha");
        assert_eq!(t.raw_response, None);
    }

    proptest::proptest! {
        #[test]
        fn normalization_is_idempotent(raw in "[ \"'.a-zA-Z]{0,30}") {
            if let Ok(once) = normalize_topic(&raw) {
                proptest::prop_assert_eq!(normalize_topic(&once).unwrap(), once);
            }
        }
    }
}
