//! The generation contract.
//!
//! A [`Policy`] continues a serialized transcript until one of the requested
//! stop sequences, a token budget, or end of sequence. Two implementations
//! ship: [`ScriptedPolicy`] replays fixed continuations per conversation and
//! [`RemotePolicy`] calls a completions endpoint over HTTP.

mod remote;
mod scripted;

pub use remote::{RemoteConfig, RemotePolicy};
pub use scripted::ScriptedPolicy;

use crate::tagproto::{Marker, TagSet};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Identifies one conversation: a problem and the sample index within its
/// rollout group. Scripted fixtures advance per key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConversationKey {
    pub problem_id: String,
    pub sample: u32,
}

impl ConversationKey {
    pub fn new(problem_id: impl Into<String>, sample: u32) -> Self {
        Self { problem_id: problem_id.into(), sample }
    }
}

impl fmt::Display for ConversationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.problem_id, self.sample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub conversation: ConversationKey,
    pub prefix: String,
    pub stop_sequences: Vec<String>,
    pub max_new_tokens: i64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    StopSequence(String),
    Length,
    EndOfSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// Generated continuation, including the stop sequence when one was hit.
    pub text: String,
    pub stop_reason: StopReason,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("remote policy unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("max_new_tokens must be positive")]
    BudgetExceeded,
    #[error("fixture exhausted for {conversation} after {calls} calls")]
    FixtureExhausted { conversation: ConversationKey, calls: usize },
    #[error("fixture must contain at least one continuation")]
    EmptyFixture,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Anything that can continue a transcript. Implementations must accept
/// concurrent calls.
pub trait Policy: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, PolicyError>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, PolicyError> {
        (**self).generate(request)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, PolicyError> {
        (**self).generate(request)
    }
}

impl<P: Policy + ?Sized> Policy for std::sync::Arc<P> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, PolicyError> {
        (**self).generate(request)
    }
}

/// The token partition used by the scripted policy and by loss masks.
///
/// Tag markers are single tokens; otherwise a token is a maximal run of
/// alphanumeric characters (plus `_`) or a single other character. The
/// concatenation of the tokens is always the input.
pub fn tokenize<'a>(text: &'a str, tags: &TagSet) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut rest = text;
    let word = |c: char| c.is_alphanumeric() || c == '_';
    while let Some(c) = rest.chars().next() {
        let marker = Marker::ALL.iter().map(|m| tags.marker(*m)).filter(|m| rest.starts_with(m)).map(str::len).max();
        let len = if let Some(n) = marker {
            n
        } else if word(c) {
            rest.find(|c: char| !word(c)).unwrap_or(rest.len())
        } else {
            c.len_utf8()
        };
        out.push(&rest[..len]);
        rest = &rest[len..];
    }
    out
}

/// The stop a left-to-right generator would hit first in `text`: the one
/// whose first occurrence ends earliest (longer marker on a tie). Returns
/// the byte offset just past it and the marker.
pub fn first_stop<'s>(text: &str, stops: &'s [String]) -> Option<(usize, &'s str)> {
    stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()).map(|at| (at + s.len(), s.as_str())))
        .min_by(|a, b| a.0.cmp(&b.0).then(b.1.len().cmp(&a.1.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers_are_atomic_tokens() {
        let tags = TagSet::default();
        let toks = tokenize("plan x1<code>print(2+2)</code>", &tags);
        assert_eq!(toks, ["plan", " ", "x1", "<code>", "print", "(", "2", "+", "2", ")", "</code>"]);
        assert_eq!(tokenize("a <b", &tags), ["a", " ", "<", "b"]);
        assert!(tokenize("", &tags).is_empty());
    }

    #[test]
    fn earliest_stop_wins() {
        let stops = vec!["</code>".to_string(), "</think>".to_string()];
        assert_eq!(first_stop("a</think>b</code>", &stops), Some((9, "</think>")));
        assert_eq!(first_stop("nothing", &stops), None);
        let nested = vec!["ab".to_string(), "abc".to_string()];
        assert_eq!(first_stop("xabc", &nested), Some((3, "ab")));
        let suffix = vec!["c".to_string(), "bc".to_string()];
        assert_eq!(first_stop("abc", &suffix), Some((3, "bc")));
    }
}
