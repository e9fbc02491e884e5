use super::{first_stop, tokenize, ConversationKey, GenerationRequest, GenerationResult, Policy, PolicyError};
use super::{StopReason, TokenLogprob};
use crate::tagproto::{ParseEvent, Parser, TagSet};
use parking_lot::Mutex;
use std::collections::HashMap;
use std::sync::Arc;

/// Replays fixed continuations. The k-th call for a conversation returns
/// the k-th entry of the fixture that applies to it (an exact conversation
/// fixture, else a per-problem fixture, else the default one), cut at the
/// first requested stop sequence and at the token budget.
///
/// Every token gets the same log-probability, `-ln V` for the configured
/// vocabulary size `V`.
#[derive(Debug)]
pub struct ScriptedPolicy {
    tags: TagSet,
    vocab_size: f64,
    default: Option<Arc<Vec<String>>>,
    by_problem: HashMap<String, Arc<Vec<String>>>,
    by_conversation: HashMap<ConversationKey, Arc<Vec<String>>>,
    calls: Mutex<HashMap<ConversationKey, usize>>,
}

fn checked(fixture: Vec<String>) -> Result<Arc<Vec<String>>, PolicyError> {
    if fixture.is_empty() {
        return Err(PolicyError::EmptyFixture);
    }
    Ok(Arc::new(fixture))
}

impl ScriptedPolicy {
    pub const DEFAULT_VOCAB_SIZE: f64 = 32_000.0;

    /// One fixture shared by every conversation.
    pub fn from_fixture<S: Into<String>>(fixture: impl IntoIterator<Item = S>) -> Result<Self, PolicyError> {
        let mut p = Self::keyed();
        p.default = Some(checked(fixture.into_iter().map(Into::into).collect())?);
        Ok(p)
    }

    /// No default fixture; conversations must be registered explicitly.
    pub fn keyed() -> Self {
        Self {
            tags: TagSet::default(),
            vocab_size: Self::DEFAULT_VOCAB_SIZE,
            default: None,
            by_problem: HashMap::new(),
            by_conversation: HashMap::new(),
            calls: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_problem<S: Into<String>>(
        mut self,
        problem_id: impl Into<String>,
        fixture: impl IntoIterator<Item = S>,
    ) -> Result<Self, PolicyError> {
        let f = checked(fixture.into_iter().map(Into::into).collect())?;
        self.by_problem.insert(problem_id.into(), f);
        Ok(self)
    }

    pub fn with_conversation<S: Into<String>>(
        mut self,
        key: ConversationKey,
        fixture: impl IntoIterator<Item = S>,
    ) -> Result<Self, PolicyError> {
        let f = checked(fixture.into_iter().map(Into::into).collect())?;
        self.by_conversation.insert(key, f);
        Ok(self)
    }

    /// `v` must be finite and at least 1.
    pub fn with_vocab_size(mut self, v: f64) -> Result<Self, PolicyError> {
        if !(v.is_finite() && v >= 1.0) {
            return Err(PolicyError::InvalidRequest(format!("vocabulary size {v} must be finite and >= 1")));
        }
        self.vocab_size = v;
        Ok(self)
    }

    pub fn with_tags(mut self, tags: TagSet) -> Self {
        self.tags = tags;
        self
    }

    /// Successful calls served so far for `key`.
    pub fn calls(&self, key: &ConversationKey) -> usize {
        self.calls.lock().get(key).copied().unwrap_or(0)
    }

    /// Forgets all per-conversation progress.
    pub fn reset(&self) {
        self.calls.lock().clear();
    }

    fn fixture_for(&self, key: &ConversationKey) -> Option<&Arc<Vec<String>>> {
        self.by_conversation.get(key).or_else(|| self.by_problem.get(&key.problem_id)).or(self.default.as_ref())
    }
}

impl Policy for ScriptedPolicy {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, PolicyError> {
        if req.max_new_tokens <= 0 {
            return Err(PolicyError::BudgetExceeded);
        }
        let mut parser = Parser::new(self.tags.clone());
        if let Some(ParseEvent::ProtocolError(e)) =
            parser.feed(&req.prefix).into_iter().find(|e| matches!(e, ParseEvent::ProtocolError(_)))
        {
            return Err(PolicyError::InvalidRequest(format!("prefix does not parse: {e}")));
        }
        let fixture = self
            .fixture_for(&req.conversation)
            .ok_or_else(|| PolicyError::InvalidRequest(format!("no fixture for {}", req.conversation)))?;
        let raw = {
            let mut calls = self.calls.lock();
            let k = calls.entry(req.conversation.clone()).or_insert(0);
            let Some(raw) = fixture.get(*k) else {
                return Err(PolicyError::FixtureExhausted { conversation: req.conversation.clone(), calls: *k });
            };
            *k += 1;
            raw.as_str()
        };
        let (mut text, mut stop_reason) = match first_stop(raw, &req.stop_sequences) {
            Some((end, m)) => (&raw[..end], StopReason::StopSequence(m.to_string())),
            None => (raw, StopReason::EndOfSequence),
        };
        let mut tokens = tokenize(text, &self.tags);
        let budget = usize::try_from(req.max_new_tokens).unwrap_or(usize::MAX);
        if tokens.len() > budget {
            tokens.truncate(budget);
            text = &text[..tokens.iter().map(|t| t.len()).sum::<usize>()];
            stop_reason = StopReason::Length;
        }
        let lp = -self.vocab_size.ln();
        let token_logprobs = tokens.iter().map(|t| TokenLogprob { token: t.to_string(), logprob: lp }).collect();
        Ok(GenerationResult { text: text.to_string(), stop_reason, token_logprobs: Some(token_logprobs) })
    }
}
