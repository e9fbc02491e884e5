//! The reasoning loop: generate a turn, run its code cell, feed the result
//! back, and repeat until the model closes its think block. The runtime
//! then opens the answer block and asks for one more generation.
//!
//! Failures never escape [`Reasoner::solve`]; they end the trajectory with a
//! terminal [`TrajectoryStatus`] so one bad sample cannot abort a batch.

use crate::policy::TokenLogprob;
use crate::policy::{ConversationKey, GenerationRequest, GenerationResult, Policy, PolicyError, StopReason};
use crate::sandbox::{ErrorKind, ExecutionResult, SandboxError, SandboxManager, SessionId};
use crate::tagproto::{parse_turn, Phase, ProtocolError, TagSet, Transcript, TranscriptError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Appended in place of a code cell that generation cut off before its
/// close marker. The cell is not executed.
pub const UNTERMINATED_CODE_NOTE: &str = "\n[unterminated code block was not executed]\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerLimits {
    pub max_turns: usize,
    pub max_history_chars: usize,
    pub answer_max_tokens: usize,
    /// Token budget for one thinking turn.
    pub turn_max_tokens: usize,
}

impl Default for ReasonerLimits {
    fn default() -> Self {
        Self { max_turns: 16, max_history_chars: 65536, answer_max_tokens: 1024, turn_max_tokens: 4096 }
    }
}

impl ReasonerLimits {
    pub fn validate(&self) -> Result<(), ReasonerError> {
        let all = [self.max_turns, self.max_history_chars, self.answer_max_tokens, self.turn_max_tokens];
        if all.contains(&0) {
            return Err(ReasonerError::InvalidLimits(*self));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrajectoryStatus {
    Answered,
    TurnLimit,
    HistoryLimit,
    PolicyError,
    SandboxDead,
    /// The model's own output broke the tag grammar.
    ProtocolViolation,
}

/// Generated text and token log-probabilities of one policy call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub text: String,
    pub answer_phase: bool,
    pub tokens: Vec<TokenLogprob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transcript: Transcript,
    pub answer: Option<String>,
    pub status: TrajectoryStatus,
    /// Thinking-phase policy calls.
    pub turns_used: usize,
    pub code_cells: usize,
    /// One record per policy call, present when every call reported
    /// log-probabilities.
    pub token_logprobs: Option<Vec<TurnRecord>>,
    /// What ended a non-answered trajectory.
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReasonerError {
    #[error("prompt must be non-empty")]
    EmptyPrompt,
    #[error("prompt contains a tag marker")]
    MarkerInPrompt,
    #[error("limits must all be positive: {0:?}")]
    InvalidLimits(ReasonerLimits),
}

/// Why a single step could not complete.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("step requires the thinking phase, found {0:?}")]
    NotThinking(Phase),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("model turn breaks the protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

/// Result of one thinking step.
#[derive(Debug, Clone)]
pub struct Step {
    pub transcript: Transcript,
    /// False once the model closed its think block.
    pub proceed: bool,
    pub generation: GenerationResult,
    /// Set when the step ran a cell.
    pub execution: Option<ExecutionResult>,
}

/// Replaces the first character of every tag marker in `text` so that
/// program output cannot inject protocol structure.
pub fn escape_markers(text: &str, tags: &TagSet) -> String {
    let mut out = text.to_string();
    while let Some((at, m)) = tags.find_marker(&out) {
        let first = tags.marker(m).chars().next().expect("markers are non-empty");
        let esc = if first == '<' { "&lt;".to_string() } else { format!("&#{};", first as u32) };
        out.replace_range(at..at + first.len_utf8(), &esc);
    }
    out
}

pub struct Reasoner<'a> {
    policy: &'a dyn Policy,
    sandbox: &'a SandboxManager,
    tags: TagSet,
    limits: ReasonerLimits,
    temperature: f64,
}

impl<'a> Reasoner<'a> {
    /// Greedy decoding with default limits and tags.
    pub fn new(policy: &'a dyn Policy, sandbox: &'a SandboxManager) -> Self {
        Self { policy, sandbox, tags: TagSet::default(), limits: ReasonerLimits::default(), temperature: 0.0 }
    }

    pub fn with_limits(mut self, limits: ReasonerLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_tags(mut self, tags: TagSet) -> Self {
        self.tags = tags;
        self
    }

    pub fn tags(&self) -> &TagSet {
        &self.tags
    }

    pub fn limits(&self) -> &ReasonerLimits {
        &self.limits
    }

    /// One model turn inside the think block, plus the execution of its
    /// code cell when the turn ended on the code-close marker.
    pub fn step(
        &self,
        conversation: &ConversationKey,
        history: Transcript,
        session: SessionId,
    ) -> Result<Step, StepError> {
        if history.phase() != Phase::Thinking {
            return Err(StepError::NotThinking(history.phase()));
        }
        let tags = &self.tags;
        let request = GenerationRequest {
            conversation: conversation.clone(),
            prefix: history.serialize(tags)?,
            stop_sequences: vec![tags.code_close.clone(), tags.think_close.clone()],
            max_new_tokens: self.limits.turn_max_tokens as i64,
            temperature: self.temperature,
        };
        let generation = self.policy.generate(&request)?;
        let shape = parse_turn(&generation.text, tags)?;
        let mut t = history;
        let mut execution = None;
        t.push_reasoning(&shape.reasoning);
        if let Some(code) = shape.code {
            t.push_code(&code);
            if code.trim().is_empty() {
                // nothing to run: record an empty result
                t.push_output("")?;
            } else {
                let r = self.sandbox.execute_cell(session, &code)?;
                t.push_output(&escape_markers(&r.feedback(), tags))?;
                execution = Some(r);
            }
        } else if let Some(partial) = shape.unterminated_code {
            t.push_reasoning(&partial);
            t.push_reasoning(UNTERMINATED_CODE_NOTE);
        }
        let proceed = !shape.think_closed;
        if shape.think_closed {
            t.close_think()?;
        }
        Ok(Step { transcript: t, proceed, generation, execution })
    }

    /// Runs the whole loop for one prompt on a caller-owned session.
    pub fn solve(
        &self,
        conversation: &ConversationKey,
        prompt: &str,
        session: SessionId,
    ) -> Result<Trajectory, ReasonerError> {
        self.limits.validate()?;
        if prompt.trim().is_empty() {
            return Err(ReasonerError::EmptyPrompt);
        }
        if self.tags.contains_marker(prompt) {
            return Err(ReasonerError::MarkerInPrompt);
        }
        let mut run = Run { t: Transcript::with_prompt(prompt), turns: 0, records: Some(Vec::new()) };
        let end = self.think(conversation, session, &mut run).and_then(|()| self.answer(conversation, &mut run));
        let (status, detail) = match end {
            Ok(()) => (TrajectoryStatus::Answered, None),
            Err((s, d)) => {
                run.t.abort();
                (s, Some(d))
            }
        };
        let answer = run.t.extract_answer();
        Ok(Trajectory {
            code_cells: run.t.code_cells(),
            transcript: run.t,
            answer,
            status,
            turns_used: run.turns,
            token_logprobs: run.records,
            detail,
        })
    }

    fn over_history(&self, t: &Transcript) -> bool {
        t.serialize(&self.tags).map(|s| s.chars().count() > self.limits.max_history_chars).unwrap_or(true)
    }

    fn think(&self, conversation: &ConversationKey, session: SessionId, run: &mut Run) -> Result<(), Stop> {
        while run.t.phase() == Phase::Thinking {
            if run.turns >= self.limits.max_turns {
                return Err((TrajectoryStatus::TurnLimit, format!("no think close after {} turns", run.turns)));
            }
            run.turns += 1;
            match self.step(conversation, run.t.clone(), session) {
                Ok(step) => {
                    run.record(&step.generation, false);
                    run.t = step.transcript;
                    if step.execution.is_some_and(|r| r.error_kind == ErrorKind::WorkerCrash) {
                        return Err((TrajectoryStatus::SandboxDead, "worker crashed".into()));
                    }
                }
                Err(e) => return Err(classify(e)),
            }
            if self.over_history(&run.t) {
                return Err((
                    TrajectoryStatus::HistoryLimit,
                    format!("history exceeds {} chars", self.limits.max_history_chars),
                ));
            }
        }
        Ok(())
    }

    fn answer(&self, conversation: &ConversationKey, run: &mut Run) -> Result<(), Stop> {
        let tags = &self.tags;
        let prefix = run.t.serialize(tags).map_err(|e| classify(e.into()))? + &tags.answer_open;
        let request = GenerationRequest {
            conversation: conversation.clone(),
            prefix,
            stop_sequences: vec![tags.answer_close.clone()],
            max_new_tokens: self.limits.answer_max_tokens as i64,
            temperature: self.temperature,
        };
        let g = self.policy.generate(&request).map_err(|e| classify(e.into()))?;
        run.record(&g, true);
        let mut text = g.text.as_str();
        // the runtime already opened the block; tolerate a model that repeats it
        text = text.strip_prefix(tags.answer_open.as_str()).unwrap_or(text);
        if let StopReason::StopSequence(m) = &g.stop_reason {
            text = text.strip_suffix(m.as_str()).unwrap_or(text);
        }
        if tags.contains_marker(text) {
            return Err((TrajectoryStatus::ProtocolViolation, "marker inside the answer".into()));
        }
        run.t.set_answer(text).map_err(|e| classify(e.into()))
    }
}

type Stop = (TrajectoryStatus, String);

struct Run {
    t: Transcript,
    turns: usize,
    records: Option<Vec<TurnRecord>>,
}

impl Run {
    fn record(&mut self, g: &GenerationResult, answer_phase: bool) {
        match (&mut self.records, &g.token_logprobs) {
            (Some(rs), Some(tokens)) => {
                rs.push(TurnRecord { text: g.text.clone(), answer_phase, tokens: tokens.clone() })
            }
            _ => self.records = None,
        }
    }
}

fn classify(e: StepError) -> Stop {
    let status = match &e {
        StepError::Policy(_) => TrajectoryStatus::PolicyError,
        StepError::Sandbox(_) => TrajectoryStatus::SandboxDead,
        StepError::Protocol(_) | StepError::Transcript(_) | StepError::NotThinking(_) => {
            TrajectoryStatus::ProtocolViolation
        }
    };
    (status, e.to_string())
}
