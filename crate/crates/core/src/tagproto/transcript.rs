use super::parser::{ParseEvent, Parser, ParserState, ProtocolError};
use super::{Origin, Segment, SegmentKind, TagSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lifecycle of a transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Thinking,
    /// The think block is closed and the answer has not been produced yet.
    ThinkClosed,
    Answered,
    /// Stopped by the runtime. Serializes exactly like `Thinking`.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("segment {index}: {reason}")]
    Ordering { index: usize, reason: &'static str },
    #[error("segment {index} contains a tag marker")]
    MarkerInText { index: usize },
    #[error("phase {phase:?} is inconsistent with the segments")]
    Phase { phase: Phase },
    #[error(transparent)]
    Parse(#[from] ProtocolError),
}

/// The shared reasoning history: ordered segments plus a phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    segments: Vec<Segment>,
    phase: Phase,
}

/// One contiguous slice of the serialized transcript, labelled with who
/// produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub text: String,
    pub origin: Origin,
    pub kind: Option<SegmentKind>,
}

impl Default for Transcript {
    fn default() -> Self {
        Self::new()
    }
}

impl Transcript {
    pub fn new() -> Self {
        Self { segments: Vec::new(), phase: Phase::Thinking }
    }

    /// Starts a history from the user's prompt. An empty prompt adds no
    /// segment.
    pub fn with_prompt(prompt: &str) -> Self {
        let mut t = Self::new();
        if !prompt.is_empty() {
            t.segments.push(Segment::prompt(prompt));
        }
        t
    }

    /// Builds a transcript from parts and checks every structural rule
    /// except marker freedom (which needs a [`TagSet`]).
    pub fn from_parts(segments: Vec<Segment>, phase: Phase) -> Result<Self, TranscriptError> {
        let t = Self { segments, phase };
        t.check_structure()?;
        Ok(t)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn code_cells(&self) -> usize {
        self.segments.iter().filter(|s| s.kind == SegmentKind::Code).count()
    }

    /// Appends model reasoning, merging with a directly preceding model
    /// reasoning segment.
    pub fn push_reasoning(&mut self, text: &str) {
        if text.is_empty() {
            return;
        }
        if let Some(last) = self.segments.last_mut() {
            if last.kind == SegmentKind::Reasoning && last.origin == Origin::Model {
                last.text.push_str(text);
                return;
            }
        }
        self.segments.push(Segment::reasoning(text));
    }

    pub fn push_code(&mut self, text: &str) {
        self.segments.push(Segment::code(text));
    }

    pub fn push_output(&mut self, text: &str) -> Result<(), TranscriptError> {
        match self.segments.last() {
            Some(s) if s.kind == SegmentKind::Code => {
                self.segments.push(Segment::output(text));
                Ok(())
            }
            _ => Err(TranscriptError::Ordering {
                index: self.segments.len(),
                reason: "execution output must follow a code cell",
            }),
        }
    }

    pub fn close_think(&mut self) -> Result<(), TranscriptError> {
        if self.phase != Phase::Thinking {
            return Err(TranscriptError::Phase { phase: self.phase });
        }
        self.phase = Phase::ThinkClosed;
        Ok(())
    }

    pub fn set_answer(&mut self, text: &str) -> Result<(), TranscriptError> {
        if self.phase != Phase::ThinkClosed {
            return Err(TranscriptError::Phase { phase: self.phase });
        }
        self.segments.push(Segment::answer(text));
        self.phase = Phase::Answered;
        Ok(())
    }

    pub fn abort(&mut self) {
        if self.phase == Phase::Thinking {
            self.phase = Phase::Aborted;
        }
    }

    /// The answer text trimmed of surrounding whitespace, when answered.
    pub fn extract_answer(&self) -> Option<String> {
        if self.phase != Phase::Answered {
            return None;
        }
        self.segments.iter().find(|s| s.kind == SegmentKind::Answer).map(|s| s.text.trim().to_string())
    }

    fn check_structure(&self) -> Result<(), TranscriptError> {
        let mut answers = 0;
        for (index, seg) in self.segments.iter().enumerate() {
            let prev = index.checked_sub(1).map(|i| &self.segments[i]);
            let bad = |reason| Err(TranscriptError::Ordering { index, reason });
            match (seg.kind, seg.origin) {
                (SegmentKind::Reasoning, Origin::Prompt) => {
                    if index != 0 {
                        return bad("prompt text must come first");
                    }
                    if seg.text.is_empty() {
                        return bad("empty prompt segment");
                    }
                }
                (SegmentKind::Reasoning, Origin::Model) => {
                    if seg.text.is_empty() {
                        return bad("empty reasoning segment");
                    }
                    if matches!(prev, Some(p) if p.kind == SegmentKind::Reasoning && p.origin == Origin::Model) {
                        return bad("adjacent reasoning segments");
                    }
                }
                (SegmentKind::Reasoning, Origin::Environment) => {
                    return bad("reasoning cannot come from the environment")
                }
                (SegmentKind::Code, Origin::Model) => {}
                (SegmentKind::Code, _) => return bad("code must come from the model"),
                (SegmentKind::ExecutionOutput, Origin::Environment) => {
                    if !matches!(prev, Some(p) if p.kind == SegmentKind::Code) {
                        return bad("execution output must follow a code cell");
                    }
                }
                (SegmentKind::ExecutionOutput, _) => return bad("execution output must come from the environment"),
                (SegmentKind::Answer, Origin::Model) => {
                    answers += 1;
                    if index + 1 != self.segments.len() {
                        return bad("answer must be the last segment");
                    }
                }
                (SegmentKind::Answer, _) => return bad("answer must come from the model"),
            }
        }
        let consistent = match self.phase {
            Phase::Answered => answers == 1,
            _ => answers == 0,
        };
        if !consistent || answers > 1 {
            return Err(TranscriptError::Phase { phase: self.phase });
        }
        Ok(())
    }

    /// Full validation against a tag set.
    pub fn validate(&self, tags: &TagSet) -> Result<(), TranscriptError> {
        self.check_structure()?;
        for (index, seg) in self.segments.iter().enumerate() {
            if tags.contains_marker(&seg.text) {
                return Err(TranscriptError::MarkerInText { index });
            }
        }
        Ok(())
    }

    /// The serialized stream cut into origin-labelled pieces. Concatenating
    /// the piece texts yields [`Transcript::serialize`].
    pub fn pieces(&self, tags: &TagSet) -> Result<Vec<Piece>, TranscriptError> {
        self.validate(tags)?;
        let mut out = Vec::with_capacity(self.segments.len() * 3 + 3);
        let marker = |text: &str, origin| Piece { text: text.to_string(), origin, kind: None };
        let body = |seg: &Segment| Piece { text: seg.text.clone(), origin: seg.origin, kind: Some(seg.kind) };
        let mut rest = &self.segments[..];
        if let Some(first) = rest.first() {
            if first.origin == Origin::Prompt {
                out.push(body(first));
                rest = &rest[1..];
            }
        }
        out.push(marker(&tags.think_open, Origin::Model));
        for seg in rest {
            match seg.kind {
                SegmentKind::Reasoning => out.push(body(seg)),
                SegmentKind::Code => {
                    out.push(marker(&tags.code_open, Origin::Model));
                    out.push(body(seg));
                    out.push(marker(&tags.code_close, Origin::Model));
                }
                SegmentKind::ExecutionOutput => {
                    out.push(marker(&tags.output_open, Origin::Environment));
                    out.push(body(seg));
                    out.push(marker(&tags.output_close, Origin::Environment));
                }
                SegmentKind::Answer => {
                    out.push(marker(&tags.think_close, Origin::Model));
                    out.push(marker(&tags.answer_open, Origin::Model));
                    out.push(body(seg));
                    out.push(marker(&tags.answer_close, Origin::Model));
                }
            }
        }
        if self.phase == Phase::ThinkClosed {
            out.push(marker(&tags.think_close, Origin::Model));
        }
        out.retain(|p| !p.text.is_empty());
        Ok(out)
    }

    /// The exact prompt-ready stream text.
    pub fn serialize(&self, tags: &TagSet) -> Result<String, TranscriptError> {
        Ok(self.pieces(tags)?.into_iter().map(|p| p.text).collect())
    }

    /// Parses a complete stream. The resulting phase is `Thinking`,
    /// `ThinkClosed` or `Answered`; `Aborted` is never produced.
    pub fn parse(text: &str, tags: &TagSet) -> Result<Self, TranscriptError> {
        let mut parser = Parser::new(tags.clone());
        let mut events = parser.feed(text);
        events.extend(parser.finish());
        let mut segments = Vec::new();
        for ev in events {
            match ev {
                ParseEvent::SegmentComplete(s) => segments.push(s),
                ParseEvent::NeedMoreInput => {}
                ParseEvent::ProtocolError(e) => return Err(e.into()),
            }
        }
        let phase = match parser.state() {
            ParserState::Think => Phase::Thinking,
            ParserState::AfterThink => Phase::ThinkClosed,
            ParserState::Done => Phase::Answered,
            _ => unreachable!("finish() reports every other terminal state"),
        };
        Self::from_parts(segments, phase)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags() -> TagSet {
        TagSet::default()
    }

    #[test]
    fn single_reasoning_segment() {
        let t = Transcript::from_parts(vec![Segment::reasoning("hi")], Phase::Thinking).unwrap();
        assert_eq!(t.serialize(&tags()).unwrap(), "<think>hi");
    }

    #[test]
    fn canonical_ordering() {
        let t = Transcript::from_parts(
            vec![Segment::reasoning("r"), Segment::code("c"), Segment::output("o")],
            Phase::Thinking,
        )
        .unwrap();
        assert_eq!(t.serialize(&tags()).unwrap(), "<think>r<code>c</code><output>o</output>");
    }

    #[test]
    fn six_segment_round_trip() {
        let t = Transcript::from_parts(
            vec![
                Segment::prompt("Q: 2+2?"),
                Segment::reasoning("plan"),
                Segment::code("print(2+2)"),
                Segment::output("4\n"),
                Segment::reasoning("done"),
                Segment::answer("4"),
            ],
            Phase::Answered,
        )
        .unwrap();
        let s = t.serialize(&tags()).unwrap();
        assert_eq!(s, "Q: 2+2?<think>plan<code>print(2+2)</code><output>4\n</output>done</think><answer>4</answer>");
        assert_eq!(Transcript::parse(&s, &tags()).unwrap(), t);
    }

    #[test]
    fn answer_is_trimmed() {
        let t = Transcript::parse("<think>x</think><answer> 42 </answer>", &tags()).unwrap();
        assert_eq!(t.extract_answer().as_deref(), Some("42"));
    }

    #[test]
    fn aborted_has_no_answer() {
        let mut t = Transcript::with_prompt("p");
        t.push_reasoning("r");
        t.abort();
        assert_eq!(t.phase(), Phase::Aborted);
        assert_eq!(t.extract_answer(), None);
        assert_eq!(t.serialize(&tags()).unwrap(), "p<think>r");
    }

    #[test]
    fn answer_terminated_trace() {
        let s = "Find the answer.<think>Let me compute.<code>x = sum(range(5))\nprint(x)</code><output>10\n</output>So it is 10.</think><answer>10</answer>";
        let t = Transcript::parse(s, &tags()).unwrap();
        assert_eq!(t.phase(), Phase::Answered);
        assert_eq!(t.extract_answer().as_deref(), Some("10"));
        assert_eq!(t.code_cells(), 1);
    }

    #[test]
    fn rejects_bad_orderings() {
        assert!(Transcript::from_parts(vec![Segment::output("o")], Phase::Thinking).is_err());
        assert!(
            Transcript::from_parts(vec![Segment::reasoning("a"), Segment::reasoning("b")], Phase::Thinking).is_err()
        );
        assert!(Transcript::from_parts(vec![Segment::answer("a")], Phase::Thinking).is_err());
        assert!(Transcript::from_parts(vec![Segment::answer("a"), Segment::reasoning("b")], Phase::Answered).is_err());
        assert!(Transcript::from_parts(vec![Segment::reasoning("a"), Segment::prompt("p")], Phase::Thinking).is_err());
        let t = Transcript::from_parts(vec![Segment::reasoning("a<code>b")], Phase::Thinking).unwrap();
        assert!(matches!(t.serialize(&tags()), Err(TranscriptError::MarkerInText { index: 0 })));
    }

    #[test]
    fn think_closed_round_trip() {
        let s = "p<think>r<code></code><output></output></think>";
        let t = Transcript::parse(s, &tags()).unwrap();
        assert_eq!(t.phase(), Phase::ThinkClosed);
        assert_eq!(t.segments().len(), 4);
        assert_eq!(t.serialize(&tags()).unwrap(), s);
    }

    #[test]
    fn push_reasoning_merges() {
        let mut t = Transcript::new();
        t.push_reasoning("a");
        t.push_reasoning("b");
        assert_eq!(t.segments(), &[Segment::reasoning("ab")]);
        assert!(t.push_output("x").is_err());
    }
}
