//! Tag wire format of the reasoning stream.
//!
//! A stream looks like
//!
//! ```text
//! <prompt><think>reasoning<code>cell</code><output>feedback</output>more</think><answer>final</answer>
//! ```
//!
//! The same grammar is used by the reasoning loop (to cut model turns into
//! segments), by the loss-mask builder (to locate environment spans) and by
//! the metrics (to count code cells), so all of them agree byte-for-byte.

mod parser;
mod transcript;

pub use parser::{parse_turn, ParseEvent, Parser, ParserState, ProtocolError, TurnShape};
pub use transcript::{Phase, Piece, Transcript, TranscriptError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The eight literal markers of the stream grammar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet {
    pub think_open: String,
    pub think_close: String,
    pub code_open: String,
    pub code_close: String,
    pub answer_open: String,
    pub answer_close: String,
    pub output_open: String,
    pub output_close: String,
}

impl Default for TagSet {
    fn default() -> Self {
        Self {
            think_open: "<think>".into(),
            think_close: "</think>".into(),
            code_open: "<code>".into(),
            code_close: "</code>".into(),
            answer_open: "<answer>".into(),
            answer_close: "</answer>".into(),
            output_open: "<output>".into(),
            output_close: "</output>".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagSetError {
    #[error("marker {0} is empty")]
    Empty(Marker),
    #[error("markers {0} and {1} are identical")]
    Duplicate(Marker, Marker),
    #[error("marker {inner} occurs inside marker {outer}")]
    Overlap { inner: Marker, outer: Marker },
}

/// Identifies one of the eight markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Marker {
    ThinkOpen,
    ThinkClose,
    CodeOpen,
    CodeClose,
    AnswerOpen,
    AnswerClose,
    OutputOpen,
    OutputClose,
}

impl Marker {
    pub const ALL: [Marker; 8] = [
        Marker::ThinkOpen,
        Marker::ThinkClose,
        Marker::CodeOpen,
        Marker::CodeClose,
        Marker::AnswerOpen,
        Marker::AnswerClose,
        Marker::OutputOpen,
        Marker::OutputClose,
    ];
}

impl std::fmt::Display for Marker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Marker::ThinkOpen => "think_open",
            Marker::ThinkClose => "think_close",
            Marker::CodeOpen => "code_open",
            Marker::CodeClose => "code_close",
            Marker::AnswerOpen => "answer_open",
            Marker::AnswerClose => "answer_close",
            Marker::OutputOpen => "output_open",
            Marker::OutputClose => "output_close",
        };
        f.write_str(name)
    }
}

impl TagSet {
    pub fn marker(&self, which: Marker) -> &str {
        match which {
            Marker::ThinkOpen => &self.think_open,
            Marker::ThinkClose => &self.think_close,
            Marker::CodeOpen => &self.code_open,
            Marker::CodeClose => &self.code_close,
            Marker::AnswerOpen => &self.answer_open,
            Marker::AnswerClose => &self.answer_close,
            Marker::OutputOpen => &self.output_open,
            Marker::OutputClose => &self.output_close,
        }
    }

    /// Checks the markers are non-empty, distinct, and that none occurs
    /// inside another.
    pub fn validate(&self) -> Result<(), TagSetError> {
        for m in Marker::ALL {
            if self.marker(m).is_empty() {
                return Err(TagSetError::Empty(m));
            }
        }
        for (i, a) in Marker::ALL.iter().enumerate() {
            for b in &Marker::ALL[i + 1..] {
                let (sa, sb) = (self.marker(*a), self.marker(*b));
                if sa == sb {
                    return Err(TagSetError::Duplicate(*a, *b));
                }
                if sb.contains(sa) {
                    return Err(TagSetError::Overlap { inner: *a, outer: *b });
                }
                if sa.contains(sb) {
                    return Err(TagSetError::Overlap { inner: *b, outer: *a });
                }
            }
        }
        Ok(())
    }

    /// Returns true when `text` contains any of the eight markers.
    pub fn contains_marker(&self, text: &str) -> bool {
        Marker::ALL.iter().any(|m| text.contains(self.marker(*m)))
    }

    /// Earliest marker occurrence in `text` (byte offset and which marker).
    pub fn find_marker(&self, text: &str) -> Option<(usize, Marker)> {
        let bytes = text.as_bytes();
        (0..bytes.len()).find_map(|i| {
            // a marker is valid UTF-8, so a byte match starts on a char boundary
            Marker::ALL
                .iter()
                .filter(|m| bytes[i..].starts_with(self.marker(**m).as_bytes()))
                .max_by_key(|m| self.marker(**m).len())
                .map(|m| (i, *m))
        })
    }

    /// Length of the longest suffix of `text` that is a proper prefix of some
    /// marker; that many trailing bytes might still become a marker.
    pub(crate) fn partial_marker_suffix(&self, text: &str) -> usize {
        let longest = Marker::ALL.iter().map(|m| self.marker(*m).len()).max().unwrap_or(0);
        let upper = longest.saturating_sub(1).min(text.len());
        for len in (1..=upper).rev() {
            let start = text.len() - len;
            if !text.is_char_boundary(start) {
                continue;
            }
            let suffix = &text[start..];
            if Marker::ALL.iter().any(|m| self.marker(*m).starts_with(suffix)) {
                return len;
            }
        }
        0
    }
}

/// What a segment of the transcript holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    Reasoning,
    Code,
    ExecutionOutput,
    Answer,
}

/// Who produced a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Model,
    Environment,
    Prompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
    pub origin: Origin,
}

impl Segment {
    pub fn prompt(text: impl Into<String>) -> Self {
        Self { kind: SegmentKind::Reasoning, text: text.into(), origin: Origin::Prompt }
    }

    pub fn reasoning(text: impl Into<String>) -> Self {
        Self { kind: SegmentKind::Reasoning, text: text.into(), origin: Origin::Model }
    }

    pub fn code(text: impl Into<String>) -> Self {
        Self { kind: SegmentKind::Code, text: text.into(), origin: Origin::Model }
    }

    pub fn output(text: impl Into<String>) -> Self {
        Self { kind: SegmentKind::ExecutionOutput, text: text.into(), origin: Origin::Environment }
    }

    pub fn answer(text: impl Into<String>) -> Self {
        Self { kind: SegmentKind::Answer, text: text.into(), origin: Origin::Model }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tags_are_valid() {
        TagSet::default().validate().unwrap();
    }

    #[test]
    fn overlapping_markers_rejected() {
        let tags = TagSet { output_open: "<code>x".into(), ..TagSet::default() };
        assert!(matches!(tags.validate(), Err(TagSetError::Overlap { .. })));
        let tags = TagSet { answer_open: "<code>".into(), ..TagSet::default() };
        assert!(matches!(tags.validate(), Err(TagSetError::Duplicate(..))));
        let tags = TagSet { answer_open: String::new(), ..TagSet::default() };
        assert!(matches!(tags.validate(), Err(TagSetError::Empty(Marker::AnswerOpen))));
    }

    #[test]
    fn partial_suffix() {
        let tags = TagSet::default();
        assert_eq!(tags.partial_marker_suffix("abc</th"), 4);
        assert_eq!(tags.partial_marker_suffix("abc<"), 1);
        assert_eq!(tags.partial_marker_suffix("abc<b"), 0);
        assert_eq!(tags.partial_marker_suffix("abc"), 0);
        assert_eq!(tags.partial_marker_suffix("é<"), 1);
    }

    #[test]
    fn find_marker_picks_earliest() {
        let tags = TagSet::default();
        assert_eq!(tags.find_marker("x</code>y<code>"), Some((1, Marker::CodeClose)));
        assert_eq!(tags.find_marker("nothing"), None);
    }
}
