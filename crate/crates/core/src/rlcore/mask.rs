//! Which parts of a serialized transcript carry training signal.
//!
//! Everything the model emitted is trainable, tag markers included. The
//! prompt and every execution-output block (delimiters included) are not.
//! Offsets are byte offsets into the serialized text.

use crate::policy::tokenize;
use crate::tagproto::{Origin, TagSet, Transcript, TranscriptError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpan {
    pub start: usize,
    pub end: usize,
    pub trainable: bool,
}

/// Ordered spans tiling the serialized transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossMask {
    pub spans: Vec<MaskSpan>,
}

impl LossMask {
    /// Total length covered.
    pub fn len(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_trainable_at(&self, offset: usize) -> Option<bool> {
        self.spans.iter().find(|s| s.start <= offset && offset < s.end).map(|s| s.trainable)
    }

    pub fn trainable_bytes(&self) -> usize {
        self.spans.iter().filter(|s| s.trainable).map(|s| s.end - s.start).sum()
    }
}

pub fn build_loss_mask(transcript: &Transcript, tags: &TagSet) -> Result<LossMask, TranscriptError> {
    let mut spans: Vec<MaskSpan> = Vec::new();
    let mut at = 0;
    for piece in transcript.pieces(tags)? {
        if piece.text.is_empty() {
            continue;
        }
        let trainable = piece.origin == Origin::Model;
        let end = at + piece.text.len();
        match spans.last_mut() {
            Some(last) if last.trainable == trainable => last.end = end,
            _ => spans.push(MaskSpan { start: at, end, trainable }),
        }
        at = end;
    }
    Ok(LossMask { spans })
}

/// Per-token trainability under the policy token partition. Span edges
/// always fall on marker boundaries, and markers are single tokens, so no
/// token straddles two spans.
pub fn token_mask(transcript: &Transcript, tags: &TagSet) -> Result<Vec<(String, bool)>, TranscriptError> {
    let mask = build_loss_mask(transcript, tags)?;
    let text = transcript.serialize(tags)?;
    let mut out = Vec::new();
    let mut at = 0;
    for tok in tokenize(&text, tags) {
        out.push((tok.to_string(), mask.is_trainable_at(at).unwrap_or(false)));
        at += tok.len();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outputs_and_prompt_are_masked() {
        let tags = TagSet::default();
        let mut t = Transcript::with_prompt("p");
        t.push_reasoning("r");
        t.push_code("c");
        t.push_output("o").unwrap();
        t.close_think().unwrap();
        t.set_answer("a").unwrap();
        let text = t.serialize(&tags).unwrap();
        assert_eq!(text, "p<think>r<code>c</code><output>o</output></think><answer>a</answer>");
        let m = build_loss_mask(&t, &tags).unwrap();
        let parts: Vec<_> = m.spans.iter().map(|s| (&text[s.start..s.end], s.trainable)).collect();
        assert_eq!(
            parts,
            [
                ("p", false),
                ("<think>r<code>c</code>", true),
                ("<output>o</output>", false),
                ("</think><answer>a</answer>", true)
            ]
        );
    }

    #[test]
    fn no_code_means_prompt_only_masked() {
        let tags = TagSet::default();
        let mut t = Transcript::with_prompt("question");
        t.push_reasoning("easy");
        t.close_think().unwrap();
        t.set_answer("1").unwrap();
        let m = build_loss_mask(&t, &tags).unwrap();
        assert_eq!(m.spans.len(), 2);
        assert_eq!(m.spans[0], MaskSpan { start: 0, end: 8, trainable: false });
        assert!(m.spans[1].trainable);
        assert_eq!(m.len(), t.serialize(&tags).unwrap().len());
    }

    #[test]
    fn tokens_follow_spans() {
        let tags = TagSet::default();
        let mut t = Transcript::with_prompt("q");
        t.push_code("x=1");
        t.push_output("ok").unwrap();
        let toks = token_mask(&t, &tags).unwrap();
        let masked: Vec<_> = toks.iter().filter(|(_, tr)| !tr).map(|(t, _)| t.as_str()).collect();
        assert_eq!(masked, ["q", "<output>", "ok", "</output>"]);
    }
}
