use super::{Marker, Origin, Segment, SegmentKind, TagSet};
use thiserror::Error;

/// A grammar violation at an absolute byte offset of the stream.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("protocol error at byte {position}: {description}")]
pub struct ProtocolError {
    pub position: usize,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseEvent {
    SegmentComplete(Segment),
    NeedMoreInput,
    ProtocolError(ProtocolError),
}

/// Where the parser currently sits in the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParserState {
    /// Before the think marker; text here is prompt text.
    Prompt,
    Think,
    Code,
    Output,
    /// After the think close marker, waiting for the answer block.
    AfterThink,
    Answer,
    /// The answer block is closed; nothing else may follow.
    Done,
    Failed,
}

/// Incremental parser over one stream.
///
/// Feeding the whole stream at once or in arbitrary chunks yields the same
/// sequence of completed segments. Reasoning text is only emitted once a
/// marker (or [`Parser::finish`]) terminates it.
#[derive(Debug, Clone)]
pub struct Parser {
    tags: TagSet,
    state: ParserState,
    /// Unconsumed input; may end in a partial marker.
    buf: String,
    /// Absolute offset of `buf[0]` in the stream.
    offset: usize,
    /// Text accumulated for the segment being built.
    pending: String,
    last_kind: Option<SegmentKind>,
}

impl Parser {
    pub fn new(tags: TagSet) -> Self {
        Self {
            tags,
            state: ParserState::Prompt,
            buf: String::new(),
            offset: 0,
            pending: String::new(),
            last_kind: None,
        }
    }

    /// A parser already positioned inside the think block, for parsing a
    /// single model turn.
    pub fn within_think(tags: TagSet) -> Self {
        Self { state: ParserState::Think, ..Self::new(tags) }
    }

    pub fn state(&self) -> ParserState {
        self.state
    }

    pub fn tags(&self) -> &TagSet {
        &self.tags
    }

    /// Text accumulated for the segment currently open (excluding any
    /// held-back partial marker).
    pub fn pending_text(&self) -> &str {
        &self.pending
    }

    pub fn feed(&mut self, chunk: &str) -> Vec<ParseEvent> {
        let mut events = Vec::new();
        if self.state == ParserState::Failed {
            return events;
        }
        self.buf.push_str(chunk);
        let buf = std::mem::take(&mut self.buf);
        let mut at = 0;
        loop {
            let rest = &buf[at..];
            match self.tags.find_marker(rest) {
                Some((idx, marker)) => {
                    if let Err(e) = self.take_text(&rest[..idx], self.offset) {
                        self.buf = buf[at..].to_string();
                        self.fail(e, &mut events);
                        return events;
                    }
                    let pos = self.offset + idx;
                    let consumed = idx + self.tags.marker(marker).len();
                    at += consumed;
                    self.offset += consumed;
                    if let Err(e) = self.take_marker(marker, pos, &mut events) {
                        self.buf = buf[at..].to_string();
                        self.fail(e, &mut events);
                        return events;
                    }
                }
                None => {
                    let cut = rest.len() - self.tags.partial_marker_suffix(rest);
                    if let Err(e) = self.take_text(&rest[..cut], self.offset) {
                        self.buf = buf[at..].to_string();
                        self.fail(e, &mut events);
                        return events;
                    }
                    self.offset += cut;
                    self.buf = buf[at + cut..].to_string();
                    break;
                }
            }
        }
        if self.is_unterminated() {
            events.push(ParseEvent::NeedMoreInput);
        }
        events
    }

    /// Signals end of stream. Flushes trailing reasoning and reports blocks
    /// left open.
    pub fn finish(&mut self) -> Vec<ParseEvent> {
        let mut events = Vec::new();
        if self.state == ParserState::Failed {
            return events;
        }
        let rest = std::mem::take(&mut self.buf);
        let at = self.offset;
        self.offset += rest.len();
        if let Err(e) = self.take_text(&rest, at) {
            self.fail(e, &mut events);
            return events;
        }
        let end = self.offset;
        match self.state {
            ParserState::Think => {
                self.flush_reasoning(Origin::Model, &mut events);
            }
            ParserState::AfterThink | ParserState::Done => {}
            ParserState::Prompt => {
                self.fail(err(end, "stream ended before the think marker"), &mut events);
            }
            ParserState::Code => self.fail(err(end, "unterminated code cell"), &mut events),
            ParserState::Output => self.fail(err(end, "unterminated output block"), &mut events),
            ParserState::Answer => self.fail(err(end, "unterminated answer block"), &mut events),
            ParserState::Failed => {}
        }
        events
    }

    fn is_unterminated(&self) -> bool {
        !self.buf.is_empty()
            || !self.pending.is_empty()
            || matches!(self.state, ParserState::Code | ParserState::Output | ParserState::Answer)
    }

    fn fail(&mut self, e: ProtocolError, events: &mut Vec<ParseEvent>) {
        self.state = ParserState::Failed;
        events.push(ParseEvent::ProtocolError(e));
    }

    fn take_text(&mut self, text: &str, at: usize) -> Result<(), ProtocolError> {
        if text.is_empty() {
            return Ok(());
        }
        match self.state {
            ParserState::AfterThink => Err(err(at, "text between think close and answer")),
            ParserState::Done => Err(err(at, "text after the answer block")),
            ParserState::Failed => Ok(()),
            _ => {
                self.pending.push_str(text);
                Ok(())
            }
        }
    }

    fn flush_reasoning(&mut self, origin: Origin, events: &mut Vec<ParseEvent>) {
        if self.pending.is_empty() {
            return;
        }
        let text = std::mem::take(&mut self.pending);
        self.emit(Segment { kind: SegmentKind::Reasoning, text, origin }, events);
    }

    fn emit(&mut self, seg: Segment, events: &mut Vec<ParseEvent>) {
        self.last_kind = Some(seg.kind);
        events.push(ParseEvent::SegmentComplete(seg));
    }

    fn take_marker(&mut self, marker: Marker, pos: usize, events: &mut Vec<ParseEvent>) -> Result<(), ProtocolError> {
        use Marker::*;
        use ParserState as S;
        match (self.state, marker) {
            (S::Prompt, ThinkOpen) => {
                self.flush_reasoning(Origin::Prompt, events);
                self.state = S::Think;
            }
            // A stream may open a code cell without an explicit think marker.
            (S::Prompt, CodeOpen) => {
                self.flush_reasoning(Origin::Prompt, events);
                self.state = S::Code;
            }
            (S::Think, CodeOpen) => {
                self.flush_reasoning(Origin::Model, events);
                self.state = S::Code;
            }
            (S::Think, ThinkClose) => {
                self.flush_reasoning(Origin::Model, events);
                self.state = S::AfterThink;
            }
            (S::Think, OutputOpen) => {
                if !self.pending.is_empty() || self.last_kind != Some(SegmentKind::Code) {
                    return Err(err(pos, "output block does not follow a code cell"));
                }
                self.state = S::Output;
            }
            (S::Think | S::Prompt, AnswerOpen) => {
                return Err(err(pos, "answer opened while thinking"));
            }
            (S::Think, ThinkOpen) => return Err(err(pos, "nested think marker")),
            (S::Think | S::Prompt, CodeClose | OutputClose | AnswerClose | ThinkClose) => {
                return Err(err(pos, "close marker with no matching open"));
            }
            (S::Prompt, OutputOpen) => {
                return Err(err(pos, "output block does not follow a code cell"));
            }
            (S::Code, CodeClose) => {
                let text = std::mem::take(&mut self.pending);
                self.emit(Segment::code(text), events);
                self.state = S::Think;
            }
            (S::Code, CodeOpen) => return Err(err(pos, "nested code tag")),
            (S::Code, _) => return Err(err(pos, "marker inside a code cell")),
            (S::Output, OutputClose) => {
                let text = std::mem::take(&mut self.pending);
                self.emit(Segment::output(text), events);
                self.state = S::Think;
            }
            (S::Output, _) => return Err(err(pos, "marker inside an output block")),
            (S::AfterThink, AnswerOpen) => self.state = S::Answer,
            (S::AfterThink, _) => return Err(err(pos, "expected the answer block")),
            (S::Answer, AnswerClose) => {
                let text = std::mem::take(&mut self.pending);
                self.emit(Segment::answer(text), events);
                self.state = S::Done;
            }
            (S::Answer, _) => return Err(err(pos, "marker inside the answer block")),
            (S::Done, AnswerOpen) => return Err(err(pos, "more than one answer block")),
            (S::Done, _) => return Err(err(pos, "marker after the answer block")),
            (S::Failed, _) => {}
        }
        Ok(())
    }
}

fn err(position: usize, description: &str) -> ProtocolError {
    ProtocolError { position, description: description.to_string() }
}

/// Structure of a single model turn generated inside the think block.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TurnShape {
    /// Reasoning text before any code cell or think close.
    pub reasoning: String,
    /// Complete code cell, when the turn closed one.
    pub code: Option<String>,
    /// Code opened but never closed (generation was cut off).
    pub unterminated_code: Option<String>,
    pub think_closed: bool,
}

/// Splits one model turn into its parts. A turn holds at most one code cell
/// or one think close, and nothing after it.
pub fn parse_turn(text: &str, tags: &TagSet) -> Result<TurnShape, ProtocolError> {
    let mut parser = Parser::within_think(tags.clone());
    let mut shape = TurnShape::default();
    let mut events = parser.feed(text);
    let state_before_finish = parser.state();
    let trailing = parser.pending_text().to_string() + &parser.buf;
    if state_before_finish == ParserState::Code {
        shape.unterminated_code = Some(trailing);
    } else {
        events.extend(parser.finish());
    }
    let mut terminal_seen = false;
    for ev in events {
        match ev {
            ParseEvent::ProtocolError(e) => return Err(e),
            ParseEvent::NeedMoreInput => {}
            ParseEvent::SegmentComplete(seg) => {
                if terminal_seen {
                    return Err(err(text.len(), "content after the turn's stop marker"));
                }
                match seg.kind {
                    SegmentKind::Reasoning => shape.reasoning = seg.text,
                    SegmentKind::Code => {
                        shape.code = Some(seg.text);
                        terminal_seen = true;
                    }
                    _ => return Err(err(0, "unexpected segment in a model turn")),
                }
            }
        }
    }
    match parser.state() {
        ParserState::AfterThink => {
            if terminal_seen {
                return Err(err(text.len(), "content after the turn's stop marker"));
            }
            shape.think_closed = true;
        }
        ParserState::Code | ParserState::Think => {}
        _ => return Err(err(text.len(), "unexpected state at end of turn")),
    }
    if shape.code.is_some() && shape.unterminated_code.is_some() {
        return Err(err(text.len(), "content after the turn's stop marker"));
    }
    Ok(shape)
}
