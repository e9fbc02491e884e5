//! Tokenizer for the mock interpreter's Python subset.

use num_bigint::BigInt;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Int(BigInt),
    Float(f64),
    Str(String),
    /// f-string body, unparsed.
    FStr(String),
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexError {
    pub kind: &'static str,
    pub message: String,
    pub line: usize,
}

const OPS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "**", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=",
    "->", "<<", ">>", ":=", "+", "-", "*", "/", "%", "<", ">", "=", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";",
    "@", "&", "|", "^", "~",
];

/// Token stream plus the innermost bracket still open at end of input.
#[derive(Debug)]
pub struct Lexed {
    pub toks: Vec<Token>,
    pub unclosed: Option<(&'static str, usize)>,
}

pub fn tokenize(src: &str) -> Result<Lexed, LexError> {
    Lexer { chars: src.chars().collect(), pos: 0, line: 1, out: Vec::new() }.run()
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    out: Vec<Token>,
}

fn closer(open: &str) -> &'static str {
    match open {
        "(" => ")",
        "[" => "]",
        _ => "}",
    }
}

fn syntax(line: usize, message: &str) -> LexError {
    LexError { kind: "SyntaxError", message: message.to_string(), line }
}

impl Lexer {
    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn push(&mut self, tok: Tok) {
        self.out.push(Token { tok, line: self.line });
    }

    fn run(mut self) -> Result<Lexed, LexError> {
        let mut indents = vec![0usize];
        let mut open: Vec<(&'static str, usize)> = Vec::new();
        let mut at_line_start = true;
        while self.pos < self.chars.len() {
            if at_line_start && open.is_empty() {
                // measure indentation, skipping blank and comment-only lines
                let mut width = 0;
                let mut p = self.pos;
                while let Some(&c) = self.chars.get(p) {
                    match c {
                        ' ' => width += 1,
                        '\t' => width = (width / 8 + 1) * 8,
                        '\x0c' => width = 0,
                        _ => break,
                    }
                    p += 1;
                }
                match self.chars.get(p) {
                    None => {
                        self.pos = p;
                        break;
                    }
                    Some('\n') | Some('#') | Some('\r') => {
                        self.pos = p;
                        while let Some(c) = self.peek(0) {
                            self.pos += 1;
                            if c == '\n' {
                                self.line += 1;
                                break;
                            }
                        }
                        continue;
                    }
                    _ => {}
                }
                self.pos = p;
                let cur = *indents.last().unwrap();
                if width > cur {
                    // the parser rejects indents that do not open a block
                    indents.push(width);
                    self.push(Tok::Indent);
                } else {
                    while width < *indents.last().unwrap() {
                        indents.pop();
                        self.push(Tok::Dedent);
                    }
                    if width != *indents.last().unwrap() {
                        return Err(LexError {
                            kind: "IndentationError",
                            message: "unindent does not match any outer indentation level".into(),
                            line: self.line,
                        });
                    }
                }
                at_line_start = false;
            }
            let c = self.chars[self.pos];
            match c {
                '\n' => {
                    self.pos += 1;
                    if open.is_empty() {
                        if !matches!(self.out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
                            self.push(Tok::Newline);
                        }
                        at_line_start = true;
                    }
                    self.line += 1;
                }
                ' ' | '\t' | '\r' | '\x0c' => self.pos += 1,
                '#' => {
                    while let Some(c) = self.peek(0) {
                        if c == '\n' {
                            break;
                        }
                        self.pos += 1;
                    }
                }
                '\\' if self.peek(1) == Some('\n') => {
                    self.pos += 2;
                    self.line += 1;
                }
                '0'..='9' => self.number()?,
                '.' if self.peek(1).is_some_and(|d| d.is_ascii_digit()) => self.number()?,
                '"' | '\'' => {
                    let s = self.string(false)?;
                    self.push(Tok::Str(s));
                }
                c if c.is_alphabetic() || c == '_' => {
                    let start = self.pos;
                    while self.peek(0).is_some_and(|c| c.is_alphanumeric() || c == '_') {
                        self.pos += 1;
                    }
                    let word: String = self.chars[start..self.pos].iter().collect();
                    let lower = word.to_ascii_lowercase();
                    let is_prefix = matches!(lower.as_str(), "r" | "f" | "b" | "rb" | "br" | "fr" | "rf" | "u");
                    if is_prefix && matches!(self.peek(0), Some('"') | Some('\'')) {
                        let raw = lower.contains('r');
                        let s = self.string(raw)?;
                        if lower.contains('f') {
                            self.push(Tok::FStr(s));
                        } else {
                            self.push(Tok::Str(s));
                        }
                    } else {
                        self.push(Tok::Name(word));
                    }
                }
                _ => {
                    let rest: String = self.chars[self.pos..(self.pos + 3).min(self.chars.len())].iter().collect();
                    let op = OPS.iter().find(|op| rest.starts_with(**op));
                    match op {
                        Some(op) => {
                            match *op {
                                "(" | "[" | "{" => open.push((op, self.line)),
                                ")" | "]" | "}" => {
                                    let Some((opener, _)) = open.pop() else {
                                        return Err(syntax(self.line, &format!("unmatched '{op}'")));
                                    };
                                    if closer(opener) != *op {
                                        let msg = format!(
                                            "closing parenthesis '{op}' does not match opening parenthesis '{opener}'"
                                        );
                                        return Err(syntax(self.line, &msg));
                                    }
                                }
                                _ => {}
                            }
                            self.pos += op.chars().count();
                            self.push(Tok::Op(op));
                        }
                        None => return Err(syntax(self.line, "invalid syntax")),
                    }
                }
            }
        }
        if let Some(&unclosed) = open.last() {
            // the parser decides whether this is the error to report
            self.push(Tok::Eof);
            return Ok(Lexed { toks: self.out, unclosed: Some(unclosed) });
        }
        if !matches!(self.out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
            self.push(Tok::Newline);
        }
        while indents.len() > 1 {
            indents.pop();
            self.push(Tok::Dedent);
        }
        self.push(Tok::Eof);
        Ok(Lexed { toks: self.out, unclosed: None })
    }

    fn number(&mut self) -> Result<(), LexError> {
        let start = self.pos;
        if self.peek(0) == Some('0') && matches!(self.peek(1), Some('x' | 'X' | 'o' | 'O' | 'b' | 'B')) {
            let radix = match self.peek(1).unwrap().to_ascii_lowercase() {
                'x' => 16,
                'o' => 8,
                _ => 2,
            };
            self.pos += 2;
            let ds = self.pos;
            while self.peek(0).is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
                self.pos += 1;
            }
            let digits: String = self.chars[ds..self.pos].iter().filter(|c| **c != '_').collect();
            let v = BigInt::parse_bytes(digits.as_bytes(), radix).ok_or_else(|| syntax(self.line, "invalid syntax"))?;
            self.push(Tok::Int(v));
            return Ok(());
        }
        let mut is_float = false;
        while let Some(c) = self.peek(0) {
            if c.is_ascii_digit() || c == '_' {
                self.pos += 1;
            } else if c == '.' && !is_float {
                is_float = true;
                self.pos += 1;
            } else if (c == 'e' || c == 'E')
                && (self.peek(1).is_some_and(|d| d.is_ascii_digit())
                    || (matches!(self.peek(1), Some('+' | '-')) && self.peek(2).is_some_and(|d| d.is_ascii_digit())))
            {
                is_float = true;
                self.pos += 2;
            } else {
                break;
            }
        }
        if self.peek(0).is_some_and(|c| c.is_alphabetic() || c == '_') {
            return Err(syntax(self.line, "invalid decimal literal"));
        }
        let text: String = self.chars[start..self.pos].iter().filter(|c| **c != '_').collect();
        if is_float {
            let v: f64 = text.parse().map_err(|_| syntax(self.line, "invalid syntax"))?;
            self.push(Tok::Float(v));
        } else {
            let v = BigInt::parse_bytes(text.as_bytes(), 10).ok_or_else(|| syntax(self.line, "invalid syntax"))?;
            self.push(Tok::Int(v));
        }
        Ok(())
    }

    fn string(&mut self, raw: bool) -> Result<String, LexError> {
        let quote = self.chars[self.pos];
        let triple = self.peek(1) == Some(quote) && self.peek(2) == Some(quote);
        self.pos += if triple { 3 } else { 1 };
        let start_line = self.line;
        let mut out = String::new();
        loop {
            let Some(c) = self.peek(0) else {
                let msg =
                    if triple { "unterminated triple-quoted string literal" } else { "unterminated string literal" };
                return Err(syntax(start_line, msg));
            };
            if c == quote {
                if !triple {
                    self.pos += 1;
                    return Ok(out);
                }
                if self.peek(1) == Some(quote) && self.peek(2) == Some(quote) {
                    self.pos += 3;
                    return Ok(out);
                }
            }
            if c == '\n' {
                if !triple {
                    return Err(syntax(start_line, "unterminated string literal"));
                }
                self.line += 1;
            }
            if c == '\\' && !raw {
                let Some(n) = self.peek(1) else {
                    return Err(syntax(start_line, "unterminated string literal"));
                };
                self.pos += 2;
                match n {
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    '0' => out.push('\0'),
                    '\\' => out.push('\\'),
                    '\'' => out.push('\''),
                    '"' => out.push('"'),
                    '\n' => self.line += 1,
                    'x' | 'u' => {
                        let len = if n == 'x' { 2 } else { 4 };
                        let hex: String = self.chars[self.pos..(self.pos + len).min(self.chars.len())].iter().collect();
                        let ch = u32::from_str_radix(&hex, 16)
                            .ok()
                            .and_then(char::from_u32)
                            .ok_or_else(|| syntax(self.line, "invalid escape"))?;
                        out.push(ch);
                        self.pos += len;
                    }
                    other => {
                        out.push('\\');
                        out.push(other);
                    }
                }
                continue;
            }
            if c == '\\' && raw {
                out.push(c);
                if let Some(n) = self.peek(1) {
                    out.push(n);
                    self.pos += 2;
                    continue;
                }
            }
            out.push(c);
            self.pos += 1;
        }
    }
}
