//! Line segmentation and a small lexer for indentation-based, hash-comment
//! source code (Python-like).
//!
//! [`split_lines`] produces the [`LineView`] the detectors score.
//! [`tokenize_code`] produces a lossless [`TokenView`]: every token carries
//! its byte span, and the bytes between spans are whitespace only.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeTextError {
    #[error("code is empty after dropping blank lines")]
    EmptyCode,
    #[error("unterminated string literal starting at byte {offset}")]
    UnterminatedString { offset: usize },
}

/// One surviving (non-blank) physical line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    pub index: usize,
    pub text: String,
    /// 1-based physical line number in the original source.
    pub raw_lineno: usize,
}

/// The segmented code body. Indices are contiguous from 0, no line is blank,
/// and `raw_lineno` is strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineView {
    lines: Vec<Line>,
}

impl LineView {
    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Line> {
        self.lines.get(index)
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().map(|l| l.text.as_str())
    }

    /// Lines joined with `\n`, no trailing newline.
    pub fn join(&self) -> String {
        self.join_except(None)
    }

    pub(crate) fn join_except(&self, skip: Option<usize>) -> String {
        let cap = self.lines.iter().map(|l| l.text.len() + 1).sum();
        let mut out = String::with_capacity(cap);
        for line in &self.lines {
            if Some(line.index) == skip {
                continue;
            }
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&line.text);
        }
        out
    }
}

/// Split on physical newlines, drop blank lines, strip trailing whitespace.
/// Leading indentation is kept.
pub fn split_lines(code: &str) -> Result<LineView, CodeTextError> {
    let lines: Vec<Line> = code
        .split('\n')
        .enumerate()
        .filter_map(|(i, raw)| {
            let text = raw.trim_end();
            (!text.trim_start().is_empty()).then(|| (i + 1, text.to_string()))
        })
        .enumerate()
        .map(|(index, (raw_lineno, text))| Line {
            index,
            text,
            raw_lineno,
        })
        .collect();
    if lines.is_empty() {
        return Err(CodeTextError::EmptyCode);
    }
    Ok(LineView { lines })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Identifier,
    Keyword,
    Number,
    String,
    Operator,
    Punct,
    Other,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenKind::Identifier => "identifier",
            TokenKind::Keyword => "keyword",
            TokenKind::Number => "number",
            TokenKind::String => "string",
            TokenKind::Operator => "operator",
            TokenKind::Punct => "punct",
            TokenKind::Other => "other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenView {
    tokens: Vec<Token>,
    source_len: usize,
}

impl TokenView {
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.tokens
    }
}

pub const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del",
    "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal",
    "not", "or", "pass", "raise", "return", "try", "while", "with", "yield",
];

// Longest match first.
const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "->", ":=", "==", "!=", "<=", ">=", "**", "//", "<<", ">>", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=", "@=", "+", "-", "*", "/", "%", "@", "<", ">", "=", "&", "|", "^", "~",
];

const PUNCT: &[&str] = &["...", ".", "(", ")", "[", "]", "{", "}", ",", ":", ";"];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

/// Tokenize code. Identifiers are never sub-split; strings, numbers and
/// comments are single tokens.
pub fn tokenize_code(code: &str) -> Result<TokenView, CodeTextError> {
    Lexer::new(code, false).run()
}

/// Like [`tokenize_code`] but never fails: an unterminated string becomes an
/// `Other` token running to the end of its line. Used where arbitrary text
/// (line-removal variants, token-removal variants) must be scored.
pub fn tokenize_lenient(code: &str) -> TokenView {
    Lexer::new(code, true).run().expect("lenient lexing is infallible")
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    lenient: bool,
    tokens: Vec<Token>,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str, lenient: bool) -> Self {
        Self {
            src,
            pos: 0,
            lenient,
            tokens: Vec::new(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn push(&mut self, start: usize, kind: TokenKind) {
        self.tokens.push(Token {
            text: self.src[start..self.pos].to_string(),
            kind,
            span: start..self.pos,
        });
    }

    fn run(mut self) -> Result<TokenView, CodeTextError> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else if c == '#' {
                self.pos += self.rest().find('\n').unwrap_or(self.rest().len());
                self.push(start, TokenKind::Other);
            } else if let Some(prefix_len) = self.string_prefix_len() {
                self.pos += prefix_len;
                self.lex_string(start)?;
            } else if c.is_ascii_digit() || (c == '.' && self.rest()[1..].starts_with(|d: char| d.is_ascii_digit())) {
                self.lex_number();
                self.push(start, TokenKind::Number);
            } else if is_ident_start(c) {
                let len = self
                    .rest()
                    .find(|ch: char| !is_ident_continue(ch))
                    .unwrap_or(self.rest().len());
                self.pos += len;
                let kind = if is_keyword(&self.src[start..self.pos]) {
                    TokenKind::Keyword
                } else {
                    TokenKind::Identifier
                };
                self.push(start, kind);
            } else if let Some(p) = PUNCT.iter().find(|p| self.rest().starts_with(**p)) {
                self.pos += p.len();
                self.push(start, TokenKind::Punct);
            } else if let Some(op) = OPERATORS.iter().find(|o| self.rest().starts_with(**o)) {
                self.pos += op.len();
                self.push(start, TokenKind::Operator);
            } else {
                self.pos += c.len_utf8();
                self.push(start, TokenKind::Other);
            }
        }
        Ok(TokenView {
            tokens: self.tokens,
            source_len: self.src.len(),
        })
    }

    /// Length of a string prefix (`r`, `b`, `f`, `u`, `rb`, ...) plus zero
    /// if a quote starts here; `None` if no string starts here.
    fn string_prefix_len(&self) -> Option<usize> {
        let rest = self.rest().as_bytes();
        let prefix = rest
            .iter()
            .take_while(|b| matches!(b.to_ascii_lowercase(), b'r' | b'b' | b'f' | b'u'))
            .count();
        if prefix > 2 {
            return None;
        }
        match rest.get(prefix) {
            Some(b'"') | Some(b'\'') => Some(prefix),
            _ => None,
        }
    }

    fn lex_string(&mut self, start: usize) -> Result<(), CodeTextError> {
        let quote = self.peek().expect("caller checked a quote follows");
        let triple: String = std::iter::repeat_n(quote, 3).collect();
        let is_triple = self.rest().starts_with(&triple);
        self.pos += if is_triple { 3 } else { 1 };
        loop {
            let Some(c) = self.peek() else {
                return self.unterminated(start);
            };
            if c == '\\' {
                self.pos += 1;
                if let Some(next) = self.peek() {
                    self.pos += next.len_utf8();
                }
                continue;
            }
            if c == '\n' && !is_triple {
                return self.unterminated(start);
            }
            if is_triple {
                if self.rest().starts_with(&triple) {
                    self.pos += 3;
                    break;
                }
            } else if c == quote {
                self.pos += 1;
                break;
            }
            self.pos += c.len_utf8();
        }
        self.push(start, TokenKind::String);
        Ok(())
    }

    fn unterminated(&mut self, start: usize) -> Result<(), CodeTextError> {
        if !self.lenient {
            return Err(CodeTextError::UnterminatedString { offset: start });
        }
        let line_end = self.src[start..].find('\n').map_or(self.src.len(), |i| start + i);
        self.pos = line_end;
        self.push(start, TokenKind::Other);
        Ok(())
    }

    fn lex_number(&mut self) {
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        if bytes[i] == b'0' && matches!(bytes.get(i + 1), Some(b'x' | b'X' | b'o' | b'O' | b'b' | b'B')) {
            i += 2;
            while i < bytes.len() && (bytes[i].is_ascii_hexdigit() || bytes[i] == b'_') {
                i += 1;
            }
            self.pos = i;
            return;
        }
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1) != Some(&b'.') {
            i += 1;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
                i += 1;
            }
        }
        if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
            let mut j = i + 1;
            if j < bytes.len() && matches!(bytes[j], b'+' | b'-') {
                j += 1;
            }
            if j < bytes.len() && bytes[j].is_ascii_digit() {
                i = j;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
        }
        if i < bytes.len() && matches!(bytes[i], b'j' | b'J') {
            i += 1;
        }
        self.pos = i;
    }
}

/// Split an identifier the way subword tokenizers tend to: at case
/// boundaries, letter/digit boundaries, and before underscores
/// (`max_value_of` -> `max`, `_value`, `_of`). Returns byte ranges relative
/// to the identifier.
pub fn subword_pieces(ident: &str) -> Vec<Range<usize>> {
    let chars: Vec<(usize, char)> = ident.char_indices().collect();
    let mut cuts = vec![0];
    for w in 1..chars.len() {
        let (i, c) = chars[w];
        let (_, prev) = chars[w - 1];
        let boundary = (c == '_' && prev != '_')
            || (c.is_uppercase() && prev.is_lowercase())
            || (c.is_ascii_digit() && prev.is_alphabetic())
            || (c.is_alphabetic() && prev.is_ascii_digit());
        if boundary {
            cuts.push(i);
        }
    }
    cuts.push(ident.len());
    cuts.windows(2).map(|w| w[0]..w[1]).collect()
}

/// Tokens with identifiers sub-split by [`subword_pieces`]. Emulates an LLM
/// tokenizer that breaks variable names into several pieces.
pub fn tokenize_subword(code: &str) -> Result<TokenView, CodeTextError> {
    let view = tokenize_code(code)?;
    let source_len = view.source_len;
    let mut tokens = Vec::with_capacity(view.tokens.len() * 2);
    for tok in view.tokens {
        if tok.kind != TokenKind::Identifier {
            tokens.push(tok);
            continue;
        }
        for piece in subword_pieces(&tok.text) {
            let span = tok.span.start + piece.start..tok.span.start + piece.end;
            tokens.push(Token {
                text: tok.text[piece].to_string(),
                kind: TokenKind::Identifier,
                span,
            });
        }
    }
    Ok(TokenView { tokens, source_len })
}
