// SPDX-License-Identifier: Apache-2.0

//! A lenient Python tokenizer.
//!
//! Unlike the tree-sitter parse, this works on text that is not valid Python:
//! perturbed templates carry placeholder tokens such as `<INFILL>` in operator
//! positions, and model outputs can be truncated. Identifier renaming and
//! indentation handling are done at this level. Code inside f-string
//! interpolations is tokenized as code; the literal parts are `String` tokens.

use crate::syntax::Span;

/// Placeholder and marker tokens that are never treated as code.
pub const PLACEHOLDERS: &[&str] = &["<PARAMS>", "<RETURN>", "<INFILL>", "<VAR>", "<START>", "<END>"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Name,
    Number,
    String,
    Comment,
    Op,
    Placeholder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.span.start..self.span.end]
    }
}

#[derive(Clone, Debug, Default)]
pub struct Lexed {
    pub tokens: Vec<Token>,
    /// Full spans of string literals, including prefix and quotes.
    pub strings: Vec<Span>,
    /// A string literal or interpolation ran to end of input.
    pub unterminated: bool,
}

pub const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del",
    "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal",
    "not", "or", "pass", "raise", "return", "try", "while", "with", "yield",
];

pub fn is_keyword(name: &str) -> bool {
    KEYWORDS.contains(&name)
}

const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "==", "!=", "<=", ">=", "**", "//", "<<", ">>", "+=", "-=", "*=",
    "/=", "%=", "&=", "|=", "^=", "@=", "<>",
];

pub fn tokenize(src: &str) -> Lexed {
    let mut out = Lexed::default();
    lex_region(src, 0, src.len(), &mut out);
    out
}

fn is_name_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b >= 0x80
}

fn is_name_continue(b: u8) -> bool {
    is_name_start(b) || b.is_ascii_digit()
}

fn string_prefix(p: &str) -> Option<bool> {
    // Some(is_fstring)
    match p.to_ascii_lowercase().as_str() {
        "r" | "u" | "b" | "br" | "rb" => Some(false),
        "f" | "fr" | "rf" => Some(true),
        _ => None,
    }
}

fn lex_region(src: &str, start: usize, end: usize, out: &mut Lexed) {
    let b = src.as_bytes();
    let mut i = start;
    while i < end {
        let c = b[i];
        if c == b' ' || c == b'\t' || c == b'\n' || c == b'\r' || c == b'\x0c' || c == b'\\' {
            i += 1;
            continue;
        }
        if c == b'#' {
            let j = src[i..end].find('\n').map_or(end, |k| i + k);
            out.tokens.push(Token { kind: TokenKind::Comment, span: Span::new(i, j) });
            i = j;
            continue;
        }
        if c == b'<' {
            if let Some(p) = PLACEHOLDERS.iter().find(|p| src[i..end].starts_with(**p)) {
                out.tokens.push(Token { kind: TokenKind::Placeholder, span: Span::new(i, i + p.len()) });
                i += p.len();
                continue;
            }
        }
        if is_name_start(c) {
            let mut j = i + 1;
            while j < end && is_name_continue(b[j]) {
                j += 1;
            }
            if j < end && (b[j] == b'\'' || b[j] == b'"') {
                if let Some(is_f) = string_prefix(&src[i..j]) {
                    i = lex_string(src, i, j, end, is_f, out);
                    continue;
                }
            }
            out.tokens.push(Token { kind: TokenKind::Name, span: Span::new(i, j) });
            i = j;
            continue;
        }
        if c == b'\'' || c == b'"' {
            i = lex_string(src, i, i, end, false, out);
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && i + 1 < end && b[i + 1].is_ascii_digit()) {
            let mut j = i + 1;
            while j < end {
                let d = b[j];
                let exponent_sign =
                    (d == b'+' || d == b'-') && matches!(b[j - 1], b'e' | b'E') && !src[i..j].starts_with("0x");
                if d.is_ascii_alphanumeric() || d == b'_' || d == b'.' || exponent_sign {
                    j += 1;
                } else {
                    break;
                }
            }
            out.tokens.push(Token { kind: TokenKind::Number, span: Span::new(i, j) });
            i = j;
            continue;
        }
        let len = OPERATORS
            .iter()
            .find(|op| src[i..end].starts_with(**op))
            .map_or_else(|| src[i..].chars().next().map_or(1, char::len_utf8), |op| op.len());
        out.tokens.push(Token { kind: TokenKind::Op, span: Span::new(i, i + len) });
        i += len;
    }
}

/// Lex a string literal whose prefix starts at `start` and whose opening quote
/// is at `quote_at`. Returns the offset just past the literal.
fn lex_string(src: &str, start: usize, quote_at: usize, end: usize, is_f: bool, out: &mut Lexed) -> usize {
    let b = src.as_bytes();
    let q = b[quote_at];
    let triple = quote_at + 2 < end && b[quote_at + 1] == q && b[quote_at + 2] == q;
    let qlen = if triple { 3 } else { 1 };
    let mut i = quote_at + qlen;
    let mut part_start = start;
    let close = |i: usize| -> bool {
        if triple {
            i + 2 < end && b[i] == q && b[i + 1] == q && b[i + 2] == q
        } else {
            b[i] == q
        }
    };
    loop {
        if i >= end {
            out.unterminated = true;
            break;
        }
        let c = b[i];
        if c == b'\\' {
            i += 2;
            continue;
        }
        if !triple && c == b'\n' {
            out.unterminated = true;
            break;
        }
        if close(i) {
            i += qlen;
            break;
        }
        if is_f && c == b'{' {
            if i + 1 < end && b[i + 1] == b'{' {
                i += 2;
                continue;
            }
            out.tokens.push(Token { kind: TokenKind::String, span: Span::new(part_start, i) });
            i = lex_interpolation(src, i, end, q, triple, out);
            part_start = i;
            continue;
        }
        i += 1;
    }
    let i = i.min(end);
    out.tokens.push(Token { kind: TokenKind::String, span: Span::new(part_start, i) });
    out.strings.push(Span::new(start, i));
    i
}

/// `open` points at `{`. Tokenizes the expression part as code and skips the
/// format spec (recursing into nested replacement fields). Returns the offset
/// just past the closing `}`.
fn lex_interpolation(src: &str, open: usize, end: usize, q: u8, triple: bool, out: &mut Lexed) -> usize {
    let b = src.as_bytes();
    let expr_start = open + 1;
    let mut depth = 0i32;
    let mut i = expr_start;
    let mut expr_end = None;
    while i < end {
        let c = b[i];
        if (c == b'\'' || c == b'"') && (c != q || triple) {
            // nested literal of the other quote kind
            let mut j = i + 1;
            while j < end && b[j] != c {
                j += if b[j] == b'\\' { 2 } else { 1 };
            }
            i = j + 1;
            continue;
        }
        if c == q && !triple {
            break;
        }
        match c {
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' => depth -= 1,
            b'}' if depth > 0 => depth -= 1,
            b'}' => {
                expr_end = Some(i);
                break;
            }
            b'!' if depth == 0 && b.get(i + 1) != Some(&b'=') => {
                expr_end = Some(i);
                break;
            }
            b':' if depth == 0 && b.get(i + 1) != Some(&b'=') => {
                expr_end = Some(i);
                break;
            }
            _ => {}
        }
        i += 1;
    }
    let Some(expr_end) = expr_end else {
        out.unterminated = true;
        lex_region(src, expr_start, i.min(end), out);
        return i.min(end);
    };
    lex_region(src, expr_start, expr_end, out);
    // conversion / format spec up to the matching brace
    let mut i = expr_end;
    while i < end {
        match b[i] {
            b'}' => return i + 1,
            b'{' => i = lex_interpolation(src, i, end, q, triple, out),
            _ => i += 1,
        }
    }
    out.unterminated = true;
    end
}
