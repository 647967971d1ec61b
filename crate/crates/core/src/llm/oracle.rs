// SPDX-License-Identifier: Apache-2.0

//! Deterministic offline backend for fixture runs.
//!
//! It looks the case up by the prompt's metadata, rebuilds the renaming the
//! pipeline used, and answers from the reference solution: sometimes exactly,
//! sometimes with a single token mutated. Choices depend only on the model id
//! and prompt hash, so runs are reproducible and models differ from each
//! other.

use std::collections::HashMap;

use super::backend::{Backend, BackendError, Completion, ModelConfig, TokenProb};
use super::{code_blocks, Prompt, PromptKind, END, START};
use crate::corpus::AdaptationCase;
use crate::obfuscate::{build_renaming, obfuscate_code, Scope};
use crate::syntax::lex::{self, TokenKind};
use crate::syntax::Span;

/// Stable 64-bit value from a list of strings.
pub fn mix(parts: &[&str]) -> u64 {
    let h = crate::sha256_hex(parts.join("\u{1f}"));
    u64::from_str_radix(&h[..16], 16).unwrap_or(0)
}

const SWAPS: &[(&str, &str)] = &[
    ("+", "-"),
    ("-", "+"),
    ("*", "+"),
    ("/", "*"),
    ("//", "/"),
    ("%", "//"),
    ("|", "&"),
    ("&", "|"),
    ("==", "!="),
    ("!=", "=="),
    ("<", ">="),
    (">", "<="),
    ("<=", ">"),
    (">=", "<"),
    ("+=", "-="),
    ("-=", "+="),
    ("and", "or"),
    ("or", "and"),
    ("True", "False"),
    ("False", "True"),
    ("in", "not in"),
];

/// Replace one token of `fragment`, picked by `seed`, with a plausible wrong
/// alternative. Returns the fragment unchanged if nothing can be mutated.
pub fn mutate(fragment: &str, seed: u64) -> String {
    let lexed = lex::tokenize(fragment);
    let names: Vec<&str> = lexed
        .tokens
        .iter()
        .filter(|t| t.kind == TokenKind::Name)
        .map(|t| t.text(fragment))
        .filter(|n| *n != "self" && !lex::is_keyword(n))
        .collect();
    let mut edits: Vec<(Span, String)> = Vec::new();
    for t in &lexed.tokens {
        let text = t.text(fragment);
        if let Some((_, to)) = SWAPS.iter().find(|(from, _)| *from == text) {
            edits.push((t.span, to.to_string()));
            continue;
        }
        match t.kind {
            TokenKind::Number => {
                if let Ok(n) = text.parse::<i64>() {
                    edits.push((t.span, (n + 1).to_string()));
                } else if let Ok(x) = text.parse::<f64>() {
                    edits.push((t.span, format!("{:?}", x + 1.0)));
                }
            }
            TokenKind::String => {
                if let Some(q) = text.find(['"', '\'']) {
                    edits.push((Span::new(t.span.start + q + 1, t.span.start + q + 1), "x".into()));
                }
            }
            TokenKind::Name if names.contains(&text) => match names.iter().find(|n| **n != text) {
                Some(other) => edits.push((t.span, other.to_string())),
                None => edits.push((t.span, format!("{text}_1"))),
            },
            _ => {}
        }
    }
    if edits.is_empty() {
        return fragment.to_string();
    }
    let (span, repl) = &edits[(seed % edits.len() as u64) as usize];
    format!("{}{}{}", &fragment[..span.start], repl, &fragment[span.end..])
}

/// Texts that fill the placeholder tokens of `template` so that it becomes
/// `solution`. Trailing whitespace is ignored.
pub fn align_fills(template: &str, solution: &str) -> Option<Vec<String>> {
    let template = template.trim_end();
    let solution = solution.trim_end();
    let lexed = lex::tokenize(template);
    let mut segments = Vec::new();
    let mut prev = 0;
    for t in lexed.tokens.iter().filter(|t| t.kind == TokenKind::Placeholder) {
        segments.push(&template[prev..t.span.start]);
        prev = t.span.end;
    }
    segments.push(&template[prev..]);
    let rest = solution.strip_prefix(segments[0])?;
    let mut fills = Vec::new();
    fit(rest, &segments[1..], &mut fills).then_some(fills)
}

fn fit(rest: &str, segments: &[&str], fills: &mut Vec<String>) -> bool {
    let (seg, tail) = match segments.split_first() {
        Some(s) => s,
        None => return rest.is_empty(),
    };
    if tail.is_empty() {
        if let Some(fill) = rest.strip_suffix(seg) {
            fills.push(fill.to_string());
            return true;
        }
        return false;
    }
    let mut from = 0;
    while let Some(i) = rest[from..].find(seg).map(|i| i + from) {
        fills.push(rest[..i].to_string());
        if fit(&rest[i + seg.len()..], tail, fills) {
            return true;
        }
        fills.pop();
        from = i + rest[i..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

fn fill_placeholders(template: &str, fills: &[String]) -> String {
    let lexed = lex::tokenize(template);
    let mut out = String::new();
    let mut prev = 0;
    for (k, t) in lexed.tokens.iter().filter(|t| t.kind == TokenKind::Placeholder).enumerate() {
        out.push_str(&template[prev..t.span.start]);
        out.push_str(fills.get(k).map_or("", String::as_str));
        prev = t.span.end;
    }
    out.push_str(&template[prev..]);
    out
}

enum Answer {
    Code { code: String, echoed: bool },
    Prose(String),
}

fn code_answer(code: String) -> Answer {
    Answer::Code { code, echoed: false }
}

/// Offline answers for a known set of cases.
#[derive(Clone, Debug, Default)]
pub struct OracleBackend {
    cases: HashMap<String, AdaptationCase>,
    seed: u64,
}

impl OracleBackend {
    pub fn new<'a>(cases: impl IntoIterator<Item = &'a AdaptationCase>) -> Self {
        OracleBackend { cases: cases.into_iter().map(|c| (c.case_id.clone(), c.clone())).collect(), seed: 0 }
    }

    /// Shift every choice; runs with different seeds answer differently.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn answer(&self, prompt: &Prompt, model: &str) -> Option<Answer> {
        let case = self.cases.get(prompt.metadata.case_id.as_deref()?)?;
        let code = *code_blocks(&prompt.text).first()?;
        let hash = prompt.hash();
        let roll = mix(&[model, &hash, &self.seed.to_string()]);
        let skill = mix(&[model]) % 40;
        match prompt.kind {
            PromptKind::Infill => {
                let map = build_renaming(case, Scope::Method).ok()?;
                let solution = obfuscate_code(&case.solution_method, &map).ok()?;
                let mut fills = align_fills(code, &solution)?;
                match roll % 100 {
                    0..=19 => {}
                    20..=94 => {
                        let k = (roll / 100) as usize % fills.len().max(1);
                        if let Some(f) = fills.get_mut(k) {
                            *f = mutate(f, roll / 7);
                        }
                    }
                    _ => {
                        return Some(Answer::Prose(
                            "The requirement is unclear, so I cannot complete the method.".into(),
                        ))
                    }
                }
                Some(code_answer(fill_placeholders(code, &fills)))
            }
            PromptKind::Isobug => {
                let mut out = String::new();
                let mut rest = code;
                let mut k = 0;
                while let Some(i) = rest.find(START) {
                    out.push_str(&rest[..i]);
                    let body = &rest[i + START.len()..];
                    let j = body.find(END)?;
                    out.push_str(&mutate(&body[..j], roll.wrapping_add(k)));
                    rest = &body[j + END.len()..];
                    k += 1;
                }
                out.push_str(rest);
                Some(code_answer(out))
            }
            PromptKind::Adaptation => {
                let map = build_renaming(case, Scope::Class).ok()?;
                let solution = obfuscate_code(&case.solution_method, &map).ok()?;
                let roll = roll % 100;
                match prompt.metadata.setting.as_deref() {
                    Some("without_ctxbugs") => {
                        let mut fills = align_fills(code, &solution)?;
                        if roll >= 40 + skill {
                            for (k, f) in fills.iter_mut().enumerate() {
                                *f = mutate(f, roll + k as u64);
                            }
                        }
                        Some(code_answer(fill_placeholders(code, &fills)))
                    }
                    Some("with_isobugs") if roll < 30 + skill => Some(code_answer(solution)),
                    Some("with_ctxbugs") if roll < skill => Some(code_answer(solution)),
                    _ => Some(Answer::Code { code: code.to_string(), echoed: true }),
                }
            }
            PromptKind::Explanation => None,
        }
    }
}

impl Backend for OracleBackend {
    fn complete(&self, prompt: &Prompt, cfg: &ModelConfig) -> Result<Completion, BackendError> {
        let model = cfg.model_id.as_str();
        let (code, echoed) = match self.answer(prompt, model) {
            Some(Answer::Code { code, echoed }) => (code, echoed),
            Some(Answer::Prose(text)) => return Ok(Completion { text, token_probs: None, truncated: false }),
            None => (code_blocks(&prompt.text).first().copied().unwrap_or("").to_string(), true),
        };
        let body = format!("{}\n", code.trim_end());
        let text = format!("```python\n{body}```\n");
        let lexed = lex::tokenize(&body);
        let floor = if echoed { 950 } else { 750 };
        let mut probs = vec![TokenProb { token: "```python\n".into(), prob: 1.0 }];
        for (k, t) in lexed.tokens.iter().enumerate() {
            let p = floor + mix(&[model, &prompt.hash(), &k.to_string()]) % (1001 - floor);
            probs.push(TokenProb { token: t.text(&body).to_string(), prob: p as f64 / 1000.0 });
        }
        probs.push(TokenProb { token: "```".into(), prob: 1.0 });
        Ok(Completion { text, token_probs: Some(probs), truncated: false })
    }
}
