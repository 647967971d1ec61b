// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::code_blocks;
use crate::corpus::single_function;
use crate::syntax::{self, dedent, Grammar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractSource {
    Fenced,
    Definition,
    Whole,
    Nothing,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extracted {
    pub code: String,
    pub source: ExtractSource,
    /// Byte offset in the response where `code` starts. The code equals the
    /// response from there on up to whitespace (dedent, trimming).
    pub offset: usize,
}

impl Extracted {
    pub fn is_empty(&self) -> bool {
        self.code.trim().is_empty()
    }
}

fn is_def(src: &str) -> bool {
    syntax::parse(src, Grammar::Python).is_ok_and(|t| !t.has_errors() && single_function(t.root()).is_some())
}

fn indent_of(line: &str) -> usize {
    line.len() - line.trim_start().len()
}

/// Longest run of lines that parses as exactly one function definition.
fn longest_definition(text: &str) -> Option<(String, usize)> {
    let lines: Vec<&str> = text.lines().collect();
    let mut best: Option<(String, usize)> = None;
    for start in 0..lines.len() {
        let head = lines[start].trim_start();
        if !(head.starts_with("def ") || head.starts_with("async def ") || head.starts_with('@')) {
            continue;
        }
        let base = indent_of(lines[start]);
        // a definition can only end before a line that is not indented past it
        let mut ends: Vec<usize> =
            (start + 1..lines.len()).filter(|&k| !lines[k].trim().is_empty() && indent_of(lines[k]) <= base).collect();
        ends.push(lines.len());
        for &end in ends.iter().rev() {
            if best.as_ref().is_some_and(|(b, _)| b.lines().count() >= end - start) {
                break;
            }
            let (body, _) = dedent(&lines[start..end].join("\n"));
            let body = body.trim_end().to_string() + "\n";
            if is_def(&body) {
                best = Some((body, lines[start].as_ptr() as usize - text.as_ptr() as usize));
                break;
            }
        }
    }
    best
}

/// Pull the method out of a model response: the first fenced block, else the
/// longest parseable definition, else the whole text if it parses as code.
/// Anything else yields an empty result for cleaning.
pub fn extract_code(text: &str) -> Extracted {
    if let Some(block) = code_blocks(text).into_iter().next() {
        let offset = block.as_ptr() as usize - text.as_ptr() as usize;
        return Extracted { code: block.to_string(), source: ExtractSource::Fenced, offset };
    }
    if let Some((code, offset)) = longest_definition(text) {
        return Extracted { code, source: ExtractSource::Definition, offset };
    }
    let whole = text.trim();
    if !whole.is_empty() && syntax::parse(whole, Grammar::Python).is_ok_and(|t| !t.has_errors()) {
        let offset = whole.as_ptr() as usize - text.as_ptr() as usize;
        return Extracted { code: format!("{whole}\n"), source: ExtractSource::Whole, offset };
    }
    Extracted { code: String::new(), source: ExtractSource::Nothing, offset: 0 }
}
