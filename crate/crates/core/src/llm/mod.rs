// SPDX-License-Identifier: Apache-2.0

//! Prompt construction and model access.
//!
//! Prompts are rendered from the text templates under `templates/`, where
//! `{{name}}` marks a slot. [`Client`] wraps a [`Backend`] with retries and an
//! in-flight cap; [`StubBackend`] answers from a table so that runs need no
//! network, and [`HttpBackend`] talks to an OpenAI-compatible endpoint.

mod backend;
mod extract;
pub mod oracle;

use serde::{Deserialize, Serialize};

pub use backend::{
    Backend, BackendError, Client, Completion, DecodeConfig, Generation, HttpBackend, ModelConfig, RetryPolicy,
    StubBackend, StubEntry, TokenProb,
};
pub use extract::{extract_code, Extracted};

use crate::corpus::{AdaptationCase, TargetContext};
use crate::obfuscate::{obfuscate_code, obfuscate_text, RenamingMap};
use crate::perturb::PerturbedTemplate;
use crate::syntax::{self, Grammar};
use crate::{sha256_hex, Error, Result};

pub const START: &str = "<START>";
pub const END: &str = "<END>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Infill,
    Isobug,
    Adaptation,
    Explanation,
}

impl PromptKind {
    fn template(self) -> &'static str {
        match self {
            PromptKind::Infill => include_str!("../../templates/infill.txt"),
            PromptKind::Isobug => include_str!("../../templates/isobug.txt"),
            PromptKind::Adaptation => include_str!("../../templates/adaptation.txt"),
            PromptKind::Explanation => include_str!("../../templates/explanation.txt"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    pub text: String,
    pub metadata: PromptMeta,
}

impl Prompt {
    /// SHA-256 of the rendered text.
    pub fn hash(&self) -> String {
        sha256_hex(&self.text)
    }
}

/// Fill `{{slot}}` markers. Every marker in the template needs a value and
/// every value needs a marker; values are inserted verbatim, never rescanned.
pub fn render(template: &str, slots: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len() + slots.iter().map(|s| s.1.len()).sum::<usize>());
    let mut used = vec![false; slots.len()];
    let mut rest = template;
    while let Some(i) = rest.find("{{") {
        out.push_str(&rest[..i]);
        let after = &rest[i + 2..];
        let j = after.find("}}").ok_or_else(|| Error::Prompt("unterminated slot marker".into()))?;
        let name = &after[..j];
        let k = slots
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| Error::Prompt(format!("no value for slot `{name}`")))?;
        used[k] = true;
        out.push_str(slots[k].1);
        rest = &after[j + 2..];
    }
    out.push_str(rest);
    if let Some(k) = used.iter().position(|u| !u) {
        return Err(Error::Prompt(format!("template has no slot `{}`", slots[k].0)));
    }
    Ok(out)
}

/// Sentence appended to rule-10 prompts.
pub fn dependency_restriction(lib_deps: &[String]) -> String {
    format!("Do not use any of the following libraries: {}.", lib_deps.join(", "))
}

/// Infill prompt: requirement plus template, no class context. The
/// template source and requirement are used as given, so the caller
/// obfuscates both with the same map first.
pub fn build_infill_prompt(template: &PerturbedTemplate, requirement: &str, lib_deps: &[String]) -> Result<Prompt> {
    let mut text = render(
        PromptKind::Infill.template(),
        &[
            ("placeholder", template.rule().placeholder),
            ("requirement", requirement.trim_end()),
            ("code", template.template_source.trim_end()),
        ],
    )?;
    if template.rule_id == 10 {
        if lib_deps.is_empty() {
            return Err(Error::Prompt(format!("{}: dependency rule without dependencies", template.id())));
        }
        text.push('\n');
        text.push_str(&dependency_restriction(lib_deps));
        text.push('\n');
    }
    Ok(Prompt {
        kind: PromptKind::Infill,
        text,
        metadata: PromptMeta {
            case_id: Some(template.case_id.clone()),
            rule_id: Some(template.rule_id),
            setting: None,
        },
    })
}

/// Number of `<START>`/`<END>` pairs, or an error if they are unbalanced
/// or nested.
pub fn marker_pairs(text: &str) -> Result<usize> {
    let mut open = false;
    let mut pairs = 0;
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        if rest.starts_with(START) {
            if open {
                return Err(Error::Prompt("nested <START> marker".into()));
            }
            open = true;
            i += START.len();
        } else if rest.starts_with(END) {
            if !open {
                return Err(Error::Prompt("<END> without <START>".into()));
            }
            open = false;
            pairs += 1;
            i += END.len();
        } else {
            i += rest.chars().next().map_or(1, char::len_utf8);
        }
    }
    if open {
        return Err(Error::Prompt("<START> without <END>".into()));
    }
    Ok(pairs)
}

pub fn build_isobug_prompt(marked_solution: &str, requirement: &str) -> Result<Prompt> {
    if marker_pairs(marked_solution)? == 0 {
        return Err(Error::Prompt("no marked span".into()));
    }
    let text = render(
        PromptKind::Isobug.template(),
        &[("requirement", requirement.trim_end()), ("code", marked_solution.trim_end())],
    )?;
    Ok(Prompt { kind: PromptKind::Isobug, text, metadata: PromptMeta::default() })
}

/// Adaptation prompt: requirement, reused method and caller-stripped class,
/// in that order, all renamed with `map` here.
pub fn build_adaptation_prompt(
    case: &AdaptationCase,
    candidate_method: &str,
    context: &TargetContext,
    map: &RenamingMap,
) -> Result<Prompt> {
    let ctx = obfuscate_code(&context.context_source, map)?;
    let target = map.get(&case.method_name).unwrap_or(&case.method_name);
    let tree = syntax::parse(&ctx, Grammar::Python)?;
    let defines_target = tree.preorder().any(|n| {
        n.kind == "function_definition"
            && n.child_by_field("name").is_some_and(|name| tree.node_text(name).is_ok_and(|t| t == target))
    });
    if defines_target {
        return Err(Error::Prompt(format!("{}: context still defines `{target}`", case.case_id)));
    }
    let text = render(
        PromptKind::Adaptation.template(),
        &[
            ("requirement", obfuscate_text(&case.requirement, map).trim_end()),
            ("code", obfuscate_code(candidate_method, map)?.trim_end()),
            ("context", ctx.trim_end()),
        ],
    )?;
    Ok(Prompt {
        kind: PromptKind::Adaptation,
        text,
        metadata: PromptMeta { case_id: Some(case.case_id.clone()), rule_id: None, setting: None },
    })
}

pub fn build_explanation_prompt(code: &str, requirement: &str) -> Result<Prompt> {
    let text = render(
        PromptKind::Explanation.template(),
        &[("requirement", requirement.trim_end()), ("code", code.trim_end())],
    )?;
    Ok(Prompt { kind: PromptKind::Explanation, text, metadata: PromptMeta::default() })
}

/// Contents of the fenced code blocks in `text`, in order.
pub fn code_blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find("```") {
        let after = &rest[i + 3..];
        // skip the info string
        let body_start = after.find('\n').map_or(after.len(), |k| k + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(j) => {
                out.push(&body[..j]);
                rest = &body[j + 3..];
            }
            None => break,
        }
    }
    out
}
