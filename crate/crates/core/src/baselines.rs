// SPDX-License-Identifier: Apache-2.0

//! The two comparison settings derived from a CtxBug instance: the solution
//! with every bug location masked by `<INFILL>`, and isolated bugs implanted
//! by a model at the same locations.

use serde::{Deserialize, Serialize};

use crate::corpus::AdaptationCase;
use crate::identify::{clean, BugInstance, BugKind, Candidate, Classification, Identifier, Verdict};
use crate::llm::{build_isobug_prompt, Client, Generation, END, START};
use crate::obfuscate::{obfuscate_code, obfuscate_text, RenamingMap};
use crate::perturb::{Location, INFILL};
use crate::syntax::{self, SpanEdit};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedCode {
    pub case_id: String,
    pub instance_id: String,
    pub source: String,
    pub locations: Vec<Location>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedCode {
    pub case_id: String,
    pub instance_id: String,
    pub source: String,
    pub locations: Vec<Location>,
}

fn sorted(locations: &[Location]) -> Vec<Location> {
    let mut l = locations.to_vec();
    l.sort_by_key(|x| x.span.start);
    l
}

/// Solution method with each bug location replaced by `<INFILL>`.
pub fn build_without_ctxbugs(case: &AdaptationCase, instance: &BugInstance) -> Result<MaskedCode> {
    let locations = sorted(&instance.locations());
    let edits: Vec<SpanEdit> = locations.iter().map(|l| SpanEdit::new(l.span, INFILL)).collect();
    Ok(MaskedCode {
        case_id: case.case_id.clone(),
        instance_id: instance.id.clone(),
        source: syntax::splice(&case.solution_method, &edits)?,
        locations,
    })
}

impl MaskedCode {
    /// Put `fills` (one per location, in order) in place of the placeholders.
    pub fn fill(&self, fills: &[&str]) -> Result<String> {
        let parts: Vec<&str> = self.source.split(INFILL).collect();
        if parts.len() != fills.len() + 1 {
            return Err(crate::Error::Config(format!("{} placeholders, {} fills", parts.len() - 1, fills.len())));
        }
        let mut out = String::from(parts[0]);
        for (f, p) in fills.iter().zip(&parts[1..]) {
            out.push_str(f);
            out.push_str(p);
        }
        Ok(out)
    }
}

/// Solution method with each bug location wrapped in `<START>`/`<END>` on the
/// same line.
pub fn mark_spans(case: &AdaptationCase, instance: &BugInstance) -> Result<MarkedCode> {
    let locations = sorted(&instance.locations());
    let src = &case.solution_method;
    let edits: Vec<SpanEdit> = locations
        .iter()
        .map(|l| SpanEdit::new(l.span, format!("{START}{}{END}", &src[l.span.start..l.span.end])))
        .collect();
    Ok(MarkedCode {
        case_id: case.case_id.clone(),
        instance_id: instance.id.clone(),
        source: syntax::splice(src, &edits)?,
        locations,
    })
}

pub fn strip_markers(text: &str) -> String {
    text.replace(START, "").replace(END, "")
}

/// Result of one IsoBug attempt for a CtxBug instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoBugAttempt {
    pub source_id: String,
    pub generation: Generation,
    pub classification: Classification,
}

/// Ask the generator to implant bugs inside the marked spans and classify
/// the answer like a CtxBug variant, over the same locations. Returns the
/// attempt and the instances kept after cleaning (at most one).
pub fn build_isobugs(
    case: &AdaptationCase,
    instance: &BugInstance,
    client: &Client,
    identifier: &Identifier<'_>,
    map: &RenamingMap,
) -> Result<(IsoBugAttempt, Vec<BugInstance>)> {
    let marked = mark_spans(case, instance)?;
    let mut prompt =
        build_isobug_prompt(&obfuscate_code(&marked.source, map)?, &obfuscate_text(&case.requirement, map))?;
    prompt.metadata.case_id = Some(case.case_id.clone());
    prompt.metadata.rule_id = Some(instance.rule_id);
    let generation = client.generate(&prompt);
    let cand = Candidate {
        kind: BugKind::IsoBug,
        rule_id: instance.rule_id,
        provenance: &instance.id,
        id: format!("{}/iso@{}", instance.id, generation.model_id),
        locations: &marked.locations,
    };
    let classification = identifier.classify(case, &cand, &generation, map);
    let kept = match (&classification.verdict, &classification.instance) {
        (Verdict::Valid, Some(i)) => clean(vec![i.clone()]),
        _ => Vec::new(),
    };
    Ok((IsoBugAttempt { source_id: instance.id.clone(), generation, classification }, kept))
}
