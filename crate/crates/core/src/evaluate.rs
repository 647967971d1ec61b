// SPDX-License-Identifier: Apache-2.0

//! Adaptation evaluation: one greedy generation per case and setting, scored
//! by Pass@1, Resolution Rate and average token probability.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::baselines::MaskedCode;
use crate::corpus::{build_target_context, AdaptationCase};
use crate::differ::{Correspondence, Diff, DiffConfig};
use crate::identify::BugInstance;
use crate::llm::{build_adaptation_prompt, extract_code, Client, Generation};
use crate::obfuscate::{build_renaming, deobfuscate, Scope};
use crate::perturb::{self, Location, Task};
use crate::syntax::{self, dedent, Span, Tree};
use crate::testexec::{assemble, TestRunner};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    WithCtxbugs,
    WithoutCtxbugs,
    WithIsobugs,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::WithCtxbugs, Setting::WithoutCtxbugs, Setting::WithIsobugs];

    pub fn name(self) -> &'static str {
        match self {
            Setting::WithCtxbugs => "with_ctxbugs",
            Setting::WithoutCtxbugs => "without_ctxbugs",
            Setting::WithIsobugs => "with_isobugs",
        }
    }
}

/// The reused method shown to the model, with the solution locations it is
/// scored on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationInput {
    pub setting: Setting,
    pub case_id: String,
    pub instance_id: String,
    pub rule_id: u8,
    pub code: String,
    pub locations: Vec<Location>,
}

impl AdaptationInput {
    pub fn with_ctxbugs(instance: &BugInstance) -> Self {
        Self::from_instance(Setting::WithCtxbugs, instance)
    }

    pub fn with_isobugs(instance: &BugInstance) -> Self {
        Self::from_instance(Setting::WithIsobugs, instance)
    }

    pub fn without_ctxbugs(masked: &MaskedCode, instance: &BugInstance) -> Self {
        AdaptationInput {
            setting: Setting::WithoutCtxbugs,
            case_id: masked.case_id.clone(),
            instance_id: masked.instance_id.clone(),
            rule_id: instance.rule_id,
            code: masked.source.clone(),
            locations: masked.locations.clone(),
        }
    }

    fn from_instance(setting: Setting, instance: &BugInstance) -> Self {
        AdaptationInput {
            setting,
            case_id: instance.case_id.clone(),
            instance_id: instance.id.clone(),
            rule_id: instance.rule_id,
            code: instance.method_source.clone(),
            locations: instance.locations(),
        }
    }

    pub fn task(&self) -> Task {
        perturb::rule(self.rule_id).map_or(Task::Functionality, |r| r.task)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model_id: String,
    pub setting: Setting,
    pub case_id: String,
    pub instance_id: String,
    pub rule_id: u8,
    pub passed: bool,
    pub bugs_total: usize,
    pub bugs_resolved: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atp: Option<f64>,
    /// How generated tokens were placed on the response text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atp_alignment: Option<String>,
    pub prompt_hash: String,
    /// Deobfuscated method extracted from the response.
    pub output_method: String,
    /// Set when generation, extraction or assembly failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

impl EvalRecord {
    pub fn task(&self) -> Task {
        perturb::rule(self.rule_id).map_or(Task::Functionality, |r| r.task)
    }
}

/// Per location: resolved when the location is matched in the output and the
/// matched node's text equals the solution's. An unparseable output resolves
/// nothing.
pub fn resolution_rate(
    solution: &Tree,
    output: Option<&Tree>,
    locations: &[Location],
    cfg: &DiffConfig,
) -> Result<(usize, usize)> {
    let total = locations.len();
    let Some(output) = output.filter(|t| !t.has_errors()) else {
        return Ok((0, total));
    };
    let diff = Diff::new(solution, output, cfg);
    let resolved = diff
        .locate_perturbed(locations)?
        .iter()
        .filter(|c| matches!(c, Correspondence::Matched { identical: true, .. }))
        .count();
    Ok((resolved, total))
}

/// Offsets of each generated token in `text`, placing tokens left to right
/// at the next occurrence. `None` if some token cannot be placed.
pub fn align_tokens(text: &str, tokens: &[&str]) -> Option<Vec<Span>> {
    let mut cursor = 0;
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let at = cursor + text.get(cursor..)?.find(tok)?;
        out.push(Span::new(at, at + tok.len()));
        cursor = at + tok.len();
    }
    Some(out)
}

/// Mean probability of the generated tokens overlapping `spans` (offsets in
/// the response text). `None` when the generation has no token
/// probabilities or no token falls inside the spans.
pub fn atp(generation: &Generation, spans: &[Span]) -> Option<f64> {
    let probs = generation.token_probs.as_ref()?;
    let toks: Vec<&str> = probs.iter().map(|p| p.token.as_str()).collect();
    let placed = align_tokens(&generation.text, &toks)?;
    let inside: Vec<f64> = placed
        .iter()
        .zip(probs)
        .filter(|(s, _)| !s.is_empty() && spans.iter().any(|b| b.overlaps(**s)))
        .map(|(_, p)| p.prob)
        .collect();
    if inside.is_empty() {
        return None;
    }
    Some(inside.iter().sum::<f64>() / inside.len() as f64)
}

/// Map a span of `code` onto `text[offset..]`, where the two agree on every
/// non-whitespace character.
fn map_span(code: &str, text: &str, offset: usize, span: Span) -> Option<Span> {
    let mut raw = text.get(offset..)?.char_indices().filter(|(_, c)| !c.is_whitespace());
    let mut start = None;
    let mut end = None;
    for (i, c) in code.char_indices().filter(|(_, c)| !c.is_whitespace()) {
        let (j, d) = raw.next()?;
        if c != d {
            return None;
        }
        if i >= span.start && start.is_none() {
            start = Some(offset + j);
        }
        if i < span.end {
            end = Some(offset + j + d.len_utf8());
        } else {
            break;
        }
    }
    Some(Span::new(start?, end?))
}

pub struct Evaluator<'r> {
    pub runner: &'r dyn TestRunner,
    pub timeout: Duration,
    pub diff: DiffConfig,
}

impl<'r> Evaluator<'r> {
    pub fn new(runner: &'r dyn TestRunner) -> Self {
        Evaluator { runner, timeout: crate::testexec::DEFAULT_TIMEOUT, diff: DiffConfig::default() }
    }

    /// Prompt the model with the input under class-level renaming, then test
    /// and score its answer.
    pub fn run_adaptation(
        &self,
        case: &AdaptationCase,
        input: &AdaptationInput,
        client: &Client,
    ) -> Result<EvalRecord> {
        let context = build_target_context(case)?;
        let map = build_renaming(case, Scope::Class)?;
        let mut prompt = build_adaptation_prompt(case, &input.code, &context, &map)?;
        prompt.metadata.rule_id = Some(input.rule_id);
        prompt.metadata.setting = Some(input.setting.name().to_string());
        let generation = client.generate(&prompt);
        Ok(self.score(case, input, &generation, &map))
    }

    /// Score a generation that answers an adaptation prompt for `input`.
    pub fn score(
        &self,
        case: &AdaptationCase,
        input: &AdaptationInput,
        generation: &Generation,
        map: &crate::obfuscate::RenamingMap,
    ) -> EvalRecord {
        let mut rec = EvalRecord {
            model_id: generation.model_id.clone(),
            setting: input.setting,
            case_id: case.case_id.clone(),
            instance_id: input.instance_id.clone(),
            rule_id: input.rule_id,
            passed: false,
            bugs_total: input.locations.len(),
            bugs_resolved: 0,
            atp: None,
            atp_alignment: None,
            prompt_hash: generation.prompt_hash.clone(),
            output_method: String::new(),
            flag: None,
        };
        if let Some(e) = &generation.error {
            rec.flag = Some(format!("generation failed: {e}"));
            return rec;
        }
        let extracted = extract_code(&generation.text);
        if extracted.is_empty() {
            rec.flag = Some("no code in response".into());
            return rec;
        }
        let (obf_code, _) = dedent(&extracted.code);
        let (code, _) = dedent(&deobfuscate(&extracted.code, map));
        rec.output_method = code.clone();

        match assemble(case, &code) {
            Ok(program) => rec.passed = self.runner.run(&program, self.timeout).all_passed,
            Err(e) => rec.flag = Some(format!("assembly: {e}")),
        }

        let output = syntax::parse(&code, case.language).ok();
        let solution = match syntax::parse(&case.solution_method, case.language) {
            Ok(t) => t,
            Err(e) => {
                rec.flag = Some(format!("solution: {e}"));
                return rec;
            }
        };
        match resolution_rate(&solution, output.as_ref(), &input.locations, &self.diff) {
            Ok((r, _)) => rec.bugs_resolved = r,
            Err(e) => rec.flag = Some(e.to_string()),
        }

        // ATP over the output tokens at the matched bug locations. Renaming
        // keeps the tree shape, so paths carry over to the obfuscated answer.
        if generation.token_probs.is_some() {
            let spans = output.as_ref().filter(|t| !t.has_errors()).and_then(|out| {
                let obf = syntax::parse(&obf_code, case.language).ok()?;
                let corr = Diff::new(&solution, out, &self.diff).locate_perturbed(&input.locations).ok()?;
                let spans: Vec<Span> = corr
                    .iter()
                    .filter_map(|c| match c {
                        Correspondence::Matched { variant, .. } => obf.node_at(variant),
                        Correspondence::Deleted => None,
                    })
                    .filter_map(|n| map_span(&obf_code, &generation.text, extracted.offset, n.span))
                    .collect();
                Some(spans)
            });
            rec.atp = spans.and_then(|s| atp(generation, &s));
            rec.atp_alignment = Some("greedy_prefix".into());
        }
        rec
    }
}

/// Round half away from zero to two decimals.
pub fn round2(x: f64) -> f64 {
    // the nudge keeps values like 22.525 (stored as 22.52499..) rounding up
    let scaled = x.abs() * 100.0;
    (scaled + 0.5 + 1e-9).floor().copysign(x) / 100.0
}

pub fn percent(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Percentage of records that pass; `None` for an empty group.
pub fn pass_at_1(records: &[&EvalRecord]) -> Option<f64> {
    percent(records.iter().filter(|r| r.passed).count(), records.len())
}

/// Drop from `baseline` to `value`, relative to the baseline, in percent.
pub fn relative_drop(baseline: f64, value: f64) -> Option<f64> {
    (baseline != 0.0).then(|| 100.0 * (baseline - value) / baseline)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    /// Task title, or "All".
    pub task: String,
    pub setting: Setting,
    pub cases: usize,
    pub passed: usize,
    pub pass_at_1: f64,
    pub bugs_total: usize,
    pub bugs_resolved: usize,
    pub rr: f64,
    /// Relative to the same model and task without CtxBugs.
    pub relative_pass_drop: Option<f64>,
    pub relative_rr_drop: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
    /// Groups left out, with the reason.
    pub notes: Vec<String>,
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "model",
    "task",
    "setting",
    "cases",
    "pass_at_1",
    "bugs_total",
    "bugs_resolved",
    "rr",
    "relative_pass_drop",
    "relative_rr_drop",
];

/// Rows per model × task × setting, plus an "All" task per model and
/// setting. Rows are sorted by model, task order, then setting.
pub fn report(records: &[EvalRecord]) -> ReportTable {
    let mut groups: BTreeMap<(String, usize, Setting), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        let t = Task::ALL.iter().position(|&t| t == r.task()).unwrap_or(0);
        groups.entry((r.model_id.clone(), t, r.setting)).or_default().push(r);
        groups.entry((r.model_id.clone(), Task::ALL.len(), r.setting)).or_default().push(r);
    }
    let mut table = ReportTable::default();
    let mut base: BTreeMap<(String, usize), (f64, f64)> = BTreeMap::new();
    for ((model, t, setting), recs) in &groups {
        let task = Task::ALL.get(*t).map_or("All", |t| t.title()).to_string();
        let Some(p) = pass_at_1(recs) else {
            table.notes.push(format!("{model} / {task} / {}: no records", setting.name()));
            continue;
        };
        let bugs_total: usize = recs.iter().map(|r| r.bugs_total).sum();
        let bugs_resolved: usize = recs.iter().map(|r| r.bugs_resolved).sum();
        let Some(rr) = percent(bugs_resolved, bugs_total) else {
            table.notes.push(format!("{model} / {task} / {}: no bug locations", setting.name()));
            continue;
        };
        if *setting == Setting::WithoutCtxbugs {
            base.insert((model.clone(), *t), (p, rr));
        }
        table.rows.push(ReportRow {
            model: model.clone(),
            task,
            setting: *setting,
            cases: recs.len(),
            passed: recs.iter().filter(|r| r.passed).count(),
            pass_at_1: p,
            bugs_total,
            bugs_resolved,
            rr,
            relative_pass_drop: None,
            relative_rr_drop: None,
        });
    }
    for row in &mut table.rows {
        if row.setting == Setting::WithoutCtxbugs {
            continue;
        }
        let t = Task::ALL.iter().position(|t| t.title() == row.task).unwrap_or(Task::ALL.len());
        if let Some(&(bp, brr)) = base.get(&(row.model.clone(), t)) {
            row.relative_pass_drop = relative_drop(bp, row.pass_at_1);
            row.relative_rr_drop = relative_drop(brr, row.rr);
        }
    }
    table
}

fn fmt2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",") + "\n";
        for r in &self.rows {
            let opt = |x: Option<f64>| x.map(fmt2).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                csv_field(&r.model),
                csv_field(&r.task),
                r.setting.name(),
                r.cases,
                fmt2(r.pass_at_1),
                r.bugs_total,
                r.bugs_resolved,
                fmt2(r.rr),
                opt(r.relative_pass_drop),
                opt(r.relative_rr_drop),
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
