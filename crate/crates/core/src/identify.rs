// SPDX-License-Identifier: Apache-2.0

//! Classification of generated variants into bug instances.
//!
//! A variant is kept when it differs from the reference solution at one or
//! more perturbed locations, nowhere else, and fails the class tests. The
//! checks run in a fixed order and the first one that fires decides the
//! verdict:
//!
//! | step | verdict |
//! |------|---------|
//! | no code in the response | `Empty` |
//! | code is not a single parseable method | `Unparseable` |
//! | every location matched with identical text | `NoDifference` |
//! | the edit script touches anything else | `ExtraneousChange` |
//! | the assembled class passes all tests | `PassesTests` |
//! | otherwise | `Valid` |
//!
//! `Duplicate` is assigned afterwards by [`clean`].

use std::collections::{BTreeMap, HashSet};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{single_function, AdaptationCase};
use crate::differ::{Correspondence, Diff, DiffConfig};
use crate::llm::{extract_code, Generation};
use crate::obfuscate::{deobfuscate, RenamingMap};
use crate::perturb::{self, Location, PerturbedTemplate, Task};
use crate::syntax::{self, dedent, lex};
use crate::testexec::{assemble, TestOutcome, TestRunner, DEFAULT_TIMEOUT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BugKind {
    CtxBug,
    IsoBug,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugLocation {
    pub location: Location,
    pub correspondence: Correspondence,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugInstance {
    pub id: String,
    pub kind: BugKind,
    pub case_id: String,
    pub rule_id: u8,
    /// Deobfuscated variant method.
    pub method_source: String,
    /// Perturbed locations at which the variant differs from the solution.
    pub bug_locations: Vec<BugLocation>,
    pub generator_model_id: String,
    /// Template id for CtxBugs, source instance id for IsoBugs.
    pub provenance: String,
}

impl BugInstance {
    pub fn task(&self) -> Task {
        perturb::rule(self.rule_id).map_or(Task::Functionality, |r| r.task)
    }

    pub fn locations(&self) -> Vec<Location> {
        self.bug_locations.iter().map(|b| b.location.clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Valid,
    NoDifference,
    ExtraneousChange,
    PassesTests,
    Unparseable,
    Empty,
    Duplicate,
}

impl Verdict {
    pub const ALL: [Verdict; 7] = [
        Verdict::Valid,
        Verdict::NoDifference,
        Verdict::ExtraneousChange,
        Verdict::PassesTests,
        Verdict::Unparseable,
        Verdict::Empty,
        Verdict::Duplicate,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub details: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<BugInstance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<TestOutcome>,
}

impl Classification {
    fn reject(verdict: Verdict, details: impl Into<String>) -> Self {
        Classification { verdict, details: details.into(), instance: None, outcome: None }
    }
}

/// What a variant is checked against.
#[derive(Clone, Debug)]
pub struct Candidate<'a> {
    pub kind: BugKind,
    pub rule_id: u8,
    pub provenance: &'a str,
    pub id: String,
    pub locations: &'a [Location],
}

pub struct Identifier<'r> {
    pub runner: &'r dyn TestRunner,
    pub timeout: Duration,
    pub diff: DiffConfig,
}

impl<'r> Identifier<'r> {
    pub fn new(runner: &'r dyn TestRunner) -> Self {
        Identifier { runner, timeout: DEFAULT_TIMEOUT, diff: DiffConfig::default() }
    }

    /// Classify a generation produced from `template`.
    pub fn classify_variant(
        &self,
        case: &AdaptationCase,
        template: &PerturbedTemplate,
        generation: &Generation,
        map: &RenamingMap,
    ) -> Classification {
        let id = format!("{}@{}", template.id(), generation.model_id);
        let cand = Candidate {
            kind: BugKind::CtxBug,
            rule_id: template.rule_id,
            provenance: &template.id(),
            id,
            locations: &template.perturbed_locations,
        };
        self.classify(case, &cand, generation, map)
    }

    pub fn classify(
        &self,
        case: &AdaptationCase,
        cand: &Candidate<'_>,
        generation: &Generation,
        map: &RenamingMap,
    ) -> Classification {
        if let Some(e) = &generation.error {
            return Classification::reject(Verdict::Empty, format!("generation failed: {e}"));
        }
        let extracted = extract_code(&generation.text);
        if extracted.is_empty() {
            return Classification::reject(Verdict::Empty, "no code in response");
        }
        let (code, _) = dedent(&deobfuscate(&extracted.code, map));
        let variant = match syntax::parse(&code, case.language) {
            Ok(t) if !t.has_errors() && single_function(t.root()).is_some() => t,
            _ => return Classification::reject(Verdict::Unparseable, "not a single parseable method"),
        };
        let solution = match syntax::parse(&case.solution_method, case.language) {
            Ok(t) => t,
            Err(e) => return Classification::reject(Verdict::Unparseable, format!("solution: {e}")),
        };
        let diff = Diff::new(&solution, &variant, &self.diff);
        let corr = match diff.locate_perturbed(cand.locations) {
            Ok(c) => c,
            Err(e) => return Classification::reject(Verdict::Unparseable, e.to_string()),
        };
        if corr.iter().all(|c| !c.is_changed()) {
            return Classification::reject(Verdict::NoDifference, "identical at every location");
        }
        match diff.changes_outside(cand.locations) {
            Ok(false) => {}
            Ok(true) => return Classification::reject(Verdict::ExtraneousChange, "edits outside the locations"),
            Err(e) => return Classification::reject(Verdict::Unparseable, e.to_string()),
        }
        let program = match assemble(case, &code) {
            Ok(p) => p,
            Err(e) => return Classification::reject(Verdict::Unparseable, e.to_string()),
        };
        let outcome = self.runner.run(&program, self.timeout);
        if outcome.all_passed {
            return Classification {
                verdict: Verdict::PassesTests,
                details: "all tests pass".into(),
                instance: None,
                outcome: Some(outcome),
            };
        }
        let bug_locations: Vec<BugLocation> = cand
            .locations
            .iter()
            .zip(corr)
            .filter(|(_, c)| c.is_changed())
            .map(|(l, c)| BugLocation { location: l.clone(), correspondence: c })
            .collect();
        let failing: Vec<&str> = outcome.failing().map(|t| t.name.as_str()).collect();
        let details = if outcome.timed_out { "timed out".to_string() } else { format!("fails {}", failing.join(", ")) };
        Classification {
            verdict: Verdict::Valid,
            details,
            instance: Some(BugInstance {
                id: cand.id.clone(),
                kind: cand.kind,
                case_id: case.case_id.clone(),
                rule_id: cand.rule_id,
                method_source: code,
                bug_locations,
                generator_model_id: generation.model_id.clone(),
                provenance: cand.provenance.to_string(),
            }),
            outcome: Some(outcome),
        }
    }
}

/// Dedup key: case plus the method's tokens (comments included) joined by
/// single spaces, so layout differences collapse but comments count.
pub fn dedup_key(instance: &BugInstance) -> (String, String) {
    let src = &instance.method_source;
    let lexed = lex::tokenize(src);
    let toks: Vec<&str> = lexed.tokens.iter().map(|t| t.text(src)).collect();
    (instance.case_id.clone(), toks.join(" "))
}

/// Indices (into `instances`) of the entries [`clean`] drops.
pub fn duplicates(instances: &[BugInstance]) -> Vec<usize> {
    let mut seen = HashSet::new();
    instances
        .iter()
        .enumerate()
        .filter(|(_, i)| i.method_source.trim().is_empty() || !seen.insert(dedup_key(i)))
        .map(|(k, _)| k)
        .collect()
}

/// Drop empty and repeated instances, keeping the first occurrence.
pub fn clean(instances: Vec<BugInstance>) -> Vec<BugInstance> {
    let drop: HashSet<usize> = duplicates(&instances).into_iter().collect();
    instances.into_iter().enumerate().filter(|(k, _)| !drop.contains(k)).map(|(_, i)| i).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub kind: BugKind,
    /// Task title, or "All".
    pub task: String,
    pub instances: usize,
    pub bugs: usize,
}

impl SummaryRow {
    /// `983 (1,761)` style cell.
    pub fn cell(&self) -> String {
        format!("{} ({})", thousands(self.instances), thousands(self.bugs))
    }
}

pub fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Instance and bug counts per model, kind and task, plus an "All" row per
/// model and kind.
pub fn summarize(instances: &[BugInstance]) -> Vec<SummaryRow> {
    let mut acc: BTreeMap<(String, BugKind, usize), (usize, usize)> = BTreeMap::new();
    let tasks = [Task::Interface, Task::Functionality, Task::Identifier, Task::Dependency];
    for i in instances {
        let t = tasks.iter().position(|t| *t == i.task()).unwrap_or(0);
        for slot in [t, tasks.len()] {
            let e = acc.entry((i.generator_model_id.clone(), i.kind, slot)).or_default();
            e.0 += 1;
            e.1 += i.bug_locations.len();
        }
    }
    acc.into_iter()
        .map(|((model, kind, slot), (n, b))| SummaryRow {
            model,
            kind,
            task: tasks.get(slot).map_or("All".to_string(), |t| t.title().to_string()),
            instances: n,
            bugs: b,
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("model,kind,task,instances,bugs,cell\n");
    for r in rows {
        out.push_str(&format!("{},{:?},{},{},{},\"{}\"\n", r.model, r.kind, r.task, r.instances, r.bugs, r.cell()));
    }
    out
}

/// Up to `per_stratum` instances from every (model, kind, rule) group, for
/// manual review.
pub fn stratified_sample(instances: &[BugInstance], per_stratum: usize, seed: u64) -> Vec<BugInstance> {
    let mut groups: BTreeMap<(String, BugKind, u8), Vec<&BugInstance>> = BTreeMap::new();
    for i in instances {
        groups.entry((i.generator_model_id.clone(), i.kind, i.rule_id)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (_, mut g) in groups {
        g.shuffle(&mut rng);
        out.extend(g.into_iter().take(per_stratum).cloned());
    }
    out
}
