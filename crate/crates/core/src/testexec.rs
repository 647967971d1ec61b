// SPDX-License-Identifier: Apache-2.0

//! Candidate assembly and test execution.
//!
//! [`assemble`] puts a candidate method into the class file at the slot of
//! the target method. A [`TestRunner`] executes the test suite against the
//! assembled module. [`ProcessShim`] hands the job to an external runner
//! process through JSON files:
//!
//! - job: `{"module_source", "tests_source", "timeout"}`
//! - result: `{"tests": [{"name", "verdict", "message"}], "duration"}`
//!
//! [`MockShim`] produces the same result records without running code, from
//! a table of canned verdicts with a fallback that compares the candidate to
//! the reference method.

use std::collections::HashMap;
use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{single_function, AdaptationCase, ClassFile};
use crate::syntax::{self, dedent, lex, reindent, Grammar, SpanEdit};
use crate::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledProgram {
    pub case_id: String,
    pub module_source: String,
    pub tests_source: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub tests: Vec<TestResult>,
    pub all_passed: bool,
    pub timed_out: bool,
    /// Seconds.
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl TestOutcome {
    /// `all_passed` holds when at least one test ran, all passed, and the run
    /// did not time out.
    pub fn new(tests: Vec<TestResult>, timed_out: bool, duration: f64, diagnostic: Option<String>) -> Self {
        let all_passed = !timed_out && !tests.is_empty() && tests.iter().all(|t| t.verdict == Verdict::Pass);
        TestOutcome { tests, all_passed, timed_out, duration, diagnostic }
    }

    /// Every discovered test marked as an error.
    pub fn all_error(names: &[String], message: &str, timed_out: bool, duration: f64) -> Self {
        let tests = names
            .iter()
            .map(|n| TestResult { name: n.clone(), verdict: Verdict::Error, message: message.to_string() })
            .collect();
        TestOutcome::new(tests, timed_out, duration, Some(message.to_string()))
    }

    pub fn failing(&self) -> impl Iterator<Item = &TestResult> {
        self.tests.iter().filter(|t| t.verdict != Verdict::Pass)
    }
}

/// Job file written for the shim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShimJob {
    pub module_source: String,
    pub tests_source: String,
    /// Seconds.
    pub timeout: f64,
}

/// Result file written by the shim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShimResult {
    pub tests: Vec<TestResult>,
    #[serde(default)]
    pub duration: f64,
    /// Protocol-level problem, e.g. no tests discovered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Insert `candidate` into the class file in place of the target method.
/// The candidate is re-indented to the slot and renamed to `method_name` if
/// its definition carries another name.
pub fn assemble(case: &AdaptationCase, candidate: &str) -> Result<AssembledProgram> {
    let (body, _) = dedent(candidate);
    let ctree = syntax::parse(&body, case.language)?;
    if ctree.has_errors() {
        return Err(Error::Assembly("candidate does not parse".into()));
    }
    let func =
        single_function(ctree.root()).ok_or_else(|| Error::Assembly("candidate is not a single method".into()))?;
    let name = func.child_by_field("name").ok_or_else(|| Error::Assembly("method without a name".into()))?;
    let method = if ctree.node_text(name)? != case.method_name {
        syntax::splice(&body, &[SpanEdit::new(name.span, case.method_name.clone())])?
    } else {
        body.clone()
    };
    // the candidate takes the place of the definition text, which starts
    // after the slot's indentation and ends at the last line's content
    let start = ctree.root().named_children().find(|n| n.kind != "comment").map_or(0, |n| n.span.start);
    let method = method[start..].trim_end();

    let tree = syntax::parse(&case.class_context, case.language)?;
    let class = ClassFile::new(&tree, &case.class_name)
        .ok_or_else(|| Error::MethodNotFound { class: case.class_name.clone(), method: case.method_name.clone() })?;
    let slot = class
        .method(&case.method_name)
        .ok_or_else(|| Error::MethodNotFound { class: case.class_name.clone(), method: case.method_name.clone() })?;
    let text = reindent(method, &slot.indent, true);
    let module_source = syntax::splice(&case.class_context, &[SpanEdit::new(slot.span, text)])?;

    let check = syntax::parse(&module_source, case.language)?;
    if check.has_errors() {
        return Err(Error::Assembly("assembled module does not parse".into()));
    }
    let defs = ClassFile::new(&check, &case.class_name)
        .map_or(0, |c| c.methods().iter().filter(|m| m.name == case.method_name).count());
    if defs != 1 {
        return Err(Error::Assembly(format!("{defs} definitions of `{}` after assembly", case.method_name)));
    }
    Ok(AssembledProgram { case_id: case.case_id.clone(), module_source, tests_source: case.test_suite.clone() })
}

/// Test names in a suite: `Class.test_x` for methods of classes and bare
/// `test_x` for module-level functions, in source order.
pub fn discover_tests(tests_source: &str) -> Vec<String> {
    let Ok(tree) = syntax::parse(tests_source, Grammar::Python) else { return Vec::new() };
    let src = tree.source();
    let name_of = |n: &syntax::Node| n.child_by_field("name").map(|id| &src[id.span.start..id.span.end]);
    let unwrap = |n: &'_ syntax::Node| -> Option<syntax::Node> {
        match n.kind {
            "decorated_definition" => n.child_by_field("definition").cloned(),
            _ => Some(n.clone()),
        }
    };
    let mut out = Vec::new();
    for item in tree.root().named_children() {
        let Some(def) = unwrap(item) else { continue };
        match def.kind {
            "class_definition" => {
                let Some(cname) = name_of(&def) else { continue };
                let Some(body) = def.child_by_field("body") else { continue };
                for m in body.named_children() {
                    let Some(f) = unwrap(m) else { continue };
                    if f.kind == "function_definition" {
                        if let Some(n) = name_of(&f).filter(|n| n.starts_with("test")) {
                            out.push(format!("{cname}.{n}"));
                        }
                    }
                }
            }
            "function_definition" => {
                if let Some(n) = name_of(&def).filter(|n| n.starts_with("test")) {
                    out.push(n.to_string());
                }
            }
            _ => {}
        }
    }
    out
}

/// Turn a result record into an outcome. A protocol error or an empty test
/// list marks every discovered test as an error.
pub fn outcome_from_result(result: ShimResult, discovered: &[String]) -> TestOutcome {
    match result.error {
        Some(e) => TestOutcome::all_error(discovered, &e, false, result.duration),
        None if result.tests.is_empty() => {
            TestOutcome::all_error(discovered, "no tests reported", false, result.duration)
        }
        None => TestOutcome::new(result.tests, false, result.duration, None),
    }
}

pub trait TestRunner: Send + Sync {
    fn run(&self, program: &AssembledProgram, timeout: Duration) -> TestOutcome;
}

/// Runs an external shim as `<command...> job.json result.json` in a fresh
/// temporary directory with a scrubbed environment.
#[derive(Clone, Debug)]
pub struct ProcessShim {
    pub command: Vec<String>,
    /// Variables passed through from the parent environment.
    pub env_allowlist: Vec<String>,
}

impl ProcessShim {
    pub fn new(command: Vec<String>) -> Self {
        ProcessShim { command, env_allowlist: vec!["PATH".into(), "LANG".into(), "LC_ALL".into(), "SYSTEMROOT".into()] }
    }

    fn run_inner(&self, program: &AssembledProgram, timeout: Duration, names: &[String]) -> Result<TestOutcome> {
        let (exe, args) = self.command.split_first().ok_or_else(|| Error::Shim("empty shim command".into()))?;
        let dir = tempfile::tempdir()?;
        let job_path = dir.path().join("job.json");
        let result_path: PathBuf = dir.path().join("result.json");
        let job = ShimJob {
            module_source: program.module_source.clone(),
            tests_source: program.tests_source.clone(),
            timeout: timeout.as_secs_f64(),
        };
        std::fs::write(&job_path, serde_json::to_vec(&job)?)?;
        let mut cmd = Command::new(exe);
        cmd.args(args)
            .arg(&job_path)
            .arg(&result_path)
            .current_dir(dir.path())
            .env_clear()
            .env("HOME", dir.path())
            .env("TMPDIR", dir.path())
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped());
        for k in &self.env_allowlist {
            if let Ok(v) = std::env::var(k) {
                cmd.env(k, v);
            }
        }
        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|e| Error::Shim(format!("cannot start `{exe}`: {e}")))?;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if started.elapsed() >= timeout {
                let _ = child.kill();
                let _ = child.wait();
                let secs = started.elapsed().as_secs_f64();
                return Ok(TestOutcome::all_error(names, "timed out", true, secs));
            }
            std::thread::sleep(Duration::from_millis(10));
        };
        let secs = started.elapsed().as_secs_f64();
        let mut stderr = String::new();
        if let Some(mut e) = child.stderr.take() {
            let _ = e.read_to_string(&mut stderr);
        }
        if !status.success() {
            let msg = format!("shim exited with {status}: {}", stderr.trim());
            return Ok(TestOutcome::all_error(names, &msg, false, secs));
        }
        let parsed = std::fs::read(&result_path)
            .map_err(|e| e.to_string())
            .and_then(|b| serde_json::from_slice::<ShimResult>(&b).map_err(|e| e.to_string()));
        Ok(match parsed {
            Ok(r) => outcome_from_result(r, names),
            Err(e) => TestOutcome::all_error(names, &format!("unreadable result file: {e}"), false, secs),
        })
    }
}

impl TestRunner for ProcessShim {
    fn run(&self, program: &AssembledProgram, timeout: Duration) -> TestOutcome {
        let names = discover_tests(&program.tests_source);
        self.run_inner(program, timeout, &names)
            .unwrap_or_else(|e| TestOutcome::all_error(&names, &e.to_string(), false, 0.0))
    }
}

/// Token texts of code, without comments, for equivalence checks.
pub fn normalized_tokens(code: &str) -> Vec<String> {
    let lexed = lex::tokenize(code);
    lexed.tokens.iter().filter(|t| t.kind != lex::TokenKind::Comment).map(|t| t.text(code).to_string()).collect()
}

#[derive(Clone, Debug)]
struct Reference {
    tokens: Vec<String>,
    class_name: String,
    method_name: String,
    /// Names whose mention in a test means the test exercises the target.
    exercised_by: Vec<String>,
}

/// In-process stand-in for the shim. Verdicts come from a table keyed by
/// `(case_id, normalized method tokens)`; otherwise a method equal to the
/// reference passes everything and any other method fails the tests that
/// mention the target or one of its callers.
#[derive(Clone, Debug, Default)]
pub struct MockShim {
    table: HashMap<(String, Vec<String>), Vec<TestResult>>,
    refs: HashMap<String, Reference>,
}

impl MockShim {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_references<'a>(cases: impl IntoIterator<Item = &'a AdaptationCase>) -> Self {
        let mut m = Self::default();
        for c in cases {
            m.add_reference(c);
        }
        m
    }

    pub fn add_reference(&mut self, case: &AdaptationCase) {
        let mut exercised_by = vec![case.method_name.clone()];
        if let Ok(tree) = syntax::parse(&case.class_context, case.language) {
            if let Some(cf) = ClassFile::new(&tree, &case.class_name) {
                exercised_by.extend(cf.transitive_callers(&case.method_name));
            }
        }
        self.refs.insert(
            case.case_id.clone(),
            Reference {
                tokens: normalized_tokens(&case.solution_method),
                class_name: case.class_name.clone(),
                method_name: case.method_name.clone(),
                exercised_by,
            },
        );
    }

    /// Canned verdicts for a candidate method of a case.
    pub fn insert(&mut self, case_id: &str, method_source: &str, tests: Vec<TestResult>) {
        self.table.insert((case_id.to_string(), normalized_tokens(method_source)), tests);
    }

    fn target_method(program: &AssembledProgram, r: &Reference) -> Option<String> {
        let tree = syntax::parse(&program.module_source, Grammar::Python).ok()?;
        if tree.has_errors() {
            return None;
        }
        let cf = ClassFile::new(&tree, &r.class_name)?;
        let m = cf.method(&r.method_name)?;
        Some(program.module_source[m.span.start..m.span.end].to_string())
    }

    /// The result record the shim would write.
    pub fn result_for(&self, program: &AssembledProgram) -> ShimResult {
        let names = discover_tests(&program.tests_source);
        if names.is_empty() {
            return ShimResult { tests: Vec::new(), duration: 0.0, error: Some("no tests discovered".into()) };
        }
        let Some(r) = self.refs.get(&program.case_id) else {
            return ShimResult { tests: Vec::new(), duration: 0.0, error: Some("unknown case".into()) };
        };
        let Some(method) = Self::target_method(program, r) else {
            let tests = names
                .iter()
                .map(|n| TestResult { name: n.clone(), verdict: Verdict::Error, message: "ImportError".into() })
                .collect();
            return ShimResult { tests, duration: 0.0, error: None };
        };
        let tokens = normalized_tokens(&method);
        if let Some(tests) = self.table.get(&(program.case_id.clone(), tokens.clone())) {
            return ShimResult { tests: tests.clone(), duration: 0.0, error: None };
        }
        let same = tokens == r.tokens;
        let test_bodies = test_bodies(&program.tests_source);
        let tests = names
            .iter()
            .map(|n| {
                let body = test_bodies.get(n).map(String::as_str).unwrap_or("");
                let touches = r.exercised_by.iter().any(|m| mentions(body, m));
                let verdict = if same || !touches { Verdict::Pass } else { Verdict::Fail };
                let message = if verdict == Verdict::Fail { "AssertionError".to_string() } else { String::new() };
                TestResult { name: n.clone(), verdict, message }
            })
            .collect();
        ShimResult { tests, duration: 0.0, error: None }
    }
}

fn mentions(body: &str, name: &str) -> bool {
    let lexed = lex::tokenize(body);
    lexed.tokens.iter().any(|t| t.kind == lex::TokenKind::Name && t.text(body) == name)
}

fn test_bodies(tests_source: &str) -> HashMap<String, String> {
    let mut out = HashMap::new();
    let Ok(tree) = syntax::parse(tests_source, Grammar::Python) else { return out };
    let src = tree.source();
    for n in tree.preorder().filter(|n| n.kind == "function_definition") {
        let Some(name) = n.child_by_field("name") else { continue };
        let fname = &src[name.span.start..name.span.end];
        let class = tree
            .preorder()
            .filter(|c| c.kind == "class_definition" && c.span.contains(n.span))
            .last()
            .and_then(|c| c.child_by_field("name"))
            .map(|id| &src[id.span.start..id.span.end]);
        let key = match class {
            Some(c) => format!("{c}.{fname}"),
            None => fname.to_string(),
        };
        out.insert(key, src[n.span.start..n.span.end].to_string());
    }
    out
}

impl TestRunner for MockShim {
    fn run(&self, program: &AssembledProgram, _timeout: Duration) -> TestOutcome {
        let names = discover_tests(&program.tests_source);
        // round-trip through the wire format so the mock exercises the contract
        let wire = serde_json::to_vec(&self.result_for(program)).expect("result serializes");
        match serde_json::from_slice::<ShimResult>(&wire) {
            Ok(r) => outcome_from_result(r, &names),
            Err(e) => TestOutcome::all_error(&names, &e.to_string(), false, 0.0),
        }
    }
}
