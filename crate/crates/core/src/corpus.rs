// SPDX-License-Identifier: Apache-2.0

//! Benchmark corpus: loading, validation, class-file queries, and the
//! caller-stripped target context shown to models during evaluation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::syntax::{self, Grammar, Node, Span, SpanEdit, Tree};
use crate::{Error, Result};

/// One corpus entry: a target method inside its class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationCase {
    pub case_id: String,
    pub class_name: String,
    pub class_context: String,
    pub method_name: String,
    pub solution_method: String,
    pub requirement: String,
    pub test_suite: String,
    pub lib_deps: Vec<String>,
    pub topic: String,
    #[serde(default, skip_serializing_if = "is_default_grammar")]
    pub language: Grammar,
}

fn is_default_grammar(g: &Grammar) -> bool {
    *g == Grammar::default()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetContext {
    pub case_id: String,
    pub context_source: String,
    pub removed_methods: Vec<String>,
}

/// Names of standard-library top-level modules, excluded from `lib_deps`.
#[derive(Clone, Debug)]
pub struct StdlibAllowlist {
    version: String,
    names: HashSet<String>,
}

const PYTHON_310_STDLIB: &str = include_str!("../config/python-3.10-stdlib.txt");

impl StdlibAllowlist {
    /// Parse a list with one module name per line; `#` starts a comment.
    pub fn parse(version: impl Into<String>, text: &str) -> Self {
        let names = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        StdlibAllowlist { version: version.into(), names }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::CorpusIo { path: path.into(), source })?;
        let version = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        Ok(Self::parse(version, &text))
    }

    pub fn python310() -> Self {
        Self::parse("python-3.10", PYTHON_310_STDLIB)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn contains(&self, module: &str) -> bool {
        self.names.contains(module)
    }
}

impl Default for StdlibAllowlist {
    fn default() -> Self {
        Self::python310()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// 1-based line in the corpus file, 0 for file-level messages.
    pub line: usize,
    pub case_id: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Skipped => "skipped",
        };
        write!(f, "{sev}: line {}", self.line)?;
        if let Some(id) = &self.case_id {
            write!(f, " ({id})")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub cases: Vec<AdaptationCase>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Read a JSONL corpus. Bad records are skipped with a diagnostic; a missing
/// file or a duplicate `case_id` is an error.
pub fn load_corpus(path: &Path, stdlib: &StdlibAllowlist) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::CorpusIo { path: path.into(), source })?;
    parse_corpus(&text, stdlib)
}

pub fn parse_corpus(text: &str, stdlib: &StdlibAllowlist) -> Result<Corpus> {
    let mut out = Corpus::default();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let case: AdaptationCase = match serde_json::from_str(line) {
            Ok(c) => c,
            Err(e) => {
                let case_id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("case_id").and_then(|c| c.as_str()).map(str::to_string));
                out.diagnostics.push(Diagnostic {
                    severity: Severity::Skipped,
                    line: lineno,
                    case_id,
                    message: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        if !seen.insert(case.case_id.clone()) {
            return Err(Error::DuplicateCase(case.case_id));
        }
        if let Err(e) = validate_case(&case, stdlib) {
            out.diagnostics.push(Diagnostic {
                severity: Severity::Skipped,
                line: lineno,
                case_id: Some(case.case_id.clone()),
                message: e.to_string(),
            });
            continue;
        }
        out.cases.push(case);
    }
    if out.cases.is_empty() && out.diagnostics.is_empty() {
        out.diagnostics.push(Diagnostic {
            severity: Severity::Warning,
            line: 0,
            case_id: None,
            message: "corpus is empty".into(),
        });
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(cases: &[AdaptationCase], mut w: W) -> Result<()> {
    for case in cases {
        serde_json::to_writer(&mut w, case)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn invalid(case: &AdaptationCase, reason: impl Into<String>) -> Error {
    Error::InvalidCase { case_id: case.case_id.clone(), reason: reason.into() }
}

/// Check every `AdaptationCase` invariant.
pub fn validate_case(case: &AdaptationCase, stdlib: &StdlibAllowlist) -> Result<()> {
    let sol = syntax::parse(&case.solution_method, case.language)?;
    if sol.has_errors() || single_function(sol.root()).is_none() {
        return Err(invalid(case, "solution_method does not parse as a single method definition"));
    }
    let ctx = syntax::parse(&case.class_context, case.language)?;
    if ctx.has_errors() {
        return Err(invalid(case, "class_context does not parse"));
    }
    let class = ClassFile::new(&ctx, &case.class_name)
        .ok_or_else(|| invalid(case, format!("class `{}` not found in class_context", case.class_name)))?;
    if class.method(&case.method_name).is_none() {
        return Err(invalid(case, format!("method `{}` not found in class_context", case.method_name)));
    }
    let test_names: HashSet<&str> = syntax::lex::tokenize(&case.test_suite)
        .tokens
        .iter()
        .filter(|t| t.kind == syntax::lex::TokenKind::Name)
        .map(|t| t.text(&case.test_suite))
        .collect();
    if !test_names.contains(case.class_name.as_str()) {
        return Err(invalid(case, "test_suite does not reference the class"));
    }
    let exercised = std::iter::once(case.method_name.clone())
        .chain(class.transitive_callers(&case.method_name))
        .any(|m| test_names.contains(m.as_str()));
    if !exercised {
        return Err(invalid(case, "test_suite does not exercise the target method"));
    }
    let deps = lib_deps_of(&ctx, stdlib);
    if deps != case.lib_deps {
        return Err(invalid(case, format!("lib_deps {:?} do not match imports {:?}", case.lib_deps, deps)));
    }
    Ok(())
}

/// The sole function definition of a module, unwrapping decorators.
pub fn single_function(module: &Node) -> Option<&Node> {
    let named: Vec<&Node> = module.named_children().filter(|n| n.kind != "comment").collect();
    match named.as_slice() {
        [n] => function_of(n),
        _ => None,
    }
}

fn function_of(n: &Node) -> Option<&Node> {
    match n.kind {
        "function_definition" => Some(n),
        "decorated_definition" => n.child_by_field("definition").filter(|d| d.kind == "function_definition"),
        _ => None,
    }
}

/// A method definition located in a class file.
#[derive(Clone, Debug)]
pub struct MethodDef<'t> {
    pub name: String,
    /// The `function_definition` node.
    pub node: &'t Node,
    /// Definition including decorators.
    pub span: Span,
    /// Whole source lines covered by the definition, trailing newline included.
    pub line_span: Span,
    /// Indentation of the definition line.
    pub indent: String,
}

/// Structural queries over a parsed class file.
pub struct ClassFile<'t> {
    tree: &'t Tree,
    class: &'t Node,
    methods: Vec<MethodDef<'t>>,
}

impl<'t> ClassFile<'t> {
    /// Locate `class_name` among the module's top-level definitions.
    pub fn new(tree: &'t Tree, class_name: &str) -> Option<Self> {
        let src = tree.source();
        let class = tree.root().named_children().find_map(|n| {
            let c = match n.kind {
                "class_definition" => n,
                "decorated_definition" => n.child_by_field("definition")?,
                _ => return None,
            };
            (c.kind == "class_definition"
                && c.child_by_field("name").map(|id| &src[id.span.start..id.span.end]) == Some(class_name))
            .then_some(c)
        })?;
        let mut methods = Vec::new();
        if let Some(body) = class.child_by_field("body") {
            for item in body.named_children() {
                let Some(f) = function_of(item) else { continue };
                let Some(name) = f.child_by_field("name") else { continue };
                let line_start = src[..item.span.start].rfind('\n').map_or(0, |i| i + 1);
                let line_end = src[item.span.end..].find('\n').map_or(src.len(), |i| item.span.end + i + 1);
                methods.push(MethodDef {
                    name: src[name.span.start..name.span.end].to_string(),
                    node: f,
                    span: item.span,
                    line_span: Span::new(line_start, line_end),
                    indent: src[line_start..item.span.start].to_string(),
                });
            }
        }
        Some(ClassFile { tree, class, methods })
    }

    pub fn class_node(&self) -> &'t Node {
        self.class
    }

    pub fn methods(&self) -> &[MethodDef<'t>] {
        &self.methods
    }

    pub fn method(&self, name: &str) -> Option<&MethodDef<'t>> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Methods whose bodies call `target` through `self`/`cls` or by bare name.
    pub fn direct_callers(&self, target: &str) -> Vec<String> {
        let src = self.tree.source();
        self.methods
            .iter()
            .filter(|m| m.name != target)
            .filter(|m| {
                m.node.child_by_field("body").is_some_and(|b| b.preorder().any(|n| call_target(n, src) == Some(target)))
            })
            .map(|m| m.name.clone())
            .collect()
    }

    pub fn transitive_callers(&self, target: &str) -> Vec<String> {
        let mut found: Vec<String> = Vec::new();
        let mut frontier = vec![target.to_string()];
        while let Some(t) = frontier.pop() {
            for c in self.direct_callers(&t) {
                if c != target && !found.contains(&c) {
                    found.push(c.clone());
                    frontier.push(c);
                }
            }
        }
        found
    }
}

/// Method name invoked by a call node through `self.`/`cls.` or a bare name.
fn call_target<'s>(n: &Node, src: &'s str) -> Option<&'s str> {
    if n.kind != "call" {
        return None;
    }
    let f = n.child_by_field("function")?;
    let text = |n: &Node| &src[n.span.start..n.span.end];
    match f.kind {
        "identifier" => Some(text(f)),
        "attribute" => {
            let obj = f.child_by_field("object")?;
            (obj.kind == "identifier" && matches!(text(obj), "self" | "cls"))
                .then(|| f.child_by_field("attribute").map(text))
                .flatten()
        }
        _ => None,
    }
}

/// Class context with the target method and its direct in-class callers removed.
pub fn build_target_context(case: &AdaptationCase) -> Result<TargetContext> {
    let tree = syntax::parse(&case.class_context, case.language)?;
    let class = ClassFile::new(&tree, &case.class_name)
        .ok_or_else(|| Error::MethodNotFound { class: case.class_name.clone(), method: case.method_name.clone() })?;
    let target = class
        .method(&case.method_name)
        .ok_or_else(|| Error::MethodNotFound { class: case.class_name.clone(), method: case.method_name.clone() })?;
    let mut removed = vec![case.method_name.clone()];
    removed.extend(class.direct_callers(&case.method_name));
    let doomed: Vec<&MethodDef> = class.methods().iter().filter(|m| removed.contains(&m.name)).collect();
    let mut edits: Vec<SpanEdit> = doomed.iter().map(|m| SpanEdit::new(m.line_span, "")).collect();
    let body = class.class_node().child_by_field("body");
    let survivors = body.map_or(0, |b| {
        b.named_children().filter(|n| !doomed.iter().any(|m| m.span == n.span) && n.kind != "comment").count()
    });
    if survivors == 0 {
        edits[0].replacement = format!("{}pass\n", target.indent);
    }
    let context_source = syntax::splice(&case.class_context, &edits)?;
    let check = syntax::parse(&context_source, case.language)?;
    if check.has_errors() {
        return Err(invalid(case, "target context does not parse after removal"));
    }
    Ok(TargetContext { case_id: case.case_id.clone(), context_source, removed_methods: removed })
}

/// Local names bound by import statements, mapped to their root module.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ImportMap {
    bindings: BTreeMap<String, String>,
    roots: BTreeSet<String>,
}

impl ImportMap {
    pub fn from_tree(tree: &Tree) -> Self {
        let src = tree.source();
        let text = |n: &Node| src[n.span.start..n.span.end].to_string();
        let root_of = |n: &Node| text(n).split('.').next().unwrap_or("").trim().to_string();
        let mut map = ImportMap::default();
        for n in tree.preorder() {
            match n.kind {
                "import_statement" => {
                    for name in n.children_by_field("name") {
                        if name.kind == "aliased_import" {
                            let (Some(module), Some(alias)) =
                                (name.child_by_field("name"), name.child_by_field("alias"))
                            else {
                                continue;
                            };
                            map.roots.insert(root_of(module));
                            map.bindings.insert(text(alias), root_of(module));
                        } else {
                            let root = root_of(name);
                            map.roots.insert(root.clone());
                            map.bindings.insert(root.clone(), root);
                        }
                    }
                }
                "import_from_statement" => {
                    let Some(module) = n.child_by_field("module_name") else { continue };
                    if module.kind == "relative_import" {
                        continue;
                    }
                    let root = root_of(module);
                    map.roots.insert(root.clone());
                    for name in n.children_by_field("name") {
                        let local = match name.kind {
                            "aliased_import" => name.child_by_field("alias").map(text),
                            _ => Some(text(name).split('.').next().unwrap_or("").to_string()),
                        };
                        if let Some(local) = local {
                            map.bindings.insert(local, root.clone());
                        }
                    }
                }
                _ => {}
            }
        }
        map
    }

    /// Root module bound to a local name, if it was imported.
    pub fn module_of(&self, local: &str) -> Option<&str> {
        self.bindings.get(local).map(String::as_str)
    }

    pub fn locals(&self) -> impl Iterator<Item = &str> {
        self.bindings.keys().map(String::as_str)
    }

    /// Every imported top-level module, sorted.
    pub fn roots(&self) -> impl Iterator<Item = &str> {
        self.roots.iter().map(String::as_str)
    }
}

/// Sorted, deduplicated third-party import roots of the case's class file.
pub fn extract_lib_deps(case: &AdaptationCase, stdlib: &StdlibAllowlist) -> Result<Vec<String>> {
    let tree = syntax::parse(&case.class_context, case.language)?;
    Ok(lib_deps_of(&tree, stdlib))
}

pub fn lib_deps_of(tree: &Tree, stdlib: &StdlibAllowlist) -> Vec<String> {
    ImportMap::from_tree(tree).roots().filter(|r| !r.is_empty() && !stdlib.contains(r)).map(str::to_string).collect()
}

/// Conversion from the public ClassEval JSON release.
pub mod classeval {
    use super::*;

    #[derive(Debug, Deserialize)]
    struct Task {
        task_id: String,
        class_name: String,
        solution_code: String,
        test: String,
        #[serde(default)]
        class_description: String,
        methods_info: Vec<MethodInfo>,
    }

    #[derive(Debug, Deserialize)]
    struct MethodInfo {
        method_name: String,
        #[serde(default)]
        method_description: String,
    }

    /// Convert a ClassEval task array (one object per class) into cases, one
    /// per method. Methods that cannot be located are reported and skipped.
    pub fn convert(json: &str, stdlib: &StdlibAllowlist) -> Result<Corpus> {
        let tasks: Vec<Task> = serde_json::from_str(json)?;
        let mut out = Corpus::default();
        for (i, task) in tasks.iter().enumerate() {
            let tree = syntax::parse(&task.solution_code, Grammar::Python)?;
            let deps = lib_deps_of(&tree, stdlib);
            let class = ClassFile::new(&tree, &task.class_name);
            for m in &task.methods_info {
                let case_id = format!("{}.{}", task.task_id, m.method_name);
                let skip = |msg: String| Diagnostic {
                    severity: Severity::Skipped,
                    line: i + 1,
                    case_id: Some(case_id.clone()),
                    message: msg,
                };
                let Some(def) = class.as_ref().and_then(|c| c.method(&m.method_name)) else {
                    out.diagnostics.push(skip(format!("method not found in class `{}`", task.class_name)));
                    continue;
                };
                let line_text = &task.solution_code[def.line_span.start..def.line_span.end];
                let (solution_method, _) = syntax::dedent(line_text);
                let requirement = [task.class_description.trim(), m.method_description.trim()]
                    .iter()
                    .filter(|s| !s.is_empty())
                    .copied()
                    .collect::<Vec<_>>()
                    .join("\n\n");
                let case = AdaptationCase {
                    case_id: case_id.clone(),
                    class_name: task.class_name.clone(),
                    class_context: task.solution_code.clone(),
                    method_name: m.method_name.clone(),
                    solution_method,
                    requirement,
                    test_suite: task.test.clone(),
                    lib_deps: deps.clone(),
                    topic: task.task_id.clone(),
                    language: Grammar::Python,
                };
                match validate_case(&case, stdlib) {
                    Ok(()) => out.cases.push(case),
                    Err(e) => out.diagnostics.push(skip(e.to_string())),
                }
            }
        }
        Ok(out)
    }
}
