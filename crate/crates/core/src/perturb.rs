// SPDX-License-Identifier: Apache-2.0

//! The ten perturbation rules.
//!
//! Each rule masks one category of task-relevant syntax in a reference method
//! with a placeholder token, producing an infill template together with the
//! exact locations (in the reference tree) that were masked.
//!
//! | rule | task          | masks                                    | placeholder |
//! |------|---------------|------------------------------------------|-------------|
//! | 1    | interface     | the parameter list                       | `<PARAMS>`  |
//! | 2    | interface     | all return statements                    | `<RETURN>`  |
//! | 3    | functionality | all constants of one type                | `<INFILL>`  |
//! | 4    | functionality | all operator tokens                      | `<INFILL>`  |
//! | 5    | functionality | each assignment right-hand side          | `<INFILL>`  |
//! | 6    | functionality | each branch or loop condition            | `<INFILL>`  |
//! | 7    | functionality | each call to something outside the class | `<INFILL>`  |
//! | 8    | identifier    | all `self`/`cls` members and globals     | `<INFILL>`  |
//! | 9    | identifier    | local variables after first binding      | `<VAR>`     |
//! | 10   | dependency    | all third-party attribute/call chains    | `<INFILL>`  |

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{AdaptationCase, ClassFile, ImportMap};
use crate::syntax::{self, Grammar, Node, NodePath, Span, SpanEdit, Tree};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Interface,
    Functionality,
    Identifier,
    Dependency,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Interface, Task::Functionality, Task::Identifier, Task::Dependency];

    pub fn name(self) -> &'static str {
        match self {
            Task::Interface => "interface",
            Task::Functionality => "functionality",
            Task::Identifier => "identifier",
            Task::Dependency => "dependency",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Task::Interface => "Interface Specification",
            Task::Functionality => "Functionality Customization",
            Task::Identifier => "Identifier Reference",
            Task::Dependency => "Dependency Constraint",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    AllInstances,
    PerOccurrence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    ParameterList,
    ReturnStatement,
    Constant,
    Operator,
    RightValue,
    Condition,
    Call,
    BoundIdentifier,
    LocalVariable,
    LibraryReference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RuleSpec {
    pub rule_id: u8,
    pub task: Task,
    pub granularity: Granularity,
    pub placeholder: &'static str,
    pub target_categories: &'static [Category],
}

pub const PARAMS: &str = "<PARAMS>";
pub const RETURN: &str = "<RETURN>";
pub const INFILL: &str = "<INFILL>";
pub const VAR: &str = "<VAR>";

const fn spec(
    rule_id: u8,
    task: Task,
    granularity: Granularity,
    placeholder: &'static str,
    c: &'static [Category],
) -> RuleSpec {
    RuleSpec { rule_id, task, granularity, placeholder, target_categories: c }
}

use Granularity::{AllInstances, PerOccurrence};

pub const RULES: [RuleSpec; 10] = [
    spec(1, Task::Interface, AllInstances, PARAMS, &[Category::ParameterList]),
    spec(2, Task::Interface, AllInstances, RETURN, &[Category::ReturnStatement]),
    spec(3, Task::Functionality, AllInstances, INFILL, &[Category::Constant]),
    spec(4, Task::Functionality, AllInstances, INFILL, &[Category::Operator]),
    spec(5, Task::Functionality, PerOccurrence, INFILL, &[Category::RightValue]),
    spec(6, Task::Functionality, PerOccurrence, INFILL, &[Category::Condition]),
    spec(7, Task::Functionality, PerOccurrence, INFILL, &[Category::Call]),
    spec(8, Task::Identifier, AllInstances, INFILL, &[Category::BoundIdentifier]),
    spec(9, Task::Identifier, AllInstances, VAR, &[Category::LocalVariable]),
    spec(10, Task::Dependency, AllInstances, INFILL, &[Category::LibraryReference]),
];

/// Look up a rule by its 1-based id.
pub fn rule(rule_id: u8) -> Option<&'static RuleSpec> {
    RULES.get(usize::from(rule_id).checked_sub(1)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstantType {
    Integer,
    Float,
    String,
    Boolean,
    None,
}

impl ConstantType {
    pub const ALL: [ConstantType; 5] =
        [ConstantType::Integer, ConstantType::Float, ConstantType::String, ConstantType::Boolean, ConstantType::None];

    pub fn name(self) -> &'static str {
        match self {
            ConstantType::Integer => "integer",
            ConstantType::Float => "float",
            ConstantType::String => "string",
            ConstantType::Boolean => "boolean",
            ConstantType::None => "none",
        }
    }
}

/// Grammar node kinds behind each abstract category.
#[derive(Debug)]
pub struct KindTable {
    pub function: &'static str,
    pub parameters_field: &'static str,
    pub return_statement: &'static str,
    pub constants: &'static [(ConstantType, &'static [&'static str])],
    /// (parent kind, field holding the operator token); `None` means the
    /// first anonymous child.
    pub operators: &'static [(&'static str, Option<&'static str>)],
    pub assignments: &'static [&'static str],
    /// (statement kind, field holding the condition).
    pub conditions: &'static [(&'static str, &'static str)],
    /// Ternary kind whose second named child is the condition.
    pub ternary: &'static str,
    pub call: &'static str,
    pub attribute: &'static str,
    pub identifier: &'static str,
}

pub static PYTHON_KINDS: KindTable = KindTable {
    function: "function_definition",
    parameters_field: "parameters",
    return_statement: "return_statement",
    constants: &[
        (ConstantType::Integer, &["integer"]),
        (ConstantType::Float, &["float"]),
        (ConstantType::String, &["string", "concatenated_string"]),
        (ConstantType::Boolean, &["true", "false"]),
        (ConstantType::None, &["none"]),
    ],
    operators: &[
        ("binary_operator", Some("operator")),
        ("boolean_operator", Some("operator")),
        ("comparison_operator", Some("operators")),
        ("unary_operator", Some("operator")),
        ("augmented_assignment", Some("operator")),
        ("not_operator", None),
    ],
    assignments: &["assignment", "augmented_assignment"],
    conditions: &[("if_statement", "condition"), ("elif_clause", "condition"), ("while_statement", "condition")],
    ternary: "conditional_expression",
    call: "call",
    attribute: "attribute",
    identifier: "identifier",
};

pub fn kind_table(grammar: Grammar) -> &'static KindTable {
    match grammar {
        Grammar::Python => &PYTHON_KINDS,
    }
}

/// A masked node in the original solution tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Location {
    pub path: NodePath,
    pub span: Span,
}

impl Location {
    pub fn of(node: &Node) -> Self {
        Location { path: node.path.clone(), span: node.span }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedTemplate {
    pub case_id: String,
    pub rule_id: u8,
    pub template_source: String,
    /// Masked locations in source order.
    pub perturbed_locations: Vec<Location>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_type: Option<ConstantType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occurrence_index: Option<usize>,
}

impl PerturbedTemplate {
    /// Stable identifier, e.g. `Stack.pop/r3/integer` or `Stack.pop/r6/1`.
    pub fn id(&self) -> String {
        let mut id = format!("{}/r{}", self.case_id, self.rule_id);
        if let Some(t) = self.constant_type {
            id.push('/');
            id.push_str(t.name());
        }
        if let Some(k) = self.occurrence_index {
            id.push_str(&format!("/{k}"));
        }
        id
    }

    pub fn rule(&self) -> &'static RuleSpec {
        rule(self.rule_id).expect("template carries a valid rule id")
    }

    pub fn task(&self) -> Task {
        self.rule().task
    }

    /// Spans of the placeholders in `template_source`, in location order.
    pub fn placeholder_spans(&self) -> Vec<Span> {
        let ph = self.rule().placeholder.len();
        let mut shift: isize = 0;
        self.perturbed_locations
            .iter()
            .map(|loc| {
                let start = (loc.span.start as isize + shift) as usize;
                shift += ph as isize - loc.span.len() as isize;
                Span::new(start, start + ph)
            })
            .collect()
    }

    /// Put the original texts back in place of the placeholders.
    pub fn restore(&self, originals: &[&str]) -> Result<String> {
        let spans = self.placeholder_spans();
        if spans.len() != originals.len() {
            return Err(Error::Config(format!("expected {} originals, got {}", spans.len(), originals.len())));
        }
        let edits: Vec<SpanEdit> = spans.into_iter().zip(originals).map(|(s, o)| SpanEdit::new(s, *o)).collect();
        syntax::splice(&self.template_source, &edits)
    }
}

/// Facts about the class file needed by rules 7, 8 and 10.
pub struct ContextFacts {
    /// Module-level functions, classes, and assigned names (imports excluded).
    pub module_names: HashSet<String>,
    /// Module-level functions and classes.
    pub module_defs: HashSet<String>,
    /// Methods of the target class.
    pub class_methods: HashSet<String>,
    pub imports: ImportMap,
    pub lib_deps: HashSet<String>,
}

impl ContextFacts {
    pub fn new(case: &AdaptationCase) -> Result<Self> {
        let tree = syntax::parse(&case.class_context, case.language)?;
        let src = tree.source();
        let mut module_names = HashSet::new();
        let mut module_defs = HashSet::new();
        for item in tree.root().named_children() {
            let def = if item.kind == "decorated_definition" { item.child_by_field("definition") } else { Some(item) };
            let Some(def) = def else { continue };
            match def.kind {
                "function_definition" | "class_definition" => {
                    if let Some(n) = def.child_by_field("name") {
                        let name = tree.text(n.span).to_string();
                        module_defs.insert(name.clone());
                        module_names.insert(name);
                    }
                }
                "expression_statement" => {
                    for a in def.named_children().filter(|n| n.kind == "assignment") {
                        if let Some(left) = a.child_by_field("left") {
                            for id in binding_identifiers(left) {
                                module_names.insert(src[id.span.start..id.span.end].to_string());
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        let class_methods = ClassFile::new(&tree, &case.class_name)
            .map(|c| c.methods().iter().map(|m| m.name.clone()).collect())
            .unwrap_or_default();
        Ok(ContextFacts {
            module_names,
            module_defs,
            class_methods,
            imports: ImportMap::from_tree(&tree),
            lib_deps: case.lib_deps.iter().cloned().collect(),
        })
    }
}

/// Identifier nodes bound by an assignment-like target pattern.
pub fn binding_identifiers(pattern: &Node) -> Vec<&Node> {
    let mut out = Vec::new();
    fn walk<'a>(n: &'a Node, out: &mut Vec<&'a Node>) {
        match n.kind {
            "identifier" => out.push(n),
            "pattern_list"
            | "tuple_pattern"
            | "list_pattern"
            | "tuple"
            | "list"
            | "parenthesized_expression"
            | "list_splat_pattern"
            | "as_pattern_target"
            | "expression_list" => {
                for c in n.named_children() {
                    walk(c, out);
                }
            }
            _ => {}
        }
    }
    walk(pattern, &mut out);
    out
}

/// Identifiers in binding position under `scope` (parameters, assignment and
/// loop targets, `as` aliases, walrus names, nested definitions), plus names
/// declared `global`/`nonlocal`.
pub fn scope_bindings<'t>(tree: &'t Tree, scope: &'t Node) -> (Vec<&'t Node>, HashSet<&'t str>) {
    let mut bindings: Vec<&Node> = Vec::new();
    let mut declared_outer: HashSet<&str> = HashSet::new();
    for n in scope.preorder() {
        match n.kind {
            "parameters" | "lambda_parameters" => {
                for p in n.named_children() {
                    let id = match p.kind {
                        "identifier" => Some(p),
                        "default_parameter" | "typed_default_parameter" => p.child_by_field("name"),
                        "typed_parameter" | "list_splat_pattern" | "dictionary_splat_pattern" => {
                            p.named_children().find(|c| c.kind == "identifier")
                        }
                        _ => None,
                    };
                    bindings.extend(id.filter(|i| i.kind == "identifier"));
                }
            }
            "assignment" | "augmented_assignment" | "for_statement" | "for_in_clause" => {
                if let Some(left) = n.child_by_field("left") {
                    bindings.extend(binding_identifiers(left));
                }
            }
            "named_expression" => bindings.extend(n.child_by_field("name")),
            "as_pattern" => {
                if let Some(alias) = n.child_by_field("alias") {
                    bindings.extend(binding_identifiers(alias));
                }
            }
            "function_definition" | "class_definition" if !std::ptr::eq(n, scope) => {
                bindings.extend(n.child_by_field("name"));
            }
            "global_statement" | "nonlocal_statement" => {
                for id in n.named_children().filter(|c| c.kind == "identifier") {
                    declared_outer.insert(tree.text(id.span));
                }
            }
            _ => {}
        }
    }
    (bindings, declared_outer)
}

/// Per-method analysis shared by several rules.
struct MethodFacts<'t> {
    func: &'t Node,
    parents: HashMap<&'t NodePath, &'t Node>,
    /// Identifiers in binding position, in source order.
    bindings: Vec<&'t Node>,
    locals: HashSet<&'t str>,
}

impl<'t> MethodFacts<'t> {
    fn new(tree: &'t Tree) -> Option<Self> {
        let func = crate::corpus::single_function(tree.root())?;
        let mut parents = HashMap::new();
        for n in tree.preorder() {
            for c in &n.children {
                parents.insert(&c.path, n);
            }
        }
        let (mut bindings, declared_outer) = scope_bindings(tree, func);
        bindings.sort_by_key(|n| n.span.start);
        bindings.dedup_by_key(|n| n.span.start);
        let locals = bindings
            .iter()
            .map(|n| tree.text(n.span))
            .filter(|name| !matches!(*name, "self" | "cls") && !declared_outer.contains(name))
            .collect();
        Some(MethodFacts { func, parents, bindings, locals })
    }

    fn parent(&self, n: &Node) -> Option<&'t Node> {
        self.parents.get(&n.path).copied()
    }

    /// Identifier used as a name (not an attribute member, keyword-argument
    /// label, or import/global declaration).
    fn is_name_reference(&self, n: &Node) -> bool {
        if n.kind != "identifier" {
            return false;
        }
        let Some(p) = self.parent(n) else { return true };
        !matches!((p.kind, n.field), ("attribute", Some("attribute")) | ("keyword_argument", Some("name")))
            && !matches!(
                p.kind,
                "dotted_name" | "aliased_import" | "global_statement" | "nonlocal_statement" | "import_statement"
            )
    }

    fn in_type_annotation(&self, n: &Node) -> bool {
        let mut cur = self.parent(n);
        while let Some(p) = cur {
            if p.kind == "type" {
                return true;
            }
            cur = self.parent(p);
        }
        false
    }

    fn docstring(&self) -> Option<&'t Node> {
        let first = self.func.child_by_field("body")?.named_children().find(|n| n.kind != "comment")?;
        let inner: Vec<&Node> = first.named_children().collect();
        (first.kind == "expression_statement"
            && inner.len() == 1
            && matches!(inner[0].kind, "string" | "concatenated_string"))
        .then(|| inner[0])
    }
}

/// Keep only targets not contained in another target; dedup equal spans.
fn outermost(mut nodes: Vec<&Node>) -> Vec<&Node> {
    nodes.sort_by(|a, b| a.span.start.cmp(&b.span.start).then(b.span.end.cmp(&a.span.end)));
    let mut out: Vec<&Node> = Vec::new();
    for n in nodes {
        if out.last().is_some_and(|last| last.span.contains(n.span)) {
            continue;
        }
        out.push(n);
    }
    out
}

fn template(case: &AdaptationCase, rule: &RuleSpec, nodes: &[&Node]) -> Result<PerturbedTemplate> {
    let edits: Vec<SpanEdit> = nodes.iter().map(|n| SpanEdit::new(n.span, rule.placeholder)).collect();
    Ok(PerturbedTemplate {
        case_id: case.case_id.clone(),
        rule_id: rule.rule_id,
        template_source: syntax::splice(&case.solution_method, &edits)?,
        perturbed_locations: nodes.iter().map(|n| Location::of(n)).collect(),
        constant_type: None,
        occurrence_index: None,
    })
}

/// Apply one rule to the parsed solution method of `case`.
pub fn apply_rule(case: &AdaptationCase, tree: &Tree, rule: &RuleSpec) -> Result<Vec<PerturbedTemplate>> {
    let ctx = ContextFacts::new(case)?;
    apply_rule_with(case, tree, rule, &ctx)
}

/// Like [`apply_rule`] with precomputed class-file facts.
pub fn apply_rule_with(
    case: &AdaptationCase,
    tree: &Tree,
    rule: &RuleSpec,
    ctx: &ContextFacts,
) -> Result<Vec<PerturbedTemplate>> {
    let Some(m) = MethodFacts::new(tree) else {
        return Ok(Vec::new());
    };
    let kinds = kind_table(tree.grammar());
    let text = |n: &Node| tree.text(n.span);
    let all = |nodes: Vec<&Node>| -> Result<Vec<PerturbedTemplate>> {
        let nodes = outermost(nodes);
        if nodes.is_empty() {
            return Ok(Vec::new());
        }
        Ok(vec![template(case, rule, &nodes)?])
    };
    let each = |mut nodes: Vec<&Node>| -> Result<Vec<PerturbedTemplate>> {
        nodes.sort_by_key(|n| (n.span.start, std::cmp::Reverse(n.span.end)));
        nodes.dedup_by_key(|n| n.span);
        nodes
            .iter()
            .enumerate()
            .map(|(k, n)| {
                let mut t = template(case, rule, &[n])?;
                t.occurrence_index = Some(k);
                Ok(t)
            })
            .collect()
    };
    let body: Vec<&Node> = m.func.preorder().collect();

    match rule.rule_id {
        1 => all(m.func.child_by_field(kinds.parameters_field).into_iter().collect()),
        2 => all(body.iter().copied().filter(|n| n.kind == kinds.return_statement).collect()),
        3 => {
            let doc = m.docstring();
            let mut out = Vec::new();
            for (ty, ks) in kinds.constants {
                let nodes: Vec<&Node> = body
                    .iter()
                    .copied()
                    .filter(|n| ks.contains(&n.kind))
                    .filter(|n| doc.is_none_or(|d| !d.span.contains(n.span)))
                    .collect();
                // a string inside a concatenation or interpolation belongs to
                // the outer literal
                let nodes = outermost(nodes);
                let nodes: Vec<&Node> = if *ty == ConstantType::String {
                    nodes
                } else {
                    nodes.into_iter().filter(|n| !inside_string(&m, n)).collect()
                };
                if nodes.is_empty() {
                    continue;
                }
                let mut t = template(case, rule, &nodes)?;
                t.constant_type = Some(*ty);
                out.push(t);
            }
            Ok(out)
        }
        4 => {
            let mut ops = Vec::new();
            for n in &body {
                for (kind, field) in kinds.operators {
                    if n.kind != *kind {
                        continue;
                    }
                    match field {
                        Some(f) => ops.extend(n.children_by_field(f)),
                        None => ops.extend(n.children.iter().find(|c| !c.named)),
                    }
                }
            }
            all(ops)
        }
        5 => {
            let mut rvalues = Vec::new();
            for n in body.iter().filter(|n| kinds.assignments.contains(&n.kind)) {
                let mut right = n.child_by_field("right");
                while let Some(r) = right.filter(|r| kinds.assignments.contains(&r.kind)) {
                    right = r.child_by_field("right");
                }
                rvalues.extend(right);
            }
            each(rvalues)
        }
        6 => {
            let mut conds = Vec::new();
            for n in &body {
                if let Some((_, field)) = kinds.conditions.iter().find(|(k, _)| *k == n.kind) {
                    conds.extend(n.child_by_field(field));
                } else if n.kind == kinds.ternary {
                    conds.extend(n.named_children().filter(|c| c.kind != "comment").nth(1));
                }
            }
            each(conds)
        }
        7 => {
            let calls = body
                .iter()
                .copied()
                .filter(|n| n.kind == kinds.call)
                .filter(|n| !calls_context_definition(n, tree, &case.class_name, ctx))
                .collect();
            each(calls)
        }
        8 => {
            let mut refs = Vec::new();
            for n in &body {
                if n.kind == kinds.attribute {
                    let obj = n.child_by_field("object");
                    if obj.is_some_and(|o| o.kind == kinds.identifier && matches!(text(o), "self" | "cls")) {
                        refs.push(*n);
                    }
                } else if m.is_name_reference(n)
                    && ctx.module_names.contains(text(n))
                    && !m.locals.contains(text(n))
                    && !is_binding_name_of_def(&m, n)
                {
                    refs.push(*n);
                }
            }
            all(refs)
        }
        9 => {
            let mut first: HashMap<&str, usize> = HashMap::new();
            for b in &m.bindings {
                first.entry(text(b)).or_insert(b.span.start);
            }
            let occ = body
                .iter()
                .copied()
                .filter(|n| m.is_name_reference(n) && m.locals.contains(text(n)) && !m.in_type_annotation(n))
                .filter(|n| first.get(text(n)) != Some(&n.span.start))
                .collect();
            all(occ)
        }
        10 => {
            let mut chains = Vec::new();
            for n in &body {
                if !m.is_name_reference(n) || m.locals.contains(text(n)) {
                    continue;
                }
                let Some(module) = ctx.imports.module_of(text(n)) else { continue };
                if !ctx.lib_deps.contains(module) {
                    continue;
                }
                let mut top: &Node = n;
                while let Some(p) = m.parent(top) {
                    let extends = (p.kind == kinds.attribute && top.field == Some("object"))
                        || (p.kind == kinds.call && top.field == Some("function"));
                    if !extends {
                        break;
                    }
                    top = p;
                }
                if top.kind == kinds.attribute || top.kind == kinds.call {
                    chains.push(top);
                }
            }
            all(chains)
        }
        other => Err(Error::Config(format!("unknown rule {other}"))),
    }
}

fn inside_string(m: &MethodFacts<'_>, n: &Node) -> bool {
    let mut cur = m.parent(n);
    while let Some(p) = cur {
        if matches!(p.kind, "string" | "concatenated_string") {
            return true;
        }
        cur = m.parent(p);
    }
    false
}

fn is_binding_name_of_def(m: &MethodFacts<'_>, n: &Node) -> bool {
    n.field == Some("name") && m.parent(n).is_some_and(|p| matches!(p.kind, "function_definition" | "class_definition"))
}

/// A call whose callee is a module-level definition of the class file or a
/// method of the class reached through `self`, `cls`, or the class name.
fn calls_context_definition(call: &Node, tree: &Tree, class_name: &str, ctx: &ContextFacts) -> bool {
    let Some(f) = call.child_by_field("function") else { return false };
    match f.kind {
        "identifier" => ctx.module_defs.contains(tree.text(f.span)),
        "attribute" => {
            let (Some(obj), Some(attr)) = (f.child_by_field("object"), f.child_by_field("attribute")) else {
                return false;
            };
            let recv = tree.text(obj.span);
            obj.kind == "identifier"
                && (recv == "self" || recv == "cls" || recv == class_name)
                && ctx.class_methods.contains(tree.text(attr.span))
        }
        _ => false,
    }
}

/// All templates for a case, in rule order.
pub fn perturb_all(case: &AdaptationCase) -> Result<Vec<PerturbedTemplate>> {
    perturb_rules(case, &(1..=10).collect::<Vec<_>>())
}

pub fn perturb_rules(case: &AdaptationCase, rules: &[u8]) -> Result<Vec<PerturbedTemplate>> {
    let tree = syntax::parse(&case.solution_method, case.language)?;
    let ctx = ContextFacts::new(case)?;
    let mut out = Vec::new();
    for &r in rules {
        let spec = rule(r).ok_or_else(|| Error::Config(format!("unknown rule {r}")))?;
        out.extend(apply_rule_with(case, &tree, spec, &ctx)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::lex::PLACEHOLDERS;

    fn case(method: &str) -> AdaptationCase {
        let (dedented, _) = syntax::dedent(method);
        let class_context =
            format!("import numpy as np\nLIMIT = 3\n\n\nclass C:\n{}", syntax::reindent(&dedented, "    ", false));
        AdaptationCase {
            case_id: "C.m".into(),
            class_name: "C".into(),
            class_context,
            method_name: "m".into(),
            solution_method: dedented,
            requirement: String::new(),
            test_suite: String::new(),
            lib_deps: vec!["numpy".into()],
            topic: String::new(),
            language: Grammar::Python,
        }
    }

    fn run(method: &str, r: u8) -> Vec<PerturbedTemplate> {
        let c = case(method);
        let tree = syntax::parse(&c.solution_method, Grammar::Python).unwrap();
        let ts = apply_rule(&c, &tree, rule(r).unwrap()).unwrap();
        for t in &ts {
            let originals: Vec<&str> = t.perturbed_locations.iter().map(|l| tree.text(l.span)).collect();
            assert_eq!(t.restore(&originals).unwrap(), c.solution_method);
            for l in &t.perturbed_locations {
                assert_eq!(tree.node_at(&l.path).unwrap().span, l.span);
            }
        }
        ts
    }

    #[test]
    fn rule_table_groupings() {
        let tasks: Vec<Task> = RULES.iter().map(|r| r.task).collect();
        use Task::*;
        assert_eq!(
            tasks,
            [
                Interface,
                Interface,
                Functionality,
                Functionality,
                Functionality,
                Functionality,
                Functionality,
                Identifier,
                Identifier,
                Dependency
            ]
        );
        let per: Vec<u8> = RULES.iter().filter(|r| r.granularity == PerOccurrence).map(|r| r.rule_id).collect();
        assert_eq!(per, [5, 6, 7]);
        for r in &RULES {
            assert!(PLACEHOLDERS.contains(&r.placeholder));
        }
    }

    #[test]
    fn rule1_masks_whole_parameter_list() {
        let ts = run("def m(self, a, b=2):\n    return a\n", 1);
        assert_eq!(ts[0].template_source, "def m<PARAMS>:\n    return a\n");
    }

    #[test]
    fn rule2_masks_all_returns_together() {
        let ts = run("def m(self, x):\n    if x:\n        return 1\n    return 2\n", 2);
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].perturbed_locations.len(), 2);
        assert_eq!(ts[0].template_source, "def m(self, x):\n    if x:\n        <RETURN>\n    <RETURN>\n");
    }

    #[test]
    fn rule3_one_template_per_type() {
        let ts = run("def m(self):\n    \"\"\"doc\"\"\"\n    x = 1 + 2.0\n    y = f\"{x} {'k'}\"\n    return None if x else True\n", 3);
        let types: Vec<_> = ts.iter().map(|t| t.constant_type.unwrap()).collect();
        assert_eq!(
            types,
            [
                ConstantType::Integer,
                ConstantType::Float,
                ConstantType::String,
                ConstantType::Boolean,
                ConstantType::None
            ]
        );
        assert_eq!(ts[2].perturbed_locations.len(), 1, "nested literal folds into the f-string");
        assert!(ts[2].template_source.contains("\"\"\"doc\"\"\""));
    }

    #[test]
    fn rule4_status_flags_operator() {
        let ts = run("def add(self, status):\n    self.state = self.state | status\n", 4);
        assert_eq!(ts[0].template_source, "def add(self, status):\n    self.state = self.state <INFILL> status\n");
    }

    #[test]
    fn rule4_composite_and_unary_operators() {
        let ts = run("def m(self, a, b):\n    a += -b\n    return not a not in b\n", 4);
        assert_eq!(
            ts[0].template_source,
            "def m(self, a, b):\n    a <INFILL> <INFILL>b\n    return <INFILL> a <INFILL> b\n"
        );
    }

    #[test]
    fn rule5_chained_assignment_masks_innermost_value() {
        let ts = run("def m(self):\n    a = b = 1\n    a += 2\n", 5);
        let texts: Vec<_> = ts.iter().map(|t| t.template_source.as_str()).collect();
        assert_eq!(
            texts,
            ["def m(self):\n    a = b = <INFILL>\n    a += 2\n", "def m(self):\n    a = b = 1\n    a += <INFILL>\n"]
        );
        assert_eq!(ts[1].occurrence_index, Some(1));
    }

    #[test]
    fn rule6_each_condition() {
        let ts = run("def m(self, x):\n    if x > 1:\n        x = 0\n    elif x:\n        pass\n    while x:\n        x = 1 if x else 2\n", 6);
        assert_eq!(ts.len(), 4);
        assert!(ts.iter().all(|t| t.perturbed_locations.len() == 1));
    }

    #[test]
    fn rule7_excludes_context_methods() {
        let ts = run("def m(self, x):\n    self.m(x)\n    C()\n    return len(np.sum(x))\n", 7);
        let masked: Vec<_> = ts.iter().map(|t| t.template_source.lines().last().unwrap().trim().to_string()).collect();
        assert_eq!(masked, ["return <INFILL>", "return len(<INFILL>)"]);
    }

    #[test]
    fn rule8_members_and_globals() {
        let ts = run("def m(self, LIMIT2):\n    x = self.a.b + LIMIT\n    return self.f(x)\n", 8);
        assert_eq!(
            ts[0].template_source,
            "def m(self, LIMIT2):\n    x = <INFILL>.b + <INFILL>\n    return <INFILL>(x)\n"
        );
    }

    #[test]
    fn rule9_spec_example() {
        let ts = run("def m(self):\n    x = 0\n    y = x + 1\n    return y\n", 9);
        assert_eq!(ts[0].template_source, "def m(self):\n    x = 0\n    y = <VAR> + 1\n    return <VAR>\n");
    }

    #[test]
    fn rule9_parameters_and_keyword_labels() {
        let ts = run("def m(self, a):\n    b = f(a=a)\n    b.a = b\n", 9);
        assert_eq!(ts[0].template_source, "def m(self, a):\n    b = f(a=<VAR>)\n    <VAR>.a = <VAR>\n");
    }

    #[test]
    fn rule10_outermost_chain() {
        let ts = run("def m(self, v):\n    return float(np.sqrt(np.sum(v)))\n", 10);
        assert_eq!(ts[0].template_source, "def m(self, v):\n    return float(<INFILL>)\n");
    }

    #[test]
    fn zero_target_rules_emit_nothing() {
        assert!(run("def m(self):\n    pass\n", 2).is_empty());
        assert!(run("def m(self):\n    pass\n", 10).is_empty());
    }

    #[test]
    fn template_ids() {
        let ts = run("def m(self, x):\n    if x:\n        pass\n    if x:\n        pass\n", 6);
        assert_eq!(ts[0].id(), "C.m/r6/0");
        assert_eq!(ts[1].id(), "C.m/r6/1");
        assert_ne!(ts[0].template_source, ts[1].template_source);
    }
}
