// SPDX-License-Identifier: Apache-2.0

//! Independent reimplementation of the ten rules: raw tree-sitter queries over
//! the solution method plus regex scans of the class file. Shares no code with
//! `ctxbug::perturb`.

use std::collections::{BTreeMap, HashSet};

use regex::Regex;
use streaming_iterator::StreamingIterator;
use tree_sitter::{Node, Parser, Query, QueryCursor};

use ctxbug::corpus::AdaptationCase;

pub type Spans = Vec<(usize, usize)>;

fn lang() -> tree_sitter::Language {
    tree_sitter_python::LANGUAGE.into()
}

fn capture<'t>(q: &str, node: Node<'t>, src: &str) -> Vec<Node<'t>> {
    let query = Query::new(&lang(), q).unwrap();
    let mut cursor = QueryCursor::new();
    let mut it = cursor.captures(&query, node, src.as_bytes());
    let mut out: Vec<Node<'t>> = Vec::new();
    while let Some((m, idx)) = it.next() {
        let c = m.captures()[*idx];
        if query.capture_names()[c.index as usize].starts_with('_') {
            continue;
        }
        if !out.iter().any(|n| n.id() == c.node.id()) {
            out.push(c.node);
        }
    }
    out.sort_by_key(|n| (n.start_byte(), std::cmp::Reverse(n.end_byte())));
    out
}

fn span(n: Node) -> (usize, usize) {
    (n.start_byte(), n.end_byte())
}

fn outermost(mut spans: Spans) -> Spans {
    spans.sort_by_key(|&(s, e)| (s, std::cmp::Reverse(e)));
    let mut out: Spans = Vec::new();
    for s in spans {
        if out.last().is_some_and(|l| l.0 <= s.0 && s.1 <= l.1) {
            continue;
        }
        out.push(s);
    }
    out
}

fn has_ancestor(n: Node, stop: Node, kinds: &[&str]) -> bool {
    let mut cur = n.parent();
    while let Some(p) = cur {
        if kinds.contains(&p.kind()) {
            return true;
        }
        if p.id() == stop.id() {
            return false;
        }
        cur = p.parent();
    }
    false
}

struct ClassText {
    module_defs: HashSet<String>,
    module_names: HashSet<String>,
    methods: HashSet<String>,
    imports: BTreeMap<String, String>,
}

fn scan_class(src: &str) -> ClassText {
    let cap = |re: &str| -> HashSet<String> {
        Regex::new(re).unwrap().captures_iter(src).map(|c| c[1].to_string()).collect()
    };
    let module_defs = cap(r"(?m)^(?:def|class)\s+(\w+)");
    let mut module_names = cap(r"(?m)^(\w+)\s*(?::[^=\n]*)?=[^=]");
    module_names.extend(module_defs.iter().cloned());
    let methods = cap(r"(?m)^[ \t]+def\s+(\w+)");
    let mut imports = BTreeMap::new();
    for c in Regex::new(r"(?m)^\s*import\s+(.+)$").unwrap().captures_iter(src) {
        for part in c[1].split(',') {
            let mut it = part.split(" as ");
            let module = it.next().unwrap().trim();
            let root = module.split('.').next().unwrap().to_string();
            let local = it.next().map_or(root.clone(), |a| a.trim().to_string());
            imports.insert(local, root);
        }
    }
    for c in Regex::new(r"(?m)^\s*from\s+([\w.]+)\s+import\s+(.+)$").unwrap().captures_iter(src) {
        if c[1].starts_with('.') {
            continue;
        }
        let root = c[1].split('.').next().unwrap().to_string();
        for part in c[2].trim_matches(|ch| ch == '(' || ch == ')').split(',') {
            let mut it = part.split(" as ");
            let name = it.next().unwrap().trim().to_string();
            let local = it.next().map_or(name, |a| a.trim().to_string());
            imports.insert(local, root.clone());
        }
    }
    ClassText { module_defs, module_names, methods, imports }
}

const BINDINGS: &str = r#"
(parameters (identifier) @b)
(lambda_parameters (identifier) @b)
(default_parameter name: (identifier) @b)
(typed_default_parameter name: (identifier) @b)
(typed_parameter . (identifier) @b)
(list_splat_pattern (identifier) @b)
(dictionary_splat_pattern (identifier) @b)
(assignment left: (identifier) @b)
(assignment left: (pattern_list (identifier) @b))
(assignment left: (tuple_pattern (identifier) @b))
(augmented_assignment left: (identifier) @b)
(for_statement left: (identifier) @b)
(for_statement left: (pattern_list (identifier) @b))
(for_statement left: (tuple_pattern (identifier) @b))
(for_in_clause left: (identifier) @b)
(for_in_clause left: (pattern_list (identifier) @b))
(for_in_clause left: (tuple_pattern (identifier) @b))
(as_pattern alias: (as_pattern_target (identifier) @b))
(named_expression name: (identifier) @b)
"#;

/// Expected templates for a case as (key, masked spans), in rule order. Keys
/// look like `r4`, `r3/string`, or `r6/1`.
pub fn expected(case: &AdaptationCase) -> Vec<(String, Spans)> {
    let src = case.solution_method.as_str();
    let mut parser = Parser::new();
    parser.set_language(&lang()).unwrap();
    let tree = parser.parse(src, None).unwrap();
    let mut func = tree.root_node().named_child(0).unwrap();
    if func.kind() == "decorated_definition" {
        func = func.child_by_field_name("definition").unwrap();
    }
    let text = |n: Node| &src[n.byte_range()];
    let cls = scan_class(&case.class_context);
    let mut out: Vec<(String, Spans)> = Vec::new();
    let all = |out: &mut Vec<(String, Spans)>, key: String, spans: Spans| {
        let spans = outermost(spans);
        if !spans.is_empty() {
            out.push((key, spans));
        }
    };

    // 1, 2
    let params: Spans = func.child_by_field_name("parameters").into_iter().map(span).collect();
    all(&mut out, "r1".into(), params);
    all(&mut out, "r2".into(), capture("(return_statement) @r", func, src).into_iter().map(span).collect());

    // 3
    let body = func.child_by_field_name("body").unwrap();
    let mut bc = body.walk();
    let doc = body
        .named_children(&mut bc)
        .find(|n| n.kind() != "comment")
        .filter(|n| n.kind() == "expression_statement" && n.named_child_count() == 1)
        .and_then(|n| n.named_child(0))
        .filter(|n| n.kind() == "string" || n.kind() == "concatenated_string");
    for (name, q) in [
        ("integer", "(integer) @c"),
        ("float", "(float) @c"),
        ("string", "[(string) (concatenated_string)] @c"),
        ("boolean", "[(true) (false)] @c"),
        ("none", "(none) @c"),
    ] {
        let spans = capture(q, func, src)
            .into_iter()
            .filter(|n| doc.is_none_or(|d| !(d.start_byte() <= n.start_byte() && n.end_byte() <= d.end_byte())))
            .filter(|n| name == "string" || !has_ancestor(*n, func, &["string", "concatenated_string"]))
            .map(span)
            .collect();
        all(&mut out, format!("r3/{name}"), spans);
    }

    // 4
    let ops = capture(
        r#"
        (binary_operator operator: _ @o)
        (boolean_operator operator: _ @o)
        (comparison_operator operators: _ @o)
        (unary_operator operator: _ @o)
        (augmented_assignment operator: _ @o)
        (not_operator "not" @o)
        "#,
        func,
        src,
    );
    all(&mut out, "r4".into(), ops.into_iter().map(span).collect());

    let each = |out: &mut Vec<(String, Spans)>, rule: u8, mut spans: Spans| {
        spans.sort_by_key(|&(s, e)| (s, std::cmp::Reverse(e)));
        spans.dedup();
        for (k, s) in spans.into_iter().enumerate() {
            out.push((format!("r{rule}/{k}"), vec![s]));
        }
    };

    // 5
    let rights: Spans = capture("(assignment right: _ @r) (augmented_assignment right: _ @r)", func, src)
        .into_iter()
        .filter(|n| n.kind() != "assignment" && n.kind() != "augmented_assignment")
        .map(span)
        .collect();
    each(&mut out, 5, rights);

    // 6
    let conds = capture(
        r#"
        (if_statement condition: _ @c)
        (elif_clause condition: _ @c)
        (while_statement condition: _ @c)
        (conditional_expression . (_) . (_) @c)
        "#,
        func,
        src,
    );
    each(&mut out, 6, conds.into_iter().map(span).collect());

    // 7
    let calls: Spans = capture("(call function: _ @_f) @c", func, src)
        .into_iter()
        .filter(|c| {
            let f = text(c.child_by_field_name("function").unwrap());
            let internal = match f.split_once('.') {
                Some((recv, m)) => {
                    (recv == "self" || recv == "cls" || recv == case.class_name)
                        && !m.contains('.')
                        && cls.methods.contains(m)
                }
                None => cls.module_defs.contains(f),
            };
            !internal
        })
        .map(span)
        .collect();
    each(&mut out, 7, calls);

    // locals and name references
    let bindings = capture(BINDINGS, func, src);
    let locals: HashSet<&str> = bindings.iter().map(|n| text(*n)).filter(|t| *t != "self" && *t != "cls").collect();
    let non_refs: HashSet<usize> = capture(
        "(attribute attribute: (identifier) @x) (keyword_argument name: (identifier) @x) (function_definition name: (identifier) @x) (class_definition name: (identifier) @x)",
        func,
        src,
    )
    .into_iter()
    .map(|n| n.id())
    .collect();
    let refs: Vec<Node> =
        capture("(identifier) @i", func, src).into_iter().filter(|n| !non_refs.contains(&n.id())).collect();

    // 8
    let mut bound: Spans = capture("(attribute object: (identifier) @_o (#match? @_o \"^(self|cls)$\")) @a", func, src)
        .into_iter()
        .map(span)
        .collect();
    bound.extend(
        refs.iter().filter(|n| cls.module_names.contains(text(**n)) && !locals.contains(text(**n))).map(|n| span(*n)),
    );
    all(&mut out, "r8".into(), bound);

    // 9
    let mut first: BTreeMap<&str, usize> = BTreeMap::new();
    for b in &bindings {
        let e = first.entry(text(*b)).or_insert(b.start_byte());
        *e = (*e).min(b.start_byte());
    }
    let vars: Spans = refs
        .iter()
        .chain(bindings.iter().filter(|b| non_refs.contains(&b.id())))
        .filter(|n| locals.contains(text(**n)))
        .filter(|n| !has_ancestor(**n, func, &["type"]))
        .filter(|n| first.get(text(**n)) != Some(&n.start_byte()))
        .map(|n| span(*n))
        .collect();
    all(&mut out, "r9".into(), vars);

    // 10
    let mut chains: Spans = Vec::new();
    for n in &refs {
        let name = text(*n);
        if locals.contains(name) {
            continue;
        }
        let Some(root) = cls.imports.get(name) else { continue };
        if !case.lib_deps.contains(root) {
            continue;
        }
        let mut top = *n;
        while let Some(p) = top.parent() {
            let as_obj = p.kind() == "attribute" && p.child_by_field_name("object").map(|o| o.id()) == Some(top.id());
            let as_fn = p.kind() == "call" && p.child_by_field_name("function").map(|o| o.id()) == Some(top.id());
            if !(as_obj || as_fn) {
                break;
            }
            top = p;
        }
        if top.kind() == "attribute" || top.kind() == "call" {
            chains.push(span(top));
        }
    }
    all(&mut out, "r10".into(), chains);
    out
}
