// SPDX-License-Identifier: Apache-2.0

//! Concrete syntax trees over subject-language source.
//!
//! [`parse`] runs tree-sitter and copies the result into an owned, immutable
//! [`Tree`] so that trees can be shared across threads and addressed by
//! [`NodePath`]. Every node, named or anonymous, is kept: operator tokens such
//! as `|` are leaves of their expression and can be masked or diffed like any
//! other node. Locations are byte spans; line and column only matter for
//! diagnostics.

mod indent;
pub mod lex;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use indent::{dedent, reindent};

/// Grammar identifier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grammar {
    #[default]
    Python,
}

impl Grammar {
    fn language(self) -> tree_sitter::Language {
        match self {
            Grammar::Python => tree_sitter_python::LANGUAGE.into(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Grammar::Python => "python",
        }
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Grammar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "python" | "tree-sitter-python" => Ok(Grammar::Python),
            other => Err(Error::GrammarUnavailable(other.to_string())),
        }
    }
}

/// Half-open byte range. Serialized as a `[start, end]` pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, other: Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl Serialize for Span {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        (self.start, self.end).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (start, end) = <(usize, usize)>::deserialize(d)?;
        if start > end {
            return Err(serde::de::Error::custom("span start exceeds end"));
        }
        Ok(Span { start, end })
    }
}

impl From<std::ops::Range<usize>> for Span {
    fn from(r: std::ops::Range<usize>) -> Self {
        Span::new(r.start, r.end)
    }
}

/// Child indices from the root to a node.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodePath(pub Vec<u32>);

impl NodePath {
    pub fn root() -> Self {
        NodePath(Vec::new())
    }

    pub fn child(&self, index: u32) -> Self {
        let mut v = self.0.clone();
        v.push(index);
        NodePath(v)
    }

    pub fn is_prefix_of(&self, other: &NodePath) -> bool {
        other.0.starts_with(&self.0)
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub kind: &'static str,
    pub named: bool,
    /// Field name under which the parent holds this node, if any.
    pub field: Option<&'static str>,
    pub span: Span,
    pub path: NodePath,
    pub children: Vec<Node>,
    /// `ERROR` or `MISSING` node inserted by error recovery.
    pub is_error: bool,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn child_by_field(&self, field: &str) -> Option<&Node> {
        self.children.iter().find(|c| c.field == Some(field))
    }

    pub fn children_by_field<'a>(&'a self, field: &'a str) -> impl Iterator<Item = &'a Node> + 'a {
        self.children.iter().filter(move |c| c.field == Some(field))
    }

    pub fn named_children(&self) -> impl Iterator<Item = &Node> {
        self.children.iter().filter(|c| c.named)
    }

    /// Pre-order traversal of this node and its descendants.
    pub fn preorder(&self) -> Preorder<'_> {
        Preorder { stack: vec![self] }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        self.preorder().filter(|n| n.is_leaf())
    }

    /// Whether `other` lies in this node's subtree (by path).
    pub fn is_ancestor_or_self(&self, other: &Node) -> bool {
        self.path.is_prefix_of(&other.path)
    }
}

pub struct Preorder<'a> {
    stack: Vec<&'a Node>,
}

impl<'a> Iterator for Preorder<'a> {
    type Item = &'a Node;

    fn next(&mut self) -> Option<&'a Node> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

/// Parsed source plus its owned syntax tree.
#[derive(Clone, Debug)]
pub struct Tree {
    source: String,
    root: Node,
    grammar: Grammar,
    error_count: usize,
}

impl Tree {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn grammar(&self) -> Grammar {
        self.grammar
    }

    pub fn has_errors(&self) -> bool {
        self.error_count > 0
    }

    pub fn error_count(&self) -> usize {
        self.error_count
    }

    pub fn node_at(&self, path: &NodePath) -> Option<&Node> {
        let mut node = &self.root;
        for &i in &path.0 {
            node = node.children.get(i as usize)?;
        }
        Some(node)
    }

    /// Exact source slice covered by `node`.
    ///
    /// Fails with [`Error::ForeignNode`] when `node` is not the node stored at
    /// its own path in this tree.
    pub fn node_text(&self, node: &Node) -> Result<&str> {
        match self.node_at(&node.path) {
            Some(n) if n.span == node.span && n.kind == node.kind => Ok(&self.source[node.span.start..node.span.end]),
            _ => Err(Error::ForeignNode),
        }
    }

    pub fn text(&self, span: Span) -> &str {
        &self.source[span.start..span.end]
    }

    pub fn preorder(&self) -> Preorder<'_> {
        self.root.preorder()
    }

    /// 1-based line and column of a byte offset, for diagnostics.
    pub fn line_col(&self, offset: usize) -> (usize, usize) {
        let before = &self.source[..offset.min(self.source.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
        (line, col)
    }

    /// The sequence of node kinds in pre-order; equal sequences mean the two
    /// trees have the same shape.
    pub fn kind_sequence(&self) -> Vec<&'static str> {
        self.preorder().map(|n| n.kind).collect()
    }
}

/// Parse `source` with `grammar`.
///
/// Syntax errors do not fail the call: the returned tree reports them through
/// [`Tree::has_errors`] and the caller decides what to do.
pub fn parse(source: &str, grammar: Grammar) -> Result<Tree> {
    let mut parser = tree_sitter::Parser::new();
    parser.set_language(&grammar.language()).map_err(|_| Error::GrammarUnavailable(grammar.name().to_string()))?;
    let ts = parser.parse(source, None).ok_or(Error::ParseFailed)?;
    let names = symbol_names(grammar);
    let mut error_count = 0;
    let root = convert(ts.root_node(), None, NodePath::root(), names, &mut error_count);
    Ok(Tree { source: source.to_string(), root, grammar, error_count })
}

/// Kind and field names with `'static` lifetime, interned once per grammar.
struct SymbolNames {
    kinds: Vec<&'static str>,
    fields: Vec<Option<&'static str>>,
}

fn symbol_names(grammar: Grammar) -> &'static SymbolNames {
    static PYTHON: OnceLock<SymbolNames> = OnceLock::new();
    match grammar {
        Grammar::Python => PYTHON.get_or_init(|| {
            let lang = grammar.language();
            let leak = |s: &str| -> &'static str { Box::leak(s.to_string().into_boxed_str()) };
            let kinds =
                (0..lang.node_kind_count() as u16).map(|id| lang.node_kind_for_id(id).map_or("", leak)).collect();
            let fields = (0..=lang.field_count() as u16).map(|id| lang.field_name_for_id(id).map(leak)).collect();
            SymbolNames { kinds, fields }
        }),
    }
}

fn convert(
    node: tree_sitter::Node<'_>,
    field: Option<&'static str>,
    path: NodePath,
    names: &'static SymbolNames,
    errors: &mut usize,
) -> Node {
    let is_error = node.is_error() || node.is_missing();
    if is_error {
        *errors += 1;
    }
    let mut children = Vec::with_capacity(node.child_count() as usize);
    let mut cursor = node.walk();
    if cursor.goto_first_child() {
        let mut i = 0u32;
        loop {
            let child = cursor.node();
            let f = cursor.field_id().and_then(|id| names.fields.get(id.get() as usize).copied().flatten());
            children.push(convert(child, f, path.child(i), names, errors));
            i += 1;
            if !cursor.goto_next_sibling() {
                break;
            }
        }
    }
    Node {
        kind: if node.is_error() { "ERROR" } else { names.kinds.get(node.kind_id() as usize).copied().unwrap_or("") },
        named: node.is_named(),
        field,
        span: Span::new(node.start_byte(), node.end_byte()),
        path,
        children,
        is_error,
    }
}

/// Replacement of one byte span.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanEdit {
    pub span: Span,
    pub replacement: String,
}

impl SpanEdit {
    pub fn new(span: Span, replacement: impl Into<String>) -> Self {
        SpanEdit { span, replacement: replacement.into() }
    }
}

/// Apply a batch of non-overlapping edits to `source`.
///
/// Edits may be given in any order. Two empty edits at the same offset are
/// rejected as ambiguous.
pub fn splice(source: &str, edits: &[SpanEdit]) -> Result<String> {
    let mut order: Vec<&SpanEdit> = edits.iter().collect();
    order.sort_by_key(|e| (e.span.start, e.span.end));
    for e in &order {
        if e.span.end > source.len() || !source.is_char_boundary(e.span.start) || !source.is_char_boundary(e.span.end) {
            return Err(Error::EditOutOfBounds { span: e.span, len: source.len() });
        }
    }
    for w in order.windows(2) {
        let (a, b) = (w[0].span, w[1].span);
        if a.end > b.start || a == b {
            return Err(Error::OverlappingEdits { first: a, second: b });
        }
    }
    let mut out = source.to_string();
    for e in order.iter().rev() {
        out.replace_range(e.span.start..e.span.end, &e.replacement);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_function_module() {
        let tree = parse("def f():\n    return 1\n", Grammar::Python).unwrap();
        assert_eq!(tree.root().kind, "module");
        let named: Vec<_> = tree.root().named_children().map(|n| n.kind).collect();
        assert_eq!(named, ["function_definition"]);
        assert!(!tree.has_errors());
    }

    #[test]
    fn empty_source_is_empty_module() {
        let tree = parse("", Grammar::Python).unwrap();
        assert_eq!(tree.root().kind, "module");
        assert!(tree.root().children.is_empty());
    }

    #[test]
    fn syntax_error_is_flagged() {
        let tree = parse("def f(:", Grammar::Python).unwrap();
        assert!(tree.has_errors());
    }

    #[test]
    fn unknown_grammar() {
        assert!(matches!("cobol".parse::<Grammar>(), Err(Error::GrammarUnavailable(_))));
    }

    #[test]
    fn node_text_slices() {
        let tree = parse("return 1", Grammar::Python).unwrap();
        let ret = tree.preorder().find(|n| n.kind == "return_statement").unwrap();
        assert_eq!(tree.node_text(ret).unwrap(), "return 1");
        assert_eq!(tree.node_text(tree.root()).unwrap(), "return 1");

        let tree = parse("a | b", Grammar::Python).unwrap();
        let op = tree.preorder().find(|n| n.field == Some("operator")).unwrap();
        assert_eq!(tree.node_text(op).unwrap(), "|");
    }

    #[test]
    fn node_text_rejects_foreign_node() {
        let a = parse("x = 1", Grammar::Python).unwrap();
        let b = parse("return 1", Grammar::Python).unwrap();
        let foreign = b.preorder().find(|n| n.kind == "return_statement").unwrap();
        assert!(matches!(a.node_text(foreign), Err(Error::ForeignNode)));
    }

    #[test]
    fn splice_examples() {
        assert_eq!(splice("abcdef", &[SpanEdit::new(Span::new(2, 4), "XY")]).unwrap(), "abXYef");
        assert_eq!(splice("abcdef", &[]).unwrap(), "abcdef");
        let edits = [SpanEdit::new(Span::new(3, 4), "<INFILL>"), SpanEdit::new(Span::new(1, 2), "<INFILL>")];
        assert_eq!(splice("a+b+c", &edits).unwrap(), "a<INFILL>b<INFILL>c");
    }

    #[test]
    fn splice_rejects_overlap() {
        let edits = [SpanEdit::new(Span::new(0, 3), "x"), SpanEdit::new(Span::new(2, 4), "y")];
        assert!(matches!(splice("abcdef", &edits), Err(Error::OverlappingEdits { .. })));
        assert!(splice("abc", &[SpanEdit::new(Span::new(2, 9), "")]).is_err());
    }

    #[test]
    fn path_round_trip() {
        let tree = parse("class A:\n    def f(self, x):\n        return x + 1\n", Grammar::Python).unwrap();
        for node in tree.preorder() {
            let found = tree.node_at(&node.path).unwrap();
            assert_eq!(found.span, node.span);
            assert_eq!(found.kind, node.kind);
        }
    }

    #[test]
    fn line_col() {
        let tree = parse("a = 1\nbb = 2\n", Grammar::Python).unwrap();
        assert_eq!(tree.line_col(0), (1, 1));
        assert_eq!(tree.line_col(7), (2, 2));
    }
}
