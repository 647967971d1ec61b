// SPDX-License-Identifier: Apache-2.0

//! Identifier obfuscation.
//!
//! User-defined names are replaced by schematic ones (`class_0`, `func_0`,
//! `var_0`, ...) so that a model cannot recognise a memorised benchmark
//! solution. The map is name-based: every occurrence of a name is renamed the
//! same way, whatever its scope. Renaming works on lexical tokens, so it also
//! applies to placeholder-bearing templates and to model output that does not
//! parse. String literals are left alone; f-string interpolations are code.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{AdaptationCase, ClassFile, ImportMap};
use crate::perturb::scope_bindings;
use crate::syntax::lex::{self, TokenKind};
use crate::syntax::{self, Node, Span, SpanEdit, Tree};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Names occurring in the target method.
    Method,
    /// Names occurring anywhere in the class file.
    Class,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Family {
    Class,
    Func,
    Var,
}

impl Family {
    fn prefix(self) -> &'static str {
        match self {
            Family::Class => "class_",
            Family::Func => "func_",
            Family::Var => "var_",
        }
    }
}

/// Bijective renaming of identifiers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenamingMap {
    pub scope: Scope,
    forward: IndexMap<String, String>,
    inverse: HashMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Persisted {
    scope: Scope,
    pairs: Vec<(String, String)>,
}

impl Serialize for RenamingMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        Persisted { scope: self.scope, pairs: self.pairs().map(|(a, b)| (a.to_string(), b.to_string())).collect() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RenamingMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let p = Persisted::deserialize(d)?;
        RenamingMap::from_pairs(p.scope, p.pairs).map_err(serde::de::Error::custom)
    }
}

const PYTHON_310_BUILTINS: &str = include_str!("../config/python-3.10-builtins.txt");

fn builtins() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| PYTHON_310_BUILTINS.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
}

pub fn is_builtin(name: &str) -> bool {
    builtins().contains(name)
}

fn is_dunder(name: &str) -> bool {
    name.len() > 4 && name.starts_with("__") && name.ends_with("__")
}

fn reserved(name: &str) -> bool {
    lex::is_keyword(name) || is_builtin(name) || is_dunder(name) || matches!(name, "self" | "cls")
}

impl RenamingMap {
    pub fn empty(scope: Scope) -> Self {
        RenamingMap { scope, forward: IndexMap::new(), inverse: HashMap::new() }
    }

    pub fn from_pairs(scope: Scope, pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut map = Self::empty(scope);
        for (from, to) in pairs {
            map.insert(from, to)?;
        }
        Ok(map)
    }

    /// Rename plain identifiers to `var_0, var_1, ...` in the given order.
    pub fn from_identifiers<'a>(scope: Scope, names: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        Self::from_pairs(scope, names.into_iter().enumerate().map(|(i, n)| (n.to_string(), format!("var_{i}"))))
    }

    fn insert(&mut self, from: String, to: String) -> Result<()> {
        if reserved(&to) || self.inverse.contains_key(&to) || self.forward.contains_key(&from) {
            return Err(Error::RenamingCollision(format!("{from} -> {to}")));
        }
        self.inverse.insert(to.clone(), from.clone());
        self.forward.insert(from, to);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn get(&self, original: &str) -> Option<&str> {
        self.forward.get(original).map(String::as_str)
    }

    pub fn original_of(&self, obfuscated: &str) -> Option<&str> {
        self.inverse.get(obfuscated).map(String::as_str)
    }

    /// (original, obfuscated) in assignment order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.forward.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }
}

/// Role of each user-defined name in a class file, plus names that must stay
/// as they are.
struct Census {
    roles: HashMap<String, Family>,
    keep: HashSet<String>,
}

fn census(tree: &Tree, class_name: &str) -> Census {
    let src = tree.source();
    let text = |n: &Node| &src[n.span.start..n.span.end];
    let mut roles: HashMap<String, Family> = HashMap::new();
    let mut assign = |name: &str, fam: Family| {
        if reserved(name) {
            return;
        }
        let e = roles.entry(name.to_string()).or_insert(fam);
        *e = (*e).min(fam);
    };
    for n in tree.preorder() {
        match n.kind {
            "class_definition" => {
                if let Some(id) = n.child_by_field("name") {
                    assign(text(id), Family::Class);
                }
            }
            "function_definition" => {
                if let Some(id) = n.child_by_field("name") {
                    assign(text(id), Family::Func);
                }
            }
            "attribute" => {
                let (Some(obj), Some(attr)) = (n.child_by_field("object"), n.child_by_field("attribute")) else {
                    continue;
                };
                if obj.kind == "identifier" && matches!(text(obj), "self" | "cls") {
                    assign(text(attr), Family::Var);
                }
            }
            _ => {}
        }
    }
    let (bindings, _) = scope_bindings(tree, tree.root());
    for b in bindings {
        assign(text(b), Family::Var);
    }

    // Names that would change meaning if renamed: imported names, members of
    // objects that are not ours, and keyword labels passed to foreign callees.
    let imports = ImportMap::from_tree(tree);
    let mut keep: HashSet<String> = imports.locals().map(str::to_string).collect();
    keep.extend(imports.roots().map(str::to_string));
    let user_callables: HashSet<&str> =
        roles.iter().filter(|(_, f)| **f != Family::Var).map(|(n, _)| n.as_str()).collect();
    let class_methods: HashSet<String> = ClassFile::new(tree, class_name)
        .map(|c| c.methods().iter().map(|m| m.name.clone()).collect())
        .unwrap_or_default();
    for n in tree.preorder() {
        match n.kind {
            "attribute" => {
                let (Some(obj), Some(attr)) = (n.child_by_field("object"), n.child_by_field("attribute")) else {
                    continue;
                };
                let ours = obj.kind == "identifier"
                    && (matches!(text(obj), "self" | "cls") || user_callables.contains(text(obj)));
                if !ours {
                    keep.insert(text(attr).to_string());
                }
            }
            "keyword_argument" => {
                let Some(label) = n.child_by_field("name") else { continue };
                let callee =
                    tree.node_at(&parent_path(&n.path)).and_then(|args| tree.node_at(&parent_path(&args.path)));
                let ours = callee.and_then(|c| c.child_by_field("function")).is_some_and(|f| match f.kind {
                    "identifier" => user_callables.contains(text(f)),
                    "attribute" => {
                        let recv = f.child_by_field("object").filter(|o| o.kind == "identifier").map(text);
                        recv.is_some_and(|r| matches!(r, "self" | "cls") || user_callables.contains(r))
                            && f.child_by_field("attribute").is_some_and(|a| class_methods.contains(text(a)))
                    }
                    _ => false,
                });
                if !ours {
                    keep.insert(text(label).to_string());
                }
            }
            _ => {}
        }
    }
    Census { roles, keep }
}

fn parent_path(p: &syntax::NodePath) -> syntax::NodePath {
    let mut v = p.0.clone();
    v.pop();
    syntax::NodePath(v)
}

fn name_tokens(src: &str) -> Vec<(Span, &str)> {
    lex::tokenize(src).tokens.into_iter().filter(|t| t.kind == TokenKind::Name).map(|t| (t.span, t.text(src))).collect()
}

/// Deterministic renaming for a case. Names are numbered per family in order
/// of first occurrence in the class file; method scope keeps only the names
/// that occur in the solution method.
pub fn build_renaming(case: &AdaptationCase, scope: Scope) -> Result<RenamingMap> {
    let tree = syntax::parse(&case.class_context, case.language)?;
    let census = census(&tree, &case.class_name);
    let in_scope: Option<HashSet<&str>> = match scope {
        Scope::Class => None,
        Scope::Method => Some(name_tokens(&case.solution_method).into_iter().map(|(_, n)| n).collect()),
    };
    let mut taken: HashSet<&str> = name_tokens(&case.class_context).into_iter().map(|(_, n)| n).collect();
    taken.extend(name_tokens(&case.solution_method).into_iter().map(|(_, n)| n));
    let mut order: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for (_, name) in name_tokens(&case.class_context) {
        if census.roles.contains_key(name)
            && !census.keep.contains(name)
            && in_scope.as_ref().is_none_or(|s| s.contains(name))
            && seen.insert(name)
        {
            order.push(name);
        }
    }
    let mut next: HashMap<Family, usize> = HashMap::new();
    let mut map = RenamingMap::empty(scope);
    for name in order {
        let fam = census.roles[name];
        let counter = next.entry(fam).or_insert(0);
        let new = loop {
            let candidate = format!("{}{}", fam.prefix(), counter);
            *counter += 1;
            if !taken.contains(candidate.as_str()) && !reserved(&candidate) {
                break candidate;
            }
        };
        map.insert(name.to_string(), new)?;
    }
    Ok(map)
}

fn rewrite(source: &str, lookup: impl Fn(&str) -> Option<String>) -> String {
    let edits: Vec<SpanEdit> = name_tokens(source)
        .into_iter()
        .filter_map(|(span, name)| lookup(name).map(|new| SpanEdit::new(span, new)))
        .collect();
    syntax::splice(source, &edits).expect("token spans are disjoint")
}

/// Rename every identifier token in the map. Placeholders, comments, and
/// string literals are untouched.
pub fn obfuscate_code(source: &str, map: &RenamingMap) -> Result<String> {
    if lex::tokenize(source).unterminated {
        return Err(Error::Lex("unterminated string literal".into()));
    }
    Ok(rewrite(source, |n| map.get(n).map(str::to_string)))
}

/// Inverse of [`obfuscate_code`]. Names outside the map pass through.
pub fn deobfuscate(source: &str, map: &RenamingMap) -> String {
    rewrite(source, |n| map.original_of(n).map(str::to_string))
}

/// Whole-word, case-sensitive rewrite of prose.
pub fn obfuscate_text(text: &str, map: &RenamingMap) -> String {
    if map.is_empty() {
        return text.to_string();
    }
    let mut names: Vec<&str> = map.pairs().map(|(a, _)| a).collect();
    names.sort_by_key(|n| std::cmp::Reverse(n.len()));
    let alternation = names.iter().map(|n| regex::escape(n)).collect::<Vec<_>>().join("|");
    let re = Regex::new(&format!(r"\b(?:{alternation})\b")).expect("escaped alternation");
    re.replace_all(text, |c: &regex::Captures| map.get(&c[0]).unwrap_or(&c[0]).to_string()).into_owned()
}

/// Inverse of [`obfuscate_text`].
pub fn deobfuscate_text(text: &str, map: &RenamingMap) -> String {
    let inv = RenamingMap {
        scope: map.scope,
        forward: map.forward.iter().map(|(a, b)| (b.clone(), a.clone())).collect(),
        inverse: HashMap::new(),
    };
    obfuscate_text(text, &inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLAGS: &str = "class StatusFlags:\n    def __init__(self):\n        self.state = 0\n\n    def add(self, status):\n        self.state = self.state | status\n";

    fn flags_case() -> AdaptationCase {
        AdaptationCase {
            case_id: "StatusFlags.add".into(),
            class_name: "StatusFlags".into(),
            class_context: FLAGS.into(),
            method_name: "add".into(),
            solution_method: "def add(self, status):\n    self.state = self.state | status\n".into(),
            requirement: "The add method combines two status values into state.".into(),
            test_suite: String::new(),
            lib_deps: vec![],
            topic: String::new(),
            language: syntax::Grammar::Python,
        }
    }

    #[test]
    fn identifier_list_example() {
        let map = RenamingMap::from_identifiers(Scope::Method, ["state", "status"]).unwrap();
        assert_eq!(map.get("state"), Some("var_0"));
        assert_eq!(map.get("status"), Some("var_1"));
        let code = "self.state = self.state <INFILL> status";
        let ob = obfuscate_code(code, &map).unwrap();
        assert_eq!(ob, "self.var_0 = self.var_0 <INFILL> var_1");
        assert_eq!(deobfuscate(&ob, &map), code);
    }

    #[test]
    fn status_flags_method_scope() {
        let map = build_renaming(&flags_case(), Scope::Method).unwrap();
        let pairs: Vec<_> = map.pairs().collect();
        assert_eq!(pairs, [("state", "var_0"), ("add", "func_0"), ("status", "var_1")]);
        let class = build_renaming(&flags_case(), Scope::Class).unwrap();
        assert_eq!(class.get("StatusFlags"), Some("class_0"));
        assert_eq!(class.get("__init__"), None);
    }

    #[test]
    fn text_rewrite_respects_word_boundaries() {
        let map = RenamingMap::from_identifiers(Scope::Method, ["state", "status"]).unwrap();
        assert_eq!(obfuscate_text("combine two status values into state", &map), "combine two var_1 values into var_0");
        assert_eq!(obfuscate_text("a statement about states", &map), "a statement about states");
        assert_eq!(deobfuscate_text("var_1 into var_0", &map), "status into state");
    }

    #[test]
    fn strings_untouched_fstring_code_renamed() {
        let map = RenamingMap::from_identifiers(Scope::Class, ["state"]).unwrap();
        assert_eq!(obfuscate_code("x['state'] = f'{state}!'", &map).unwrap(), "x['state'] = f'{var_0}!'");
    }

    #[test]
    fn fresh_names_pass_through() {
        let map = RenamingMap::from_identifiers(Scope::Class, ["state"]).unwrap();
        assert_eq!(deobfuscate("tmp = var_0 + var_9", &map), "tmp = state + var_9");
    }

    #[test]
    fn foreign_members_and_labels_are_kept() {
        let src = "import requests\n\n\nclass F:\n    def get(self, params, size):\n        r = requests.get(self.url, params=params)\n        return r.size + size\n";
        let case = AdaptationCase {
            case_id: "F.get".into(),
            class_name: "F".into(),
            class_context: src.into(),
            method_name: "get".into(),
            solution_method: String::new(),
            requirement: String::new(),
            test_suite: String::new(),
            lib_deps: vec!["requests".into()],
            topic: String::new(),
            language: syntax::Grammar::Python,
        };
        let map = build_renaming(&case, Scope::Class).unwrap();
        assert_eq!(map.get("params"), None);
        assert_eq!(map.get("size"), None);
        assert_eq!(map.get("requests"), None);
        assert!(map.get("url").is_some());
        assert!(map.get("r").is_some());
    }

    #[test]
    fn collisions_are_skipped() {
        let src = "class C:\n    def m(self, var_0):\n        a = var_0\n        return a\n";
        let case = AdaptationCase {
            case_id: "C.m".into(),
            class_name: "C".into(),
            class_context: src.into(),
            method_name: "m".into(),
            solution_method: String::new(),
            requirement: String::new(),
            test_suite: String::new(),
            lib_deps: vec![],
            topic: String::new(),
            language: syntax::Grammar::Python,
        };
        let map = build_renaming(&case, Scope::Class).unwrap();
        assert_eq!(map.get("var_0"), Some("var_1"));
        assert_eq!(map.get("a"), Some("var_2"));
    }

    #[test]
    fn persisted_as_pairs() {
        let map = RenamingMap::from_identifiers(Scope::Method, ["state"]).unwrap();
        let json = serde_json::to_string(&map).unwrap();
        assert_eq!(json, r#"{"scope":"method","pairs":[["state","var_0"]]}"#);
        assert_eq!(serde_json::from_str::<RenamingMap>(&json).unwrap(), map);
    }

    #[test]
    fn unterminated_source_is_rejected() {
        let map = RenamingMap::empty(Scope::Method);
        assert!(obfuscate_code("x = 'abc", &map).is_err());
    }
}
