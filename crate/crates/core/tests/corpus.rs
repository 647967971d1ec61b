// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::path::Path;

use ctxbug::corpus::{self, AdaptationCase, ClassFile, StdlibAllowlist};
use ctxbug::syntax::{self, Grammar};

fn fixture() -> Vec<AdaptationCase> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini_corpus.jsonl");
    let c = corpus::load_corpus(&path, &StdlibAllowlist::default()).unwrap();
    assert!(c.diagnostics.is_empty(), "{:?}", c.diagnostics);
    c.cases
}

#[test]
fn mini_corpus_loads_all_cases() {
    assert_eq!(fixture().len(), 20);
}

#[test]
fn missing_file_is_fatal() {
    let err = corpus::load_corpus(Path::new("/nonexistent/corpus.jsonl"), &StdlibAllowlist::default());
    assert!(err.is_err());
}

#[test]
fn reserialize_is_a_fixpoint() {
    let cases = fixture();
    let mut buf = Vec::new();
    corpus::write_corpus(&cases, &mut buf).unwrap();
    let again = corpus::parse_corpus(std::str::from_utf8(&buf).unwrap(), &StdlibAllowlist::default()).unwrap();
    assert_eq!(again.cases, cases);
}

/// Brute-force scan: every `import`/`from` line, textual split on commas and `as`.
fn scan_imports(src: &str, std: &StdlibAllowlist) -> Vec<String> {
    let mut out = BTreeSet::new();
    for line in src.lines().map(str::trim) {
        if let Some(rest) = line.strip_prefix("import ") {
            for part in rest.split(',') {
                let module = part.split(" as ").next().unwrap().trim();
                out.insert(module.split('.').next().unwrap().to_string());
            }
        } else if let Some(rest) = line.strip_prefix("from ") {
            let module = rest.split_whitespace().next().unwrap();
            if !module.starts_with('.') {
                out.insert(module.split('.').next().unwrap().to_string());
            }
        }
    }
    out.into_iter().filter(|m| !std.contains(m)).collect()
}

#[test]
fn lib_deps_match_brute_force_scan() {
    let std = StdlibAllowlist::default();
    let mut nonempty = 0;
    for case in fixture() {
        let deps = corpus::extract_lib_deps(&case, &std).unwrap();
        assert_eq!(deps, scan_imports(&case.class_context, &std), "{}", case.case_id);
        nonempty += usize::from(!deps.is_empty());
    }
    assert!(nonempty >= 4);
}

/// Call-graph oracle: a method is a caller if its text contains `self.<target>(`
/// or `cls.<target>(` or a bare `<target>(` not preceded by a dot.
fn text_callers(case: &AdaptationCase) -> Vec<String> {
    let tree = syntax::parse(&case.class_context, Grammar::Python).unwrap();
    let cf = ClassFile::new(&tree, &case.class_name).unwrap();
    let target = &case.method_name;
    let mut out = vec![target.clone()];
    for m in cf.methods() {
        if &m.name == target {
            continue;
        }
        let body = &case.class_context[m.node.child_by_field("body").unwrap().span.start..m.span.end];
        let re = regex::Regex::new(&format!(r"(^|[^.\w]|\bself\.|\bcls\.){}\s*\(", regex::escape(target))).unwrap();
        if re.is_match(body) {
            out.push(m.name.clone());
        }
    }
    out
}

#[test]
fn target_context_matches_call_graph_oracle() {
    let mut with_callers = 0;
    for case in fixture() {
        let ctx = corpus::build_target_context(&case).unwrap();
        assert_eq!(ctx.removed_methods, text_callers(&case), "{}", case.case_id);
        with_callers += usize::from(ctx.removed_methods.len() > 1);
        let tree = syntax::parse(&ctx.context_source, Grammar::Python).unwrap();
        assert!(!tree.has_errors());
        let remaining = ClassFile::new(&tree, &case.class_name).unwrap();
        let original = syntax::parse(&case.class_context, Grammar::Python).unwrap();
        let all = ClassFile::new(&original, &case.class_name).unwrap();
        assert!(remaining.methods().len() < all.methods().len());
        for m in remaining.methods() {
            assert!(!ctx.removed_methods.contains(&m.name));
            assert!(all.method(&m.name).is_some());
        }
        // re-inserting the solution into the stripped class still parses
        let body_indent = "    ";
        let reinserted =
            format!("{}\n{}", ctx.context_source, syntax::reindent(&case.solution_method, body_indent, false));
        assert!(!syntax::parse(&reinserted, Grammar::Python).unwrap().has_errors(), "{}", case.case_id);
    }
    assert!(with_callers >= 3);
}
