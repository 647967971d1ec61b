// SPDX-License-Identifier: Apache-2.0

mod common;

use ctxbug::obfuscate::{self, Scope};
use ctxbug::perturb;
use ctxbug::syntax::{self, Grammar};

#[test]
fn round_trip_over_corpus_and_templates() {
    for case in common::mini_corpus() {
        for scope in [Scope::Method, Scope::Class] {
            let map = obfuscate::build_renaming(&case, scope).unwrap();
            assert!(!map.is_empty(), "{}", case.case_id);
            let mut sources = vec![case.solution_method.clone(), case.class_context.clone()];
            sources.extend(perturb::perturb_all(&case).unwrap().into_iter().map(|t| t.template_source));
            for src in &sources {
                let ob = obfuscate::obfuscate_code(src, &map).unwrap();
                assert_eq!(&obfuscate::deobfuscate(&ob, &map), src, "{}", case.case_id);
            }
            for src in [&case.solution_method, &case.class_context] {
                let ob = obfuscate::obfuscate_code(src, &map).unwrap();
                let a = syntax::parse(src, Grammar::Python).unwrap();
                let b = syntax::parse(&ob, Grammar::Python).unwrap();
                assert!(!b.has_errors(), "{}", case.case_id);
                assert_eq!(a.kind_sequence(), b.kind_sequence(), "{}", case.case_id);
            }
            let text = obfuscate::obfuscate_text(&case.requirement, &map);
            assert_eq!(obfuscate::deobfuscate_text(&text, &map), case.requirement);
        }
    }
}

#[test]
fn maps_are_deterministic_and_injective() {
    for case in common::mini_corpus() {
        let a = obfuscate::build_renaming(&case, Scope::Class).unwrap();
        let b = obfuscate::build_renaming(&case, Scope::Class).unwrap();
        assert_eq!(a, b);
        let targets: std::collections::HashSet<_> = a.pairs().map(|(_, n)| n).collect();
        assert_eq!(targets.len(), a.len());
        // method scope is the restriction of class scope to the method's names
        let m = obfuscate::build_renaming(&case, Scope::Method).unwrap();
        assert!(m.len() <= a.len());
    }
}

#[test]
fn obfuscated_method_hides_renamed_names() {
    let case = common::case("StatusFlags.add");
    let map = obfuscate::build_renaming(&case, Scope::Method).unwrap();
    let ob = obfuscate::obfuscate_code(&case.solution_method, &map).unwrap();
    assert_eq!(ob, "def func_0(self, var_1):\n    self.var_0 = self.var_0 | var_1\n");
    assert_eq!(
        obfuscate::obfuscate_text(&case.requirement, &map),
        "A utility class that stores a set of bitwise var_1 flags in an integer var_0. The func_0 method combines two var_1 values into var_0."
    );
}
