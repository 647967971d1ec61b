// SPDX-License-Identifier: Apache-2.0

//! Hand-written variants for the identification decision table.

use ctxbug::corpus::AdaptationCase;
use ctxbug::identify::{Classification, Identifier, Verdict};
use ctxbug::llm::{DecodeConfig, Generation};
use ctxbug::obfuscate::{build_renaming, obfuscate_code, Scope};
use ctxbug::perturb::{perturb_rules, PerturbedTemplate};
use ctxbug::testexec::{self, discover_tests, MockShim, TestResult};

pub struct Row {
    pub name: &'static str,
    pub case_id: &'static str,
    pub rule_id: u8,
    pub occurrence: Option<usize>,
    /// Model response with original names; obfuscated before classifying.
    pub response: &'static str,
    pub expected: Verdict,
}

pub const PASSING_ALTERNATIVE: &str = "def add(self, status):\n    self.state = status | self.state\n";

pub fn rows() -> Vec<Row> {
    vec![
        Row {
            name: "identity",
            case_id: "StatusFlags.add",
            rule_id: 4,
            occurrence: None,
            response: "```python\ndef add(self, status):\n    self.state = self.state | status\n```",
            expected: Verdict::NoDifference,
        },
        Row {
            name: "single-location change",
            case_id: "StatusFlags.add",
            rule_id: 4,
            occurrence: None,
            response: "```python\ndef add(self, status):\n    self.state = self.state + status\n```",
            expected: Verdict::Valid,
        },
        Row {
            name: "deleted node",
            case_id: "ShoppingCart.total_price",
            rule_id: 2,
            occurrence: None,
            response: "```python\ndef total_price(self):\n    total = 0\n    for price, quantity in self.items.values():\n        total += price * quantity\n    pass\n```",
            expected: Verdict::Valid,
        },
        Row {
            name: "extraneous change",
            case_id: "StatusFlags.add",
            rule_id: 4,
            occurrence: None,
            response: "```python\ndef add(self, status):\n    self.state = self.state + status\n    print(status)\n```",
            expected: Verdict::ExtraneousChange,
        },
        Row {
            name: "passing alternative",
            case_id: "StatusFlags.add",
            rule_id: 5,
            occurrence: Some(0),
            response: "```python\ndef add(self, status):\n    self.state = status | self.state\n```",
            expected: Verdict::PassesTests,
        },
        Row {
            name: "unparseable",
            case_id: "StatusFlags.add",
            rule_id: 4,
            occurrence: None,
            response: "```python\ndef add(self, status):\n    self.state = = status\n```",
            expected: Verdict::Unparseable,
        },
        Row {
            name: "empty",
            case_id: "StatusFlags.add",
            rule_id: 4,
            occurrence: None,
            response: "I am not able to complete this method.",
            expected: Verdict::Empty,
        },
    ]
}

/// Mock runner over the corpus, with the commuted `|` recorded as passing.
pub fn shim(cases: &[AdaptationCase]) -> MockShim {
    let mut shim = MockShim::with_references(cases);
    let flags = cases.iter().find(|c| c.case_id == "StatusFlags.add").expect("fixture case");
    let tests = discover_tests(&flags.test_suite)
        .into_iter()
        .map(|name| TestResult { name, verdict: testexec::Verdict::Pass, message: String::new() })
        .collect();
    shim.insert(&flags.case_id, PASSING_ALTERNATIVE, tests);
    shim
}

pub fn template(case: &AdaptationCase, rule_id: u8, occurrence: Option<usize>) -> PerturbedTemplate {
    perturb_rules(case, &[rule_id])
        .unwrap()
        .into_iter()
        .find(|t| t.occurrence_index == occurrence)
        .unwrap_or_else(|| panic!("{} has no rule {rule_id} template", case.case_id))
}

pub fn generation(model: &str, text: &str) -> Generation {
    Generation {
        prompt_hash: String::new(),
        model_id: model.into(),
        text: text.into(),
        token_probs: None,
        decode: DecodeConfig { temperature: 0.0, max_tokens: 1024 },
        truncated: false,
        error: None,
    }
}

pub fn classify(identifier: &Identifier<'_>, case: &AdaptationCase, row: &Row) -> Classification {
    let map = build_renaming(case, Scope::Method).unwrap();
    let t = template(case, row.rule_id, row.occurrence);
    let text = match row.response.strip_prefix("```python\n").and_then(|r| r.strip_suffix("```")) {
        Some(code) => format!("```python\n{}```", obfuscate_code(code, &map).unwrap()),
        None => row.response.to_string(),
    };
    identifier.classify_variant(case, &t, &generation("fixture-model", &text), &map)
}
