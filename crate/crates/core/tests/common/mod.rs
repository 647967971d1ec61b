// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

pub mod decision;
pub mod perturb_oracle;
pub mod rr_oracle;
pub mod trees;

use std::path::{Path, PathBuf};

use ctxbug::corpus::{self, AdaptationCase, StdlibAllowlist};
use ctxbug::perturb::PerturbedTemplate;

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn mini_corpus() -> Vec<AdaptationCase> {
    let c = corpus::load_corpus(&fixture_path("mini_corpus.jsonl"), &StdlibAllowlist::default()).unwrap();
    assert!(c.diagnostics.is_empty(), "{:?}", c.diagnostics);
    c.cases
}

pub fn case(id: &str) -> AdaptationCase {
    mini_corpus().into_iter().find(|c| c.case_id == id).unwrap()
}

/// Replace each placeholder, left to right, by the text of its location.
pub fn textual_restore(t: &PerturbedTemplate, solution: &str) -> String {
    let ph = t.rule().placeholder;
    let mut out = String::new();
    let mut rest = t.template_source.as_str();
    for loc in &t.perturbed_locations {
        let i = rest.find(ph).expect("placeholder present");
        out.push_str(&rest[..i]);
        out.push_str(&solution[loc.span.start..loc.span.end]);
        rest = &rest[i + ph.len()..];
    }
    assert!(!rest.contains(ph));
    out.push_str(rest);
    out
}
