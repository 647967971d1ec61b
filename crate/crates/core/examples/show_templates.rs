// SPDX-License-Identifier: Apache-2.0

//! Print every template for one case of the mini corpus.

use ctxbug::corpus::{load_corpus, StdlibAllowlist};

fn main() {
    let id = std::env::args().nth(1).unwrap_or_else(|| "StatusFlags.add".into());
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini_corpus.jsonl");
    let corpus = load_corpus(path.as_ref(), &StdlibAllowlist::default()).unwrap();
    let case = corpus.cases.iter().find(|c| c.case_id == id).expect("unknown case");
    for t in ctxbug::perturb::perturb_all(case).unwrap() {
        println!("== {}\n{}", t.id(), t.template_source);
    }
}
