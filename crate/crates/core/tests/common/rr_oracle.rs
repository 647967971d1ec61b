// SPDX-License-Identifier: Apache-2.0

//! Text-splice oracle for resolution counts.
//!
//! Outputs are built by writing either the solution text or a one-token
//! mutation of it into each placeholder of a template. A location is
//! resolved exactly when its spliced text is the solution's text, which
//! needs no tree matching to decide.

use ctxbug::corpus::AdaptationCase;
use ctxbug::llm::oracle::mutate;
use ctxbug::perturb::{perturb_all, Location};
use ctxbug::syntax::{parse, Grammar};

pub struct RrFixture {
    pub name: String,
    pub case: AdaptationCase,
    pub locations: Vec<Location>,
    pub output: String,
    pub expected: usize,
}

fn masks(n: usize) -> Vec<u32> {
    if n <= 3 {
        return (0..1u32 << n).collect();
    }
    let mut m = vec![0, (1u32 << n.min(31)) - 1];
    m.extend((0..n.min(31)).map(|k| 1u32 << k));
    m
}

/// Every parseable output over every template of `cases`, with its count.
pub fn fixtures(cases: &[AdaptationCase]) -> Vec<RrFixture> {
    let mut out = Vec::new();
    for case in cases {
        for t in perturb_all(case).unwrap() {
            let originals: Vec<&str> =
                t.perturbed_locations.iter().map(|l| &case.solution_method[l.span.start..l.span.end]).collect();
            for mask in masks(originals.len()) {
                let fills: Vec<String> = originals
                    .iter()
                    .enumerate()
                    .map(
                        |(k, o)| if mask >> k & 1 == 1 { mutate(o, k as u64 + u64::from(mask)) } else { o.to_string() },
                    )
                    .collect();
                let refs: Vec<&str> = fills.iter().map(String::as_str).collect();
                let output = t.restore(&refs).unwrap();
                if parse(&output, Grammar::Python).map_or(true, |p| p.has_errors()) {
                    continue;
                }
                let expected = fills.iter().zip(&originals).filter(|(f, o)| f == o).count();
                out.push(RrFixture {
                    name: format!("{} mask {mask:b}", t.id()),
                    case: case.clone(),
                    locations: t.perturbed_locations.clone(),
                    output,
                    expected,
                });
            }
        }
    }
    out
}
