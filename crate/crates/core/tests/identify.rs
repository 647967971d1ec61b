// SPDX-License-Identifier: Apache-2.0

mod common;

use std::time::Instant;

use common::decision;
use ctxbug::differ::Correspondence;
use ctxbug::identify::{clean, duplicates, summarize, BugKind, Identifier, Verdict};

#[test]
fn decision_table_has_no_confusion() {
    let cases = common::mini_corpus();
    let shim = decision::shim(&cases);
    let identifier = Identifier::new(&shim);
    for row in decision::rows() {
        let case = cases.iter().find(|c| c.case_id == row.case_id).unwrap();
        let start = Instant::now();
        let c = decision::classify(&identifier, case, &row);
        assert_eq!(c.verdict, row.expected, "{}: {}", row.name, c.details);
        assert!(start.elapsed().as_secs_f64() < 1.0, "{} took {:?}", row.name, start.elapsed());
        assert_eq!(c.instance.is_some(), row.expected == Verdict::Valid, "{}", row.name);
    }
}

#[test]
fn valid_instances_carry_their_locations() {
    let cases = common::mini_corpus();
    let shim = decision::shim(&cases);
    let identifier = Identifier::new(&shim);
    let rows = decision::rows();

    let plus = &rows[1];
    let case = cases.iter().find(|c| c.case_id == plus.case_id).unwrap();
    let inst = decision::classify(&identifier, case, plus).instance.unwrap();
    assert_eq!(inst.kind, BugKind::CtxBug);
    assert_eq!(inst.id, "StatusFlags.add/r4@fixture-model");
    assert_eq!(inst.method_source, "def add(self, status):\n    self.state = self.state + status\n");
    assert_eq!(inst.bug_locations.len(), 1);
    assert!(matches!(inst.bug_locations[0].correspondence, Correspondence::Matched { identical: false, .. }));
    let op = &case.solution_method[inst.bug_locations[0].location.span.start..inst.bug_locations[0].location.span.end];
    assert_eq!(op, "|");

    let deleted = &rows[2];
    let case = cases.iter().find(|c| c.case_id == deleted.case_id).unwrap();
    let inst = decision::classify(&identifier, case, deleted).instance.unwrap();
    assert_eq!(inst.bug_locations[0].correspondence, Correspondence::Deleted);
}

#[test]
fn repeated_variants_are_duplicates() {
    let cases = common::mini_corpus();
    let shim = decision::shim(&cases);
    let identifier = Identifier::new(&shim);
    let rows = decision::rows();
    let case = cases.iter().find(|c| c.case_id == rows[1].case_id).unwrap();
    let first = decision::classify(&identifier, case, &rows[1]).instance.unwrap();
    let mut second = first.clone();
    second.id = "StatusFlags.add/r4@other-model".into();
    second.generator_model_id = "other-model".into();
    // layout differences do not make a new instance
    second.method_source = "def add(self, status):\n    self.state = self.state  +  status\n".into();
    let mut empty = first.clone();
    empty.method_source = "  \n".into();
    let all = vec![first.clone(), second, empty];
    assert_eq!(duplicates(&all), vec![1, 2]);
    let kept = clean(all);
    assert_eq!(kept, vec![first]);
    let rows = summarize(&kept);
    let total = rows.iter().find(|r| r.task == "All").unwrap();
    assert_eq!((total.instances, total.bugs), (1, 1));
}
