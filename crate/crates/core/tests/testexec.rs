// SPDX-License-Identifier: Apache-2.0

mod common;

use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::time::{Duration, Instant};

use ctxbug::testexec::{assemble, discover_tests, AssembledProgram, MockShim, ProcessShim, TestRunner, Verdict};
use ctxbug::Error;

#[test]
fn assembling_the_solution_reproduces_the_class_file() {
    for case in common::mini_corpus() {
        let p = assemble(&case, &case.solution_method).unwrap();
        assert_eq!(p.module_source, case.class_context, "{}", case.case_id);
        assert_eq!(p.tests_source, case.test_suite);
    }
}

#[test]
fn assembly_reindents_and_renames() {
    let case = common::case("StatusFlags.add");
    let p = assemble(&case, "def add(self, status):\n    self.state = self.state + status\n").unwrap();
    assert!(p.module_source.contains("    def add(self, status):\n        self.state = self.state + status\n"));
    assert!(!p.module_source.contains("self.state | status"));

    let indented = "        def combine(self, status):\n            self.state = self.state | status\n";
    let q = assemble(&case, indented).unwrap();
    assert_eq!(q.module_source, case.class_context);

    let err = assemble(&case, "def add(self, status:\n    pass\n").unwrap_err();
    assert!(matches!(err, Error::Assembly(_)));
    assert!(matches!(assemble(&case, "x = 1\n").unwrap_err(), Error::Assembly(_)));
}

#[test]
fn mock_passes_every_reference_solution() {
    let cases = common::mini_corpus();
    let mock = MockShim::with_references(&cases);
    for case in &cases {
        let p = assemble(case, &case.solution_method).unwrap();
        let out = mock.run(&p, Duration::from_secs(30));
        assert!(out.all_passed, "{}: {:?}", case.case_id, out);
        assert_eq!(out.tests.len(), discover_tests(&case.test_suite).len());
        // hermetic: a second run gives the same verdicts
        assert_eq!(mock.run(&p, Duration::from_secs(30)).tests, out.tests);
    }
}

#[test]
fn mock_fails_a_changed_method() {
    let case = common::case("StatusFlags.add");
    let mock = MockShim::with_references([&case]);
    let p = assemble(&case, "def add(self, status):\n    self.state = self.state + status\n").unwrap();
    let out = mock.run(&p, Duration::from_secs(30));
    assert!(!out.all_passed);
    assert!(out.failing().any(|t| t.name == "StatusFlagsTestAdd.test_add_same_flag_twice"));
}

fn fake_shim(dir: &Path, body: &str) -> ProcessShim {
    let path = dir.join("shim.sh");
    std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    ProcessShim::new(vec![path.to_string_lossy().into_owned()])
}

fn program() -> AssembledProgram {
    let case = common::case("StatusFlags.add");
    assemble(&case, &case.solution_method).unwrap()
}

#[test]
fn process_shim_reads_result_file() {
    let dir = tempfile::tempdir().unwrap();
    let shim = fake_shim(
        dir.path(),
        r#"test -s "$1" || exit 3
cat > "$2" <<'JSON'
{"tests": [{"name": "T.test_a", "verdict": "pass", "message": ""},
           {"name": "T.test_b", "verdict": "fail", "message": "AssertionError: 2 != 1"},
           {"name": "T.test_c", "verdict": "error", "message": "NameError"}], "duration": 0.25}
JSON"#,
    );
    let out = shim.run(&program(), Duration::from_secs(10));
    let verdicts: Vec<Verdict> = out.tests.iter().map(|t| t.verdict).collect();
    assert_eq!(verdicts, [Verdict::Pass, Verdict::Fail, Verdict::Error]);
    assert!(!out.all_passed && !out.timed_out);
    assert_eq!(out.duration, 0.25);
}

#[test]
fn process_shim_enforces_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let shim = fake_shim(dir.path(), "exec sleep 30");
    let started = Instant::now();
    let out = shim.run(&program(), Duration::from_secs(1));
    assert!(started.elapsed() < Duration::from_secs(3));
    assert!(out.timed_out && !out.all_passed);
    assert_eq!(out.tests.len(), 3);
    assert!(out.tests.iter().all(|t| t.verdict == Verdict::Error));
}

#[test]
fn process_shim_crash_and_garbage_become_errors() {
    let dir = tempfile::tempdir().unwrap();
    let crash = fake_shim(dir.path(), "echo boom >&2; exit 2");
    let out = crash.run(&program(), Duration::from_secs(10));
    assert!(!out.all_passed && !out.timed_out);
    assert!(out.tests.iter().all(|t| t.verdict == Verdict::Error));
    assert!(out.diagnostic.unwrap().contains("boom"));

    let dir2 = tempfile::tempdir().unwrap();
    let garbage = fake_shim(dir2.path(), r#"echo 'not json' > "$2""#);
    let out = garbage.run(&program(), Duration::from_secs(10));
    assert!(out.tests.iter().all(|t| t.verdict == Verdict::Error));

    let dir3 = tempfile::tempdir().unwrap();
    let empty = fake_shim(dir3.path(), r#"echo '{"tests": [], "error": "no tests discovered"}' > "$2""#);
    let out = empty.run(&program(), Duration::from_secs(10));
    assert!(!out.all_passed);
}

#[test]
fn process_shim_scrubs_environment() {
    std::env::set_var("CTXBUG_TEST_SECRET", "leak");
    let dir = tempfile::tempdir().unwrap();
    let shim = fake_shim(
        dir.path(),
        r#"printf '{"tests": [{"name": "T.test_env", "verdict": "pass", "message": "%s|%s"}]}' "$CTXBUG_TEST_SECRET" "$(pwd)" > "$2""#,
    );
    let out = shim.run(&program(), Duration::from_secs(10));
    let msg = &out.tests[0].message;
    assert!(msg.starts_with('|'), "{msg}");
    assert!(!msg.contains(&std::env::current_dir().unwrap().to_string_lossy().to_string()));
}
