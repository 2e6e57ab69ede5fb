//! Acceptance check for the command-line driver: the selftest is fast and
//! byte-for-byte deterministic across invocations.

use std::process::Command;
use std::time::Instant;

#[test]
fn a10_selftest_is_byte_identical_and_fast() {
    let bin = env!("CARGO_BIN_EXE_crf");
    let start = Instant::now();
    let first = Command::new(bin).arg("selftest").output().expect("run selftest");
    let second = Command::new(bin).arg("selftest").output().expect("run selftest");
    let elapsed = start.elapsed().as_secs_f64();

    let both_pass = first.status.code() == Some(0) && second.status.code() == Some(0);
    let identical = first.stdout == second.stdout && first.stderr == second.stderr;
    let fast = elapsed < 60.0;
    let ok = both_pass && identical && fast;
    println!(
        "acceptance 10: {} -- selftest exit codes ({:?}, {:?}), byte-identical = {identical}, \
         two runs in {elapsed:.2} s (budget 60 s)",
        if ok { "PASS" } else { "FAIL" },
        first.status.code(),
        second.status.code(),
    );
    assert!(
        ok,
        "selftest determinism failed: codes {:?}/{:?}, identical {identical}, {elapsed:.2} s\nstdout:\n{}",
        first.status.code(),
        second.status.code(),
        String::from_utf8_lossy(&first.stdout)
    );
}
