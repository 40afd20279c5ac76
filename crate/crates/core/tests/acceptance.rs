//! The twelve acceptance criteria, one pass/fail line each.

use helmsort::validation::{run_criterion, NAMES};

const SEED: u64 = 20240601;

#[test]
fn acceptance_criteria() {
    let mut failed = Vec::new();
    for id in 1..=NAMES.len() as u8 {
        let outcome = run_criterion(id, SEED);
        println!("{}", outcome.line());
        if !outcome.passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
