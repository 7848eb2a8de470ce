mod common;

use common::grad_suite::{cases, run_case};

#[test]
fn every_primitive_and_path_matches_finite_differences() {
    let mut failed = Vec::new();
    for case in cases() {
        let (ok, why) = run_case(&case, 20);
        if !ok {
            failed.push(format!("{}: {why}", case.0));
        }
    }
    assert!(failed.is_empty(), "{failed:#?}");
}
