mod common;

use common::grad_suite::{self, MAX_REL_ERR};

#[test]
fn analytic_gradients_match_central_differences() {
    let s = grad_suite::run(0);
    assert_eq!(s.probes.len(), 100);
    for p in &s.probes {
        assert!(p.report.checked > 0, "{} checked nothing", p.name);
    }
    let w = s.worst();
    assert!(
        s.max_rel_err() < MAX_REL_ERR,
        "{}: rel err {} at {:?}",
        w.name,
        w.report.max_rel_err,
        w.report.worst
    );
}
