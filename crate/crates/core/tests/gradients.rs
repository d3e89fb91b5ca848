mod common;

use common::{gradient_suite, GRAD_TOL};

#[test]
fn every_op_matches_finite_differences() {
    let results = gradient_suite(0..25);
    for (name, err) in &results {
        println!("{name:<28} {err:.3e}");
    }
    let failing: Vec<_> = results.iter().filter(|(_, e)| *e > GRAD_TOL).collect();
    assert!(failing.is_empty(), "{failing:?}");
    assert!(results.len() >= 25, "suite covered only {} gradients", results.len());
}
