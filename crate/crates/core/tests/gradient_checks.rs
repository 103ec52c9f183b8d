//! Finite-difference validation of every differentiable op and the
//! end-to-end network, plus backward-pass structural properties.

use lgsa_core::gradcheck::{gradcheck_suite, CheckScale};

#[test]
fn suite_passes_at_tiny_scale() {
    let start = std::time::Instant::now();
    let report = gradcheck_suite(CheckScale::Tiny);
    let elapsed = start.elapsed().as_secs_f64();
    let failed: Vec<_> = report.checks.iter().filter(|c| !c.pass()).collect();
    assert!(
        failed.is_empty(),
        "gradient checks failed:\n{}",
        failed
            .iter()
            .map(|c| format!("  {} err {:.3e} tol {:.1e}", c.name, c.max_rel_err, c.tolerance))
            .collect::<Vec<_>>()
            .join("\n")
    );
    // The whole per-op + end-to-end sweep has a five-minute budget.
    assert!(elapsed < 300.0, "suite took {elapsed:.1}s");
    println!(
        "gradcheck tiny: {} checks passed in {elapsed:.1}s",
        report.checks.len()
    );
}
