//! Central finite-difference comparison for analytic gradients.

/// Probe step for central differences.
pub const EPSILON: f64 = 1e-5;

/// Relative error with an absolute floor so near-zero gradients compare
/// sanely: `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Largest relative error between `analytic` and the central-difference
/// gradient of `f` at `x`. `f` is re-evaluated with one coordinate nudged
/// by `EPSILON` in each direction; `x` is restored after every probe.
pub fn max_rel_err<F>(mut f: F, x: &[f64], analytic: &[f64]) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..probe.len() {
        let keep = probe[i];
        probe[i] = keep + EPSILON;
        let hi = f(&probe);
        probe[i] = keep - EPSILON;
        let lo = f(&probe);
        probe[i] = keep;
        let numeric = (hi - lo) / (2.0 * EPSILON);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}
