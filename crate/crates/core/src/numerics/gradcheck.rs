use crate::scalar::Scalar;

/// Gradients smaller than this are compared in absolute rather than relative
/// terms, so rounding noise on near-zero entries does not dominate.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `analytic` against central differences of `loss_fn` at `params`.
///
/// Relative error per coordinate is `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`;
/// the worst coordinate is reported.
pub fn finite_diff_check<T: Scalar>(
    mut loss_fn: impl FnMut(&[T]) -> T,
    params: &[T],
    analytic: &[T],
    h: T,
) -> GradCheckReport {
    assert_eq!(
        params.len(),
        analytic.len(),
        "params and analytic gradient differ in length"
    );
    assert!(h > T::zero(), "finite-difference step must be positive");
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let two_h = (h + h).to_f64_lossy();
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = loss_fn(&probe).to_f64_lossy();
        probe[i] = orig - h;
        let minus = loss_fn(&probe).to_f64_lossy();
        probe[i] = orig;
        let numeric = (plus - minus) / two_h;
        let a = analytic[i].to_f64_lossy();
        let denom = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_relative_error || !rel.is_finite() {
            report = GradCheckReport {
                max_relative_error: rel,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    report
}
