use crate::nnet::ParamVector;

/// Central-difference verification of an analytic gradient. Returns the
/// maximum over coordinates of |analytic - numeric| / (|numeric| + 1e-8).
pub fn finite_diff_check<F>(
    mut loss: F,
    params: &ParamVector,
    analytic: &ParamVector,
    h: f64,
) -> f64
where
    F: FnMut(&ParamVector) -> f64,
{
    assert!(h > 0.0);
    assert_eq!(params.len(), analytic.len());
    let mut work = params.clone();
    let mut max_rel = 0.0f64;
    for i in 0..params.len() {
        let orig = work.0[i];
        work.0[i] = orig + h;
        let plus = loss(&work);
        work.0[i] = orig - h;
        let minus = loss(&work);
        work.0[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (analytic.0[i] - numeric).abs() / (numeric.abs() + 1e-8);
        max_rel = max_rel.max(rel);
    }
    max_rel
}
