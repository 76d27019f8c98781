/// Largest relative disagreement between the analytic gradient returned by
/// `loss_fn` at `params` and a central-difference estimate with step `h`.
///
/// `loss_fn` maps a flat parameter vector to `(value, gradient)`. Relative
/// error is `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn grad_check<F>(loss_fn: F, params: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    grad_check_report(loss_fn, params, h).max_rel_error
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Index of the worst parameter, if any parameter was checked.
    pub worst_index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn grad_check_report<F>(mut loss_fn: F, params: &[f64], h: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let (_, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match parameter count");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = params.to_vec();
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let (plus, _) = loss_fn(&probe);
        probe[i] = params[i] - h;
        let (minus, _) = loss_fn(&probe);
        probe[i] = params[i];
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        let rel = (a - numeric).abs() / denom;
        // NaN compares false; treat it as the worst possible error.
        if rel > report.max_rel_error || rel.is_nan() {
            report = GradCheckReport {
                max_rel_error: if rel.is_nan() { f64::INFINITY } else { rel },
                worst_index: Some(i),
                analytic: a,
                numeric,
            };
        }
    }
    report
}
