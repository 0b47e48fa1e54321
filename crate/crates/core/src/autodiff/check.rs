/// Outcome of comparing a gradient against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Coordinate attaining the maximum.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Largest relative deviation between `grad` and the central differences
/// `(f(θ+h·eᵢ) − f(θ−h·eᵢ))/2h`.
///
/// The relative error of coordinate `i` is
/// `|gᵢ − dᵢ| / max(|gᵢ|, |dᵢ|, 1e-3·‖g‖∞, 1e-12)`. The floor keeps
/// coordinates whose derivative is orders of magnitude below the largest
/// one from being dominated by the O(ε·|f|/h) rounding of the difference
/// quotient.
pub fn finite_diff_check(
    mut loss_fn: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    grad: &[f64],
    h: f64,
) -> FdReport {
    compare(params, grad, |theta, i| {
        let x = theta[i];
        theta[i] = x + h;
        let fp = loss_fn(theta);
        theta[i] = x - h;
        let fm = loss_fn(theta);
        theta[i] = x;
        (fp - fm) / (2.0 * h)
    })
}

/// [`finite_diff_check`] with the five-point central stencil
/// `(f(θ−2h) − 8f(θ−h) + 8f(θ+h) − f(θ+2h))/12h`, whose O(h⁴) truncation
/// allows larger steps on functions with rounding noise.
pub fn finite_diff_check_5pt(
    mut loss_fn: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    grad: &[f64],
    h: f64,
) -> FdReport {
    compare(params, grad, |theta, i| {
        let x = theta[i];
        let mut at = |d: f64| {
            theta[i] = x + d;
            loss_fn(theta)
        };
        let (f2m, f1m, f1p, f2p) = (at(-2.0 * h), at(-h), at(h), at(2.0 * h));
        theta[i] = x;
        (f2m - 8.0 * f1m + 8.0 * f1p - f2p) / (12.0 * h)
    })
}

fn compare(
    params: &[f64],
    grad: &[f64],
    mut derivative: impl FnMut(&mut [f64], usize) -> f64,
) -> FdReport {
    assert_eq!(
        params.len(),
        grad.len(),
        "gradient length differs from parameter count"
    );
    let g_inf = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-3 * g_inf).max(1e-12);
    let mut theta = params.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: grad.first().copied().unwrap_or(0.0),
        numeric: 0.0,
    };
    for i in 0..params.len() {
        let numeric = derivative(&mut theta, i);
        let denom = grad[i].abs().max(numeric.abs()).max(floor);
        let err = (grad[i] - numeric).abs() / denom;
        if err > report.max_rel_error || !err.is_finite() {
            report = FdReport {
                max_rel_error: if err.is_finite() { err } else { f64::INFINITY },
                worst_index: i,
                analytic: grad[i],
                numeric,
            };
        }
    }
    report
}
