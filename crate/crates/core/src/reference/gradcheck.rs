//! Central finite differences for gradient verification.

/// (f(x + h) - f(x - h)) / 2h around a single scalar degree of freedom.
pub fn central_difference<F>(mut eval: F, x: f64, h: f64) -> f64
where
    F: FnMut(f64) -> f64,
{
    (eval(x + h) - eval(x - h)) / (2.0 * h)
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / scale
}
