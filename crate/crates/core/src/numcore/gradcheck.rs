/// Central-difference gradient of `loss` at `params`, one scalar at a time.
pub fn finite_difference_gradient<F>(mut loss: F, params: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = loss(&probe);
            probe[i] = orig - eps;
            let minus = loss(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Denominator floor for gradient checks. Analytically zero entries still
/// carry finite-difference round-off of order `ulp(loss) / eps`.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
