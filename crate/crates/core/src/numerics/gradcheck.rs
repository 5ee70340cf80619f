use crate::error::{Error, Result};

/// Fourth-order central-difference gradient of `f` at `point`, stepping
/// coordinate `i` by `h · max(1, |pᵢ|)`:
/// `(f(−2s) − 8f(−s) + 8f(s) − f(2s)) / 12s`.
pub fn numeric_gradient<F>(mut f: F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if h.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut p = point.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        let step = h * orig.abs().max(1.0);
        let mut at = |k: f64| {
            p[i] = orig + k * step;
            f(&p)
        };
        let (f2m, f1m, f1p, f2p) = (at(-2.0), at(-1.0), at(1.0), at(2.0));
        p[i] = orig;
        if ![f2m, f1m, f1p, f2p].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("objective not finite around coordinate {i}")));
        }
        out.push((8.0 * (f1p - f1m) - (f2p - f2m)) / (12.0 * step));
    }
    Ok(out)
}

/// Maximum elementwise relative error between `analytic` and a central
/// finite-difference gradient of `f`. The denominator of each ratio is
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, point: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != point.len() {
        return Err(Error::shape(format!(
            "{} analytic entries for {} coordinates",
            analytic.len(),
            point.len()
        )));
    }
    let numeric = numeric_gradient(f, point, h)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max))
}
