/// Gradients whose finite-difference estimate is smaller than this are
/// compared in absolute rather than relative terms.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `loss` around `params`.
///
/// The error per coordinate is `|analytic - numeric| / max(|numeric|, GRADCHECK_FLOOR)`.
pub fn finite_diff_check<F>(mut loss: F, params: &[f64], analytic: &[f64], step: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut probe = params.to_vec();
    let mut worst = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: params.len(),
    };
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let up = loss(&probe);
        probe[i] = params[i] - step;
        let down = loss(&probe);
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(GRADCHECK_FLOOR);
        if !(err <= worst.max_rel_error) {
            worst.max_rel_error = err;
            worst.worst_index = i;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_is_exact() {
        let c = [0.5, -2.0, 3.25, 1.0];
        let f = |p: &[f64]| p.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        let r = finite_diff_check(f, &[0.1, 0.2, -0.3, 0.4], &c, 1e-5);
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn doubled_gradient_is_detected() {
        let f = |p: &[f64]| p[0].sin() + p[1] * p[1];
        let p: [f64; 2] = [0.3, 0.7];
        let bad = [2.0 * p[0].cos(), 2.0 * 2.0 * p[1]];
        let r = finite_diff_check(f, &p, &bad, 1e-5);
        assert!((r.max_rel_error - 1.0).abs() < 1e-6, "{r:?}");
    }
}
