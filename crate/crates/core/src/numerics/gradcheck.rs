/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`
/// so that gradients which are zero up to rounding do not blow up the ratio.
/// Central differences with a 1e-5 step on unit-scale losses carry about
/// 1e-10 of rounding noise, which this floor keeps well below 1e-4.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares `analytic` with central differences of `f` around `point`,
/// element by element, and reports the worst relative error.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    step: f64,
) -> GradCheckReport {
    assert_eq!(point.len(), analytic.len(), "gradient length must match point");
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x);
        x[i] = orig - step;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_relative_error || i == 0 {
            report = GradCheckReport {
                max_relative_error: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let p = [1.0, -2.0, 0.5];
        let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        assert!(grad_check(f, &p, &g, 1e-5).max_relative_error < 1e-9);
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |x: &[f64]| x[0].sin();
        let r = grad_check(f, &[0.3], &[0.3f64.cos() * 1.01], 1e-5);
        assert!(r.max_relative_error > 5e-3);
    }
}
