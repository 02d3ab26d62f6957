use crate::rng::PiperRng;

/// Result of comparing an analytic gradient with central differences along
/// random unit directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub directions: usize,
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn max_relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks `f`'s gradient at `x0`. `f` returns the value and the analytic
/// gradient; the directional derivative `∇f·d` is compared against
/// `(f(x + h d) − f(x − h d)) / 2h` for `directions` random unit vectors.
pub fn grad_check<F>(x0: &[f64], mut f: F, h: f64, directions: usize, rng: &mut PiperRng) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, grad) = f(x0);
    assert_eq!(grad.len(), x0.len(), "gradient length must match the point");
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let mut d: Vec<f64> = (0..x0.len()).map(|_| rng.normal()).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        d.iter_mut().for_each(|v| *v /= norm);
        let analytic: f64 = grad.iter().zip(&d).map(|(g, v)| g * v).sum();
        let plus: Vec<f64> = x0.iter().zip(&d).map(|(x, v)| x + h * v).collect();
        let minus: Vec<f64> = x0.iter().zip(&d).map(|(x, v)| x - h * v).collect();
        let numeric = (f(&plus).0 - f(&minus).0) / (2.0 * h);
        worst = worst.max(max_relative_error(analytic, numeric));
    }
    GradCheckReport {
        max_relative_error: worst,
        directions,
    }
}
