use crate::error::{Error, Result};

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
    pub max_rel_error: f64,
    /// Coordinate where the worst disagreement occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Checks the gradient returned by `f` at `theta` against central
/// differences with step `h`. `f` returns `(value, gradient)`.
pub fn grad_check<F>(mut f: F, theta: &[f64], h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(theta);
    grad_check_with(|x| f(x).0, &analytic, theta, h)
}

/// Like [`grad_check`] with a value-only closure and a precomputed gradient.
pub fn grad_check_with<F>(value: F, analytic: &[f64], theta: &[f64], h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::Config(format!("finite-difference step {h} outside [1e-6, 1e-4]")));
    }
    if analytic.len() != theta.len() {
        return Err(Error::Input(format!(
            "gradient has {} coordinates, parameters have {}",
            analytic.len(),
            theta.len()
        )));
    }
    let all: Vec<usize> = (0..theta.len()).collect();
    grad_check_coords(value, analytic, theta, h, &all)
}

/// Like [`grad_check_with`], restricted to the listed coordinates.
pub fn grad_check_coords<F>(
    mut value: F,
    analytic: &[f64],
    theta: &[f64],
    h: f64,
    coords: &[usize],
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::Config(format!("finite-difference step {h} outside [1e-6, 1e-4]")));
    }
    if analytic.len() != theta.len() {
        return Err(Error::Input("gradient and parameter lengths differ".into()));
    }
    let mut probe = theta.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    for &i in coords {
        probe[i] = theta[i] + h;
        let plus = value(&probe);
        probe[i] = theta[i] - h;
        let minus = value(&probe);
        probe[i] = theta[i];
        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        if err > report.max_rel_error || !err.is_finite() {
            report = GradCheckReport { max_rel_error: err, worst_index: i, analytic: analytic[i], numeric };
        }
    }
    Ok(report)
}
