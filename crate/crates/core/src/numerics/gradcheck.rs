use std::fmt;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference comparison of reverse-mode gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error over its coordinates)`.
    pub per_param: Vec<(String, f64)>,
    pub eps: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>12}", "parameter", "max rel err")?;
        for (name, err) in &self.per_param {
            let flag = if *err < self.tolerance { "" } else { "  FAIL" };
            writeln!(f, "{name:<28} {err:>12.3e}{flag}")?;
        }
        write!(
            f,
            "eps={:e} tol={:e} -> {}",
            self.eps,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (1e-8f64).max(analytic.abs() + numeric.abs())
}

/// Compare `analytic` gradients of `f` at `params` against central
/// differences with step `eps`, coordinate by coordinate.
pub fn grad_check<F>(
    f: F,
    names: &[String],
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    assert_eq!(params.len(), analytic.len());
    assert_eq!(params.len(), names.len());
    let mut work = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut worst = 0.0f64;
        for i in 0..params[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let plus = f(&work)?;
            work[p].data_mut()[i] = orig - eps;
            let minus = f(&work)?;
            work[p].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective not finite while perturbing {}[{i}]",
                    names[p]
                )));
            }
            let fd = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[p].data()[i], fd));
        }
        per_param.push((names[p].clone(), worst));
    }
    let pass = per_param.iter().all(|(_, e)| *e < tolerance);
    Ok(GradCheckReport {
        per_param,
        eps,
        tolerance,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = vec![Tensor::row_vector(&[1.0, 2.0])];
        let g = vec![Tensor::row_vector(&[2.0, 4.0])];
        let report = grad_check(
            |p| Ok(p[0].sum_squares()),
            &["x".to_string()],
            &x,
            &g,
            1e-5,
            1e-7,
        )
        .unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn wrong_gradient_fails() {
        let x = vec![Tensor::row_vector(&[1.0, 2.0])];
        let g = vec![Tensor::row_vector(&[2.0, 5.0])];
        let report = grad_check(|p| Ok(p[0].sum_squares()), &["x".into()], &x, &g, 1e-5, 1e-4)
            .unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = vec![Tensor::row_vector(&[0.0])];
        let g = vec![Tensor::row_vector(&[0.0])];
        let r = grad_check(|p| Ok(1.0 / p[0].data()[0].abs().min(0.0)), &["x".into()], &x, &g, 1e-5, 1e-4);
        assert!(r.is_err());
    }
}
