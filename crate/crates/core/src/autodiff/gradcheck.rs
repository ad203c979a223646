use super::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing autodiff gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter position, element index) of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares the gradients `f` produces through [`Tensor::backward`] with
/// central differences `(f(p+h) - f(p-h)) / 2h`, element by element.
///
/// The relative error of an element is `|ga - gn| / max(|ga|, |gn|, 1e-8)`.
/// Parameter values are restored before returning; their `grad` slots hold
/// the autodiff gradients afterwards.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::config(format!("grad_check step {h} outside [1e-7, 1e-3]")));
    }
    for p in params {
        if !p.requires_grad() || !p.is_leaf() {
            return Err(Error::config("grad_check parameters must be learnable leaves"));
        }
        p.zero_grad();
    }
    let loss = f()?;
    let base = loss.item()?;
    if !base.is_finite() {
        return Err(Error::numeric(format!("grad_check: f is not finite ({base})")));
    }
    loss.backward()?;

    let eval = || -> Result<f64> {
        let v = f()?.item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numeric(format!("grad_check: f is not finite ({v})")))
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let original = p.to_vec();
        for i in 0..original.len() {
            let mut probe = original.clone();
            probe[i] = original[i] + h;
            p.set_data(&probe)?;
            let plus = eval();
            probe[i] = original[i] - h;
            p.set_data(&probe)?;
            let minus = eval();
            p.set_data(&original)?;
            let numeric = (plus? - minus?) / (2.0 * h);
            let ga = analytic[i];
            let rel = (ga - numeric).abs() / ga.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = rel;
                report.worst = (pi, i);
                report.analytic = ga;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
