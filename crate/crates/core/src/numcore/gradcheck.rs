//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Added to every analytic gradient entry before comparison. Only used
    /// to build negative controls; leave at 0 otherwise.
    pub analytic_bias: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            tol: 1e-4,
            analytic_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input index, element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            g.shape(out)
        )));
    }
    Ok(g.scalar(out))
}

/// Compares the analytic gradient of `f` against
/// `(f(x + eps) - f(x - eps)) / (2 eps)` for every entry of every input.
///
/// The relative error of an entry is `|a - n| / max(1, |a| + |n|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(cfg.eps > 0.0 && cfg.eps <= 1e-3) {
        return Err(Error::Contract(format!("eps {} outside (0, 1e-3]", cfg.eps)));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheckReport {
        passed: true,
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[i].len());
        for k in 0..inputs[i].len() {
            let orig = inputs[i].values()[k];
            work[i].values_mut()[k] = orig + cfg.eps;
            let plus = evaluate(&f, &work)?;
            work[i].values_mut()[k] = orig - cfg.eps;
            let minus = evaluate(&f, &work)?;
            work[i].values_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic[k] + cfg.analytic_bias;
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1.0);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((i, k));
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_one() {
        let r = grad_check(
            |g, v| g.mul(v[0], v[0]),
            &[Tensor::scalar(1.0)],
            GradCheckConfig {
                eps: 1e-5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error < 1e-9, "{}", r.max_rel_error);
    }

    #[test]
    fn non_scalar_is_contract_error() {
        let r = grad_check(
            |g, v| Ok(g.scale(v[0], 2.0)),
            &[Tensor::vector(vec![1.0, 2.0])],
            GradCheckConfig::default(),
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let r = grad_check(
            |g, v| Ok(g.sum(v[0])),
            &[Tensor::scalar(1.0)],
            GradCheckConfig {
                eps: 0.1,
                ..Default::default()
            },
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn biased_gradient_fails() {
        let r = grad_check(
            |g, v| g.mul(v[0], v[0]),
            &[Tensor::scalar(1.0)],
            GradCheckConfig {
                analytic_bias: 0.01,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!r.passed);
    }
}
