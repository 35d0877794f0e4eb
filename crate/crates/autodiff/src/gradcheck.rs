//! Central finite-difference verification of tape gradients.

use crate::error::{AutodiffError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Gradient magnitudes below this are compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over every element of every input.
    pub max_rel_error: f64,
    /// Largest relative error per input.
    pub per_input: Vec<f64>,
    /// `(input, element)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares tape gradients of the scalar function `f` against central
/// differences with step `h` at every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if h <= 0.0 {
        return Err(AutodiffError::invalid("grad_check", "step must be positive"));
    }
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    if out.value().numel() != 1 {
        return Err(AutodiffError::NonScalar(out.shape()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get_or_zeros(*v)).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut per_input = vec![0.0; inputs.len()];
    let mut worst = None;
    let mut max_rel_error: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        for e in 0..inputs[i].numel() {
            let orig = inputs[i].data()[e];
            work[i].data_mut()[e] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[i].data()[e], numeric);
            if err > per_input[i] {
                per_input[i] = err;
            }
            if err > max_rel_error || worst.is_none() {
                max_rel_error = max_rel_error.max(err);
                if err >= max_rel_error {
                    worst = Some((i, e));
                }
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        per_input,
        worst,
        tolerance: tol,
        passed: max_rel_error <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let tape = Tape::new();
        let v = tape.leaf(x.clone());
        let y = v.mul(v).unwrap().sum_all();
        assert_eq!(tape.backward(y).unwrap().get(v).unwrap().data(), &[2.0, 4.0]);

        let report = grad_check(|_, xs| Ok(xs[0].mul(xs[0])?.sum_all()), &[x], 1e-5, 1e-6).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn rejects_vector_output() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(grad_check(|_, xs| Ok(xs[0].exp()), &[x], 1e-5, 1e-6).is_err());
    }
}
