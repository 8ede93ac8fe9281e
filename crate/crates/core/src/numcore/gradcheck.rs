//! Central-difference gradient checking.

use crate::error::{Error, Result};

use super::matrix::Matrix;
use super::tape::{Tape, Var};

/// Compares reverse-mode gradients of a scalar function with central
/// differences.
///
/// `f` receives a fresh tape and one tracked leaf per entry of `params`
/// and must return a scalar. The result is the maximum over all parameter
/// entries of `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(mut f: F, params: &[Matrix], step: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Contract(format!("step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    check_finite(tape.value(root))?;
    tape.backward(root)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| {
            tape.grad(*v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols()))
        })
        .collect();

    let mut eval = |perturbed: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| tape.param(p.clone())).collect();
        let root = f(&mut tape, &vars)?;
        check_finite(tape.value(root))
    };

    let mut work: Vec<Matrix> = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, param) in params.iter().enumerate() {
        for e in 0..param.len() {
            let original = param.as_slice()[e];
            work[pi].as_mut_slice()[e] = original + step;
            let plus = eval(&work)?;
            work[pi].as_mut_slice()[e] = original - step;
            let minus = eval(&work)?;
            work[pi].as_mut_slice()[e] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic[pi].as_slice()[e] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn check_finite(value: &Matrix) -> Result<f64> {
    let v = value
        .item()
        .ok_or_else(|| Error::Contract(format!("objective must be scalar, got {:?}", value.shape())))?;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {v}")));
    }
    Ok(v)
}
