//! Finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Builds a scalar loss on the given tape from leaf tensors registered for
/// the caller. Must be deterministic in its inputs.
pub trait LossFn {
    fn eval(&self, tape: &mut Tape, params: &[Tensor]) -> Result<Tensor>;
}

impl<F> LossFn for F
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
{
    fn eval(&self, tape: &mut Tape, params: &[Tensor]) -> Result<Tensor> {
        self(tape, params)
    }
}

/// Compare the analytic gradient of `f` against central finite differences
/// over every coordinate of every parameter. Returns the max over
/// coordinates of |analytic − central| / max(1, |analytic|).
pub fn grad_check<F: LossFn>(f: &F, params: &[Tensor], eps: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "grad_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }

    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = params.iter().map(|p| tape.param(p)).collect();
    let root = f.eval(&mut tape, &leaves)?;
    let grads = tape.backward(&root)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| {
            grads
                .wrt(l)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; l.numel()])
        })
        .collect();

    let eval_at = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<Tensor> = ps.iter().map(|p| tape.constant(p)).collect();
        let root = f.eval(&mut tape, &leaves)?;
        root.item()
    };

    let mut max_err: f64 = 0.0;
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.numel() {
            let mut plus: Vec<Tensor> = params.to_vec();
            plus[pi].data_mut()[ci] += eps;
            let mut minus: Vec<Tensor> = params.to_vec();
            minus[pi].data_mut()[ci] -= eps;
            let fp = eval_at(&plus)?;
            let fm = eval_at(&minus)?;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite { op: "grad_check" });
            }
            let central = (fp - fm) / (2.0 * eps);
            let a = analytic[pi][ci];
            let err = (a - central).abs() / a.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}
