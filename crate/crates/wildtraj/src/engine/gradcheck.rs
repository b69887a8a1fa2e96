//! Central finite-difference verification of backward gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Compare backward gradients of `f` (a scalar-valued graph builder over
/// the given leaf tensors) against central differences with step `h`.
/// Elements with both |analytic| and |numeric| below 1e-8 are skipped.
///
/// `f` is invoked many times and must be deterministic: re-seed any RNG it
/// uses on every call.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    gradcheck_with_skip(inputs, h, 1e-8, f)
}

/// [`gradcheck`] with a configurable skip threshold. Deep compositions
/// produce some gradients so small that central differences bottom out in
/// roundoff; raising the threshold excludes those elements while still
/// checking everything of consequence.
pub fn gradcheck_with_skip<F>(
    inputs: &[Tensor<f64>],
    h: f64,
    skip_below: f64,
    f: F,
) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };

    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out);
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad_of(&grads, v)
                .unwrap_or_else(|| Tensor::zeros(t.shape.clone()))
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        for ei in 0..tensor.numel() {
            let orig = tensor.data[ei];
            work[ti].data[ei] = orig + h;
            let fp = eval(&work);
            work[ti].data[ei] = orig - h;
            let fm = eval(&work);
            work[ti].data[ei] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[ti].data[ei];
            if a.abs() < skip_below && numeric.abs() < skip_below {
                report.skipped += 1;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
            }
        }
    }
    report
}
