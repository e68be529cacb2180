//! Central finite-difference gradient checking.

use super::{Matrix, Tape, Tensor};

pub const DEFAULT_GRAD_CHECK_STEP: f64 = 1e-5;

/// Compares reverse-mode gradients of a scalar-valued function against
/// central finite differences, returning the worst relative error
/// `|a - n| / max(1e-8, |a| + |n|)` over all input coordinates.
///
/// `f` must be deterministic (disable dropout) and must return a scalar;
/// it is re-evaluated on a fresh tape for every probe.
pub fn grad_check<F>(f: F, inputs: &[Matrix], step: f64) -> f64
where
    F: Fn(&Tape, &[Tensor]) -> Tensor,
{
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|m| tape.leaf(m.clone(), true)).collect();
    let out = f(&tape, &leaves);
    assert_eq!(out.shape(), (1, 1), "grad_check needs a scalar output");
    out.backward();
    let analytic: Vec<Matrix> = leaves
        .iter()
        .zip(inputs)
        .map(|(leaf, m)| {
            leaf.grad()
                .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()))
        })
        .collect();

    let eval = |probe: &[Matrix]| -> f64 {
        let tape = Tape::new();
        let leaves: Vec<Tensor> = probe.iter().map(|m| tape.leaf(m.clone(), false)).collect();
        f(&tape, &leaves).item()
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for k in 0..inputs.len() {
        for idx in 0..inputs[k].len() {
            let orig = probe[k].data()[idx];
            probe[k].data_mut()[idx] = orig + step;
            let plus = eval(&probe);
            probe[k].data_mut()[idx] = orig - step;
            let minus = eval(&probe);
            probe[k].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[k].data()[idx];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}
