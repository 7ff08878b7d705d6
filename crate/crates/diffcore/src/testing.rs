//! Central finite-difference gradient checking.

use crate::Tensor;

/// Central differences of a scalar function of several tensors, one
/// gradient tensor per input.
pub fn finite_difference(
    inputs: &[Tensor],
    step: f64,
    mut f: impl FnMut(&[Tensor]) -> f64,
) -> Vec<Tensor> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[t].shape());
        for i in 0..inputs[t].numel() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + step;
            let up = f(&work);
            work[t].data_mut()[i] = orig - step;
            let down = f(&work);
            work[t].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Largest relative error between two gradients, with an absolute floor
/// `floor` on the denominator so that near-zero entries compare absolutely.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
