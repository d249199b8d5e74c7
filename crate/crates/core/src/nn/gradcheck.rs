//! Finite-difference gradient checking for 64-bit tensors.

use rand::Rng;

use super::Tensor;

/// Uniform values in `[-1, 1)`.
pub fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape product")
}

/// Central-difference check of `grad` against `loss` at `x`.
///
/// Each element passes when its relative error over `|analytic| + |numeric| + 1e-8`
/// is at most 1e-3, or the absolute error is below 1e-7 (both near zero).
pub fn check_grad(
    x: &Tensor<f64>,
    grad: &Tensor<f64>,
    loss: impl Fn(&Tensor<f64>) -> f64,
) -> Result<(), String> {
    if x.shape() != grad.shape() {
        return Err(format!(
            "gradient shape {:?} for input {:?}",
            grad.shape(),
            x.shape()
        ));
    }
    let h = 1e-6;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let num = (loss(&xp) - loss(&xm)) / (2.0 * h);
        let ana = grad.data()[i];
        let rel = (num - ana).abs() / (num.abs() + ana.abs() + 1e-8);
        if rel > 1e-3 && (num - ana).abs() > 1e-7 {
            return Err(format!("index {i}: analytic {ana} numeric {num}"));
        }
    }
    Ok(())
}
