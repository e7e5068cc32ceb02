use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

/// Compares reverse-mode gradients of `f` at `x` against central
/// differences with step `h`. Returns the largest
/// `|g_ad − g_fd| / max(1, |g_ad|, |g_fd|)` over coordinates.
///
/// `f` receives a fresh trainable leaf holding the probe values and must
/// return a single-element tensor.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let base = x.to_vec();
    let probe = Tensor::param(x.shape(), base.clone())?;
    f(&probe)?.backward()?;
    let analytic = probe.grad().unwrap_or_else(|| vec![0.0; base.len()]);

    let eval = |values: Vec<f64>| -> Result<f64> {
        let t = Tensor::new(x.shape(), values)?;
        no_grad(|| f(&t))?.item()
    };
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let ad = analytic[i];
        let err = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
