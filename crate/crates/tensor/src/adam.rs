use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Adam with bias correction over a fixed, ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub moments: Vec<Moments>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor], learning_rate: f64, beta1: f64, beta2: f64) -> AdamState {
        let moments = params
            .iter()
            .map(|p| Moments {
                first: vec![0.0; p.numel()],
                second: vec![0.0; p.numel()],
            })
            .collect();
        AdamState {
            moments,
            step_count: 0,
            beta1,
            beta2,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// One Adam update of every parameter, then clears their gradients.
///
/// All parameters are checked before any is modified, so a missing
/// gradient leaves both the parameters and the state untouched.
pub fn adam_step(params: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.moments.len() {
        return Err(TensorError::Contract(format!(
            "adam: {} params but state tracks {}",
            params.len(),
            state.moments.len()
        )));
    }
    let mut grads = Vec::with_capacity(params.len());
    for (i, (p, m)) in params.iter().zip(&state.moments).enumerate() {
        let g = p
            .grad()
            .ok_or_else(|| TensorError::Contract(format!("adam: parameter {i} has no gradient")))?;
        if m.first.len() != p.numel() {
            return Err(TensorError::Contract(format!(
                "adam: moment length {} does not match parameter {i} of size {}",
                m.first.len(),
                p.numel()
            )));
        }
        grads.push(g);
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, m), g) in params.iter().zip(state.moments.iter_mut()).zip(grads) {
        p.update_data(|w| {
            for (((w, g), m1), m2) in w
                .iter_mut()
                .zip(&g)
                .zip(m.first.iter_mut())
                .zip(m.second.iter_mut())
            {
                *m1 = b1 * *m1 + (1.0 - b1) * g;
                *m2 = b2 * *m2 + (1.0 - b2) * g * g;
                let m_hat = *m1 / c1;
                let v_hat = *m2 / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
        p.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let w = Tensor::param(&[1], vec![0.0]).unwrap();
        let mut st = AdamState::new(std::slice::from_ref(&w), 0.1, 0.9, 0.999);
        w.accumulate_grad(&[1.0]);
        adam_step(std::slice::from_ref(&w), &mut st).unwrap();
        assert!((w.to_vec()[0] + 0.1).abs() < 1e-8);
        assert!(w.grad().is_none());
    }

    #[test]
    fn zero_gradient_leaves_param_and_counts_step() {
        let w = Tensor::param(&[2], vec![0.5, -1.5]).unwrap();
        let mut st = AdamState::new(std::slice::from_ref(&w), 0.1, 0.0, 0.99);
        w.accumulate_grad(&[0.0, 0.0]);
        adam_step(std::slice::from_ref(&w), &mut st).unwrap();
        assert_eq!(w.to_vec(), vec![0.5, -1.5]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let w = Tensor::param(&[1], vec![0.0]).unwrap();
        let mut st = AdamState::new(std::slice::from_ref(&w), 0.1, 0.9, 0.999);
        let err = adam_step(std::slice::from_ref(&w), &mut st).unwrap_err();
        assert!(matches!(err, TensorError::Contract(_)));
        assert_eq!(st.step_count, 0);
    }

    #[test]
    fn quadratic_descent_converges() {
        let w = Tensor::param(&[1], vec![0.0]).unwrap();
        let mut st = AdamState::new(std::slice::from_ref(&w), 0.1, 0.9, 0.999);
        for _ in 0..100 {
            let d = w.add_scalar(-3.0);
            d.mul(&d).unwrap().sum(None).unwrap().backward().unwrap();
            adam_step(std::slice::from_ref(&w), &mut st).unwrap();
        }
        assert!((w.to_vec()[0] - 3.0).abs() < 0.1, "w = {:?}", w.to_vec());
    }
}
