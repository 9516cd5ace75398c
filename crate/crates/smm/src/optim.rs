//! Adam optimizer with bias correction.

use crate::error::{Result, SmmError};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First/second moment accumulators, one pair per parameter tensor.
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64, param_sizes: &[usize]) -> Self {
        AdamState {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One Adam update over a parameter set. `grads[i]` pairs with `params[i]`;
/// a `None` gradient leaves that parameter untouched (still counts the step).
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Option<Vec<f64>>],
    state: &mut AdamState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(SmmError::InvalidArgument(format!(
            "adam_step arity mismatch: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if g.len() != p.numel() {
                return Err(SmmError::InvalidArgument(format!(
                    "adam_step: grad {i} has {} elements, param has {}",
                    g.len(),
                    p.numel()
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(SmmError::NonFinite {
                    context: format!("gradient of parameter {i}"),
                });
            }
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let g = match g {
            Some(g) => g,
            None => continue,
        };
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.data[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params.clone();
        let mut state = AdamState::new(0.0025, &[3]);
        for _ in 0..5 {
            adam_step(&mut params, &[Some(vec![0.0; 3])], &mut state).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.step, 5);
    }

    #[test]
    fn first_step_magnitude() {
        // g = 1 at step 1: m_hat = 1, v_hat = 1, update = lr / (1 + eps)
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new(0.0025, &[1]);
        adam_step(&mut params, &[Some(vec![1.0])], &mut state).unwrap();
        let expected = -0.0025 * 1.0 / (1.0 + 1e-8);
        assert!((params[0].data[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut params = vec![Tensor::new(vec![2], vec![0.1, -0.4]).unwrap()];
            let mut state = AdamState::new(0.01, &[2]);
            for k in 0..20 {
                let g = vec![(k as f64).sin(), (k as f64).cos()];
                adam_step(&mut params, &[Some(g)], &mut state).unwrap();
            }
            params[0].data.clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut params = vec![Tensor::scalar(0.0), Tensor::scalar(0.0)];
        let mut state = AdamState::new(0.01, &[1, 1]);
        let err = adam_step(
            &mut params,
            &[Some(vec![0.0]), Some(vec![f64::NAN])],
            &mut state,
        )
        .unwrap_err();
        assert!(err.to_string().contains("parameter 1"));
    }
}
