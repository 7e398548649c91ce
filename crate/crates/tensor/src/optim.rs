use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for a parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

fn check_shapes(params: &[Tensor], grads: &[Tensor], op: &'static str) -> Result<()> {
    if params.len() != grads.len() {
        return Err(TensorError::shape(op, &[params.len()], &[grads.len()]));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TensorError::shape(op, p.shape(), g.shape()));
        }
    }
    Ok(())
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    check_shapes(params, grads, "adam_step")?;
    check_shapes(params, &state.first, "adam_step")?;
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first[k].data_mut();
        let v = state.second[k].data_mut();
        for (i, (pi, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `params ← params − lr·grads`, in place.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
    check_shapes(params, grads, "sgd_step")?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (pi, gi) in p.data_mut().iter_mut().zip(g.data()) {
            *pi -= lr * gi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut params = vec![Tensor::vector(vec![0.5, -0.5])];
        let grads = vec![Tensor::vector(vec![1.0, -3.0])];
        let mut state = AdamState::new(&params, AdamConfig::default());
        adam_step(&mut params, &grads, &mut state).unwrap();
        let d = params[0].data();
        assert!((d[0] - (0.5 - 0.001)).abs() < 1e-10);
        assert!((d[1] - (-0.5 + 0.001)).abs() < 1e-10);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = vec![Tensor::vector(vec![0.25, 4.0])];
        let before = params.clone();
        let grads = vec![Tensor::zeros(&[2])];
        let mut state = AdamState::new(&params, AdamConfig::default());
        for _ in 0..3 {
            adam_step(&mut params, &grads, &mut state).unwrap();
        }
        assert_eq!(params, before);
        sgd_step(&mut params, &grads, 0.1).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn sgd_arithmetic() {
        let mut params = vec![Tensor::vector(vec![1.0])];
        sgd_step(&mut params, &[Tensor::vector(vec![2.0])], 0.5).unwrap();
        assert_eq!(params[0].data(), &[0.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::vector(vec![1.0, 2.0])];
        let grads = vec![Tensor::vector(vec![1.0])];
        assert!(matches!(
            sgd_step(&mut params, &grads, 0.1),
            Err(TensorError::Shape { op: "sgd_step", .. })
        ));
        let mut state = AdamState::new(&params, AdamConfig::default());
        assert!(adam_step(&mut params, &grads, &mut state).is_err());
    }
}
