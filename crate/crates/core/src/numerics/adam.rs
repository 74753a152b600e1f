use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam hyper-parameters. Defaults follow the training protocol: learning rate
/// 1e-4, gradient decay 0.9, squared-gradient decay 0.99.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment accumulators, one buffer per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments shaped like `group_lens`.
    pub fn new(config: AdamConfig, group_lens: &[usize]) -> Self {
        AdamState {
            config,
            step: 0,
            m: group_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: group_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn group_lens(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }
}

/// One bias-corrected Adam update over all parameter groups.
pub fn adam_step<T: Scalar>(params: &mut [&mut [T]], grads: &[Vec<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::rejected(format!(
            "adam got {} parameter groups, {} gradient groups, state has {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::rejected(format!(
                "adam group {i}: {} params, {} grads, {} moments",
                p.len(),
                g.len(),
                state.m[i].len()
            )));
        }
    }

    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let bc1 = one - T::of(cfg.beta1.powi(t));
    let bc2 = one - T::of(cfg.beta2.powi(t));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.epsilon);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = vec![1.0f64, -2.0, 3.5];
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), &[3]);
        for _ in 0..5 {
            adam_step(&mut [&mut p[..]], &[vec![0.0; 3]], &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut p = [0.0f64, 0.0];
        let mut st = AdamState::new(cfg, &[2]);
        adam_step(&mut [&mut p[..]], &[vec![3.0, -0.25]], &mut st).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn three_steps_on_quadratic_match_scalar_oracle() {
        // f(x) = (x - 3)^2, grad 2(x - 3).
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
        };
        let mut x = [0.5f64];
        let mut st = AdamState::new(cfg, &[1]);

        let (mut ox, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * (x[0] - 3.0);
            adam_step(&mut [&mut x[..]], &[vec![g]], &mut st).unwrap();

            let og = 2.0 * (ox - 3.0);
            m = 0.9 * m + 0.1 * og;
            v = 0.99 * v + 0.01 * og * og;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.99f64.powi(t));
            ox -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((x[0] - ox).abs() < 1e-12, "step {t}: {} vs {ox}", x[0]);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = [0.0f64; 2];
        let mut st = AdamState::new(AdamConfig::default(), &[2]);
        assert!(adam_step(&mut [&mut p[..]], &[vec![0.0; 3]], &mut st).is_err());
        assert!(adam_step(&mut [&mut p[..]], &[], &mut st).is_err());
        assert_eq!(st.step, 0);
    }
}
