//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Keeps the moments of the items flagged in `keep`, each item owning
    /// `width` consecutive parameters.
    pub fn retain(&mut self, keep: &[bool], width: usize) {
        let filter = |xs: &[f64]| -> Vec<f64> {
            xs.chunks(width).zip(keep).filter(|(_, k)| **k).flat_map(|(c, _)| c.iter().copied()).collect()
        };
        self.m = filter(&self.m);
        self.v = filter(&self.v);
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::LengthMismatch { expected: params.len(), got: grads.len().min(state.len()) });
    }
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - BETA2.powi(state.step.min(i32::MAX as u64) as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = [1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(p, [1.0, -2.0]);
        let mut s = AdamState { m: vec![0.5, -0.5], v: vec![0.2, 0.1], step: 3 };
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(s.m, [0.5 * BETA1, -0.5 * BETA1]);
        assert_eq!(s.v, [0.2 * BETA2, 0.1 * BETA2]);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let mut p = [0.3];
        let mut s = AdamState::new(1);
        let g = -0.02;
        adam_step(&mut p, &[g], &mut s, 0.01).unwrap();
        // m_hat = g and v_hat = g^2 after one step.
        let expect = 0.3 - 0.01 * g / (g.abs() + EPSILON);
        assert!((p[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        let mut last = 0.0;
        for _ in 0..1000 {
            let before = p[0];
            adam_step(&mut p, &[3.0], &mut s, 0.01).unwrap();
            last = before - p[0];
        }
        assert!((last - 0.01).abs() < 0.01 * 0.01);
        assert!(adam_step(&mut p, &[1.0, 2.0], &mut s, 0.01).is_err());
    }

    #[test]
    fn retain_drops_whole_items() {
        let mut s = AdamState { m: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], v: vec![0.0; 6], step: 2 };
        s.retain(&[true, false, true], 2);
        assert_eq!(s.m, [1.0, 2.0, 5.0, 6.0]);
        assert_eq!(s.len(), 4);
    }
}
