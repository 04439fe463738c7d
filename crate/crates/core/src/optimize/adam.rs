//! Adaptive-moment updates over per-primitive flat parameter vectors.

use serde::{Deserialize, Serialize};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// First and second moments, one vector per primitive, in parameter layout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: impl Iterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes.map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { step: 0, m, v }
    }

    pub fn push(&mut self, n: usize) {
        self.m.push(vec![0.0; n]);
        self.v.push(vec![0.0; n]);
    }

    /// Keeps the moments of primitives where `keep` is true.
    pub fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.m.retain(|_| *it.next().expect("mask length"));
        let mut it = keep.iter();
        self.v.retain(|_| *it.next().expect("mask length"));
    }

    pub fn reset(&mut self) {
        self.step = 0;
        for x in self.m.iter_mut().chain(self.v.iter_mut()) {
            x.iter_mut().for_each(|e| *e = 0.0);
        }
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// In-place update of one primitive's parameters; `lr(k)` gives the rate of entry `k`.
    pub fn update(&mut self, index: usize, params: &mut [f64], grad: &[f64], lr: impl Fn(usize) -> f64) {
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let (m, v) = (&mut self.m[index], &mut self.v[index]);
        for k in 0..params.len() {
            let g = grad[k];
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            params[k] -= lr(k) * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = AdamState::new([2].into_iter());
        s.begin_step();
        let mut p = [1.0, -1.0];
        s.update(0, &mut p, &[0.5, -3.0], |_| 0.1);
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_from_rest_is_a_fixed_point() {
        let mut s = AdamState::new([3].into_iter());
        s.begin_step();
        let mut p = [0.3, 0.2, 0.1];
        s.update(0, &mut p, &[0.0; 3], |_| 1.0);
        assert_eq!(p, [0.3, 0.2, 0.1]);
    }
}
