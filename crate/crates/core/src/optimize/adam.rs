use serde::{Deserialize, Serialize};

use crate::gaussian::{layout, ParamGroup};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with a per-element learning rate.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: &[f64]) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    assert_eq!(params.len(), lr.len());
    state.step += 1;
    let c1 = 1.0 - BETA1.powi(state.step as i32);
    let c2 = 1.0 - BETA2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        let m = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        let v = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        params[i] -= lr[i] * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

/// Per-group learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub position: f64,
    pub sh: f64,
    pub opacity: f64,
    pub scales: f64,
    pub rotation: f64,
    pub normal: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 2e-4,
            sh: 2.5e-3,
            opacity: 5e-2,
            scales: 5e-3,
            rotation: 1e-3,
            normal: 3e-2,
        }
    }
}

impl LearningRates {
    pub fn of(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Position => self.position,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Scale => self.scales,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::ShDc | ParamGroup::ShRest => self.sh,
            ParamGroup::Normal => self.normal,
        }
    }

    /// Expands to one rate per flat parameter of `count` Gaussians; groups
    /// for which `trainable` is false get rate zero.
    pub fn expand(&self, count: usize, trainable: impl Fn(ParamGroup) -> bool) -> Vec<f64> {
        let per: Vec<f64> = (0..layout::LEN)
            .map(|o| {
                let g = ParamGroup::of_offset(o);
                if trainable(g) {
                    self.of(g)
                } else {
                    0.0
                }
            })
            .collect();
        per.iter().copied().cycle().take(count * layout::LEN).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut p = vec![0.3, -1.2, 4.0];
        let before = p.clone();
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, &[0.1; 3]);
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![1.0, 1.0, 1.0, 1.0];
        let g = [0.5, -2.0, 1e-3, -40.0];
        let mut s = AdamState::new(4);
        adam_step(&mut p, &g, &mut s, &[0.01; 4]);
        for (pi, gi) in p.iter().zip(g) {
            assert_relative_eq!(*pi, 1.0 - 0.01 * gi.signum(), epsilon = 1e-7);
        }
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 17;
        let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lr: Vec<f64> = (0..n).map(|_| rng.random_range(1e-4..1e-1)).collect();
        let mut s = AdamState::new(n);
        let mut reference = p.clone();
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        for t in 1..=25 {
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            adam_step(&mut p, &g, &mut s, &lr);
            for i in 0..n {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                reference[i] -= lr[i] * mh / (vh.sqrt() + 1e-8);
            }
        }
        for i in 0..n {
            assert_relative_eq!(p[i], reference[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn expanded_rates_follow_layout() {
        let lr = LearningRates::default();
        let v = lr.expand(2, |g| g != ParamGroup::Position);
        assert_eq!(v.len(), 2 * layout::LEN);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[layout::OPACITY], 5e-2);
        assert_eq!(v[layout::LEN + layout::SCALES.start], 5e-3);
        assert_eq!(v[layout::LEN + layout::NORMAL.start], 3e-2);
    }
}
