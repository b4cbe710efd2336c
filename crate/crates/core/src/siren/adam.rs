use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Update `params` in place. A non-finite gradient leaves everything untouched.
    pub fn step<T: Real>(&mut self, params: &mut [T], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam sized for {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient at parameter {i}")));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            *p = T::of(p.to_f64_lossless() - update);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_is_signed_lr() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut st = AdamState::new(3, cfg);
        let mut p = [1.0f64, 1.0, 1.0];
        let g = [2.0, -0.5, 1e-3];
        st.step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expect = 1.0 - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((pi - expect).abs() < 1e-15);
        }
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut st = AdamState::new(2, AdamConfig::default());
        let mut p = [0.5f32, -0.25];
        st.step(&mut p, &[1.0, 1.0]).unwrap();
        let before = p;
        let (m0, v0) = (st.first_moment()[0], st.second_moment()[0]);
        st.step(&mut p, &[0.0, 0.0]).unwrap();
        assert!(st.first_moment()[0] < m0 && st.second_moment()[0] < v0);
        // the decayed first moment still moves the parameters, but zero moments would not
        let mut fresh = AdamState::new(2, AdamConfig::default());
        let mut q = before;
        fresh.step(&mut q, &[0.0, 0.0]).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut st = AdamState::new(2, AdamConfig::default());
        let mut p = [0.0f32; 2];
        assert!(matches!(st.step(&mut p, &[0.0, f64::NAN]), Err(Error::Numerical(_))));
        assert_eq!(st.steps(), 0);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut p: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut st = AdamState::new(10, AdamConfig { lr: 0.05, ..Default::default() });
        for _ in 0..200 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            st.step(&mut p, &g).unwrap();
        }
        for (a, b) in p.iter().zip(&target) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }
}
