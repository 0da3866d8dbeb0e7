//! AdamW optimizer with decoupled weight decay and bias correction.

/// Hyperparameters. Defaults are lr 5e-5, weight decay 1e-2, and the
/// conventional 0.9 / 0.999 / 1e-8 moment settings.
#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the shared step counter.
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamWState {
    /// `sizes[i]` is the element count of parameter `i`.
    pub fn new(config: AdamWConfig, sizes: &[usize]) -> Self {
        let moments = sizes.iter().map(|&n| (vec![0.0; n], vec![0.0; n])).collect();
        Self { config, step: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step over every parameter. `params` and `grads` must
    /// line up with the sizes this state was built with.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.moments.len(), "parameter count mismatch");
        assert_eq!(grads.len(), self.moments.len(), "gradient count mismatch");
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            assert_eq!(p.len(), m.len(), "parameter size mismatch");
            assert_eq!(g.len(), m.len(), "gradient size mismatch");
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
                p[i] -= c.learning_rate * c.weight_decay * p[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut st = AdamWState::new(cfg, &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let orig = p.clone();
        let g = vec![0.0; 3];
        st.step(&mut [&mut p], &[&g]);
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_has_unit_magnitude_update() {
        // p=1, g=1, lr=0.1, wd=0: bias-corrected m̂=v̂=1, so p ← 1 − 0.1·1/(1+ε)
        let cfg = AdamWConfig { learning_rate: 0.1, weight_decay: 0.0, ..Default::default() };
        let mut st = AdamWState::new(cfg, &[1]);
        let mut p = vec![1.0];
        let g = vec![1.0];
        st.step(&mut [&mut p], &[&g]);
        assert!((p[0] - 0.9).abs() < 1e-7, "p = {}", p[0]);
    }

    #[test]
    fn pure_decoupled_decay() {
        // g=0, wd=1.0, lr=0.1, p=1: p ← p − lr·wd·p = 0.9 exactly
        let cfg = AdamWConfig { learning_rate: 0.1, weight_decay: 1.0, ..Default::default() };
        let mut st = AdamWState::new(cfg, &[1]);
        let mut p = vec![1.0];
        let g = vec![0.0];
        st.step(&mut [&mut p], &[&g]);
        assert_eq!(p[0], 0.9);
    }

    #[test]
    fn zero_lr_is_noop() {
        let cfg = AdamWConfig { learning_rate: 0.0, ..Default::default() };
        let mut st = AdamWState::new(cfg, &[2]);
        let mut p = vec![3.0, -1.0];
        let orig = p.clone();
        let g = vec![0.7, -0.2];
        st.step(&mut [&mut p], &[&g]);
        st.step(&mut [&mut p], &[&g]);
        assert_eq!(p, orig);
        assert_eq!(st.step_count(), 2);
    }
}
