use std::f64::consts::PI;

/// Adam moment estimates for one flat parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Applies update number `t` (1-based) with learning rate `lr`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: u64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        let bc1 = 1.0 - self.beta1.powf(t as f64);
        let bc2 = 1.0 - self.beta2.powf(t as f64);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// `lr(t) = lr0 · ½ · (1 + cos(π·t/T))` for optimizer step `t` of `T`.
#[derive(Debug, Clone, Copy)]
pub struct CosineSchedule {
    pub lr0: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.lr0;
        }
        let progress = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.lr0 * 0.5 * (1.0 + (PI * progress).cos())
    }
}
