/// Adaptive moment estimation state for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Applies one update; `t` is the 1-based step count used for bias correction.
    pub fn step_f32(&mut self, cfg: &AdamConfig, t: u64, value: &mut [f32], grad: &[f32]) {
        let (c1, c2) = corrections(cfg, t);
        for i in 0..value.len() {
            let delta = self.moment(cfg, i, grad[i] as f64, c1, c2);
            value[i] -= delta as f32;
        }
    }

    pub fn step_f64(&mut self, cfg: &AdamConfig, t: u64, value: &mut [f64], grad: &[f64]) {
        let (c1, c2) = corrections(cfg, t);
        for i in 0..value.len() {
            value[i] -= self.moment(cfg, i, grad[i], c1, c2);
        }
    }

    #[inline]
    fn moment(&mut self, cfg: &AdamConfig, i: usize, g: f64, c1: f64, c2: f64) -> f64 {
        self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
        self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = self.m[i] / c1;
        let v_hat = self.v[i] / c2;
        cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps)
    }
}

fn corrections(cfg: &AdamConfig, t: u64) -> (f64, f64) {
    let t = t.max(1) as i32;
    (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t))
}
