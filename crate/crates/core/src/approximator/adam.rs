use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
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

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], st: &mut AdamState) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), st.m.len());
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = st.config;
    st.t += 1;
    let c1 = 1.0 - beta1.powi(st.t as i32);
    let c2 = 1.0 - beta2.powi(st.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
        st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
        let m_hat = st.m[i] / c1;
        let v_hat = st.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -7.0, 1e-3];
        let mut st = AdamState::new(3, AdamConfig::default());
        adam_step(&mut p, &g, &mut st);
        assert_eq!(st.t, 1);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-10);
        assert!((p[1] - (-2.0 + 1e-3)).abs() < 1e-10);
        assert!((p[2] - (0.5 - 1e-3)).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![1.0, 2.0];
        let mut st = AdamState::new(2, AdamConfig::default());
        adam_step(&mut p, &[0.0, 0.0], &mut st);
        assert_eq!(p, vec![1.0, 2.0]);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![0.1, 0.2];
            let mut st = AdamState::new(2, AdamConfig::default());
            adam_step(&mut p, &[0.5, -0.5], &mut st);
            adam_step(&mut p, &[0.4, 0.1], &mut st);
            (p, st)
        };
        assert_eq!(run(), run());
    }
}
