use serde::{Deserialize, Serialize};

use super::spec::AdamConfig;

/// First and second moment estimates for Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One Adam update of `params` in place. Entries with `mask[i] == false` are
/// left untouched, moments included.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grad: &[f64],
    cfg: &AdamConfig,
    lr: f64,
    mask: Option<&[bool]>,
) {
    debug_assert_eq!(params.len(), grad.len());
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let cfg = AdamConfig::with_lr(0.01);
        let mut st = AdamState::new(4);
        let mut p = vec![1.0, -2.0, 0.5, 3.0];
        let before = p.clone();
        let g = [0.3, -5.0, 0.02, -40.0];
        adam_step(&mut st, &mut p, &g, &cfg, cfg.learning_rate, None);
        for i in 0..4 {
            let delta = p[i] - before[i];
            // bias-corrected first step is lr * g / (|g| + eps)
            let expected = -0.01 * g[i] / (g[i].abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-15, "{delta} vs {expected}");
            assert!((delta + 0.01 * g[i].signum()).abs() < 1e-6 * 0.01);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut st = AdamState::new(3);
        let mut p = vec![0.1, 0.2, 0.3];
        for _ in 0..100 {
            adam_step(&mut st, &mut p, &[0.0; 3], &cfg, 0.1, None);
        }
        assert_eq!(p, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn identical_gradients_identical_trajectories() {
        let cfg = AdamConfig::with_lr(0.05);
        let run = || {
            let mut st = AdamState::new(2);
            let mut p = vec![1.0, 1.0];
            let mut traj = Vec::new();
            for k in 0..20 {
                let g = [(k as f64).sin(), (k as f64 * 0.3).cos()];
                adam_step(&mut st, &mut p, &g, &cfg, 0.05, None);
                traj.push(p.clone());
            }
            traj
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn masked_entries_untouched() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut st = AdamState::new(2);
        let mut p = vec![1.0, 1.0];
        adam_step(&mut st, &mut p, &[1.0, 1.0], &cfg, 0.1, Some(&[false, true]));
        assert_eq!(p[0], 1.0);
        assert!(p[1] < 1.0);
        assert_eq!(st.m[0], 0.0);
    }
}
