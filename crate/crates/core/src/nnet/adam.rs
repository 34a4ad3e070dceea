use crate::nnet::ParamVector;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_LEARNING_RATE: f64 = 3e-4;

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One adaptive-moment update with bias correction.
pub fn adam_step(params: &mut ParamVector, grad: &ParamVector, state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grad.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        let g = grad.0[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params.0[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Scale the gradient so its global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(grad: &mut ParamVector, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0);
    let norm = grad.l2_norm();
    if norm > max_norm {
        grad.scale(max_norm / norm);
    }
    norm
}

/// Global-norm clipping across several parameter groups (actor and critic
/// are clipped jointly, matching a single-model update).
pub fn clip_gradients_joint(grads: &mut [&mut ParamVector], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0);
    let sq: f64 = grads
        .iter()
        .map(|g| g.0.iter().map(|x| x * x).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = ParamVector(vec![1.0, -2.0, 3.0]);
        let g = ParamVector::zeros(3);
        let mut st = AdamState::new(3);
        let before = p.clone();
        adam_step(&mut p, &g, &mut st, 0.001);
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        // Closed form: with bias correction, m_hat = g and v_hat = g^2, so
        // the first update is lr * g / (|g| + eps) ~= lr * sign(g).
        let mut p = ParamVector(vec![0.0, 0.0]);
        let g = ParamVector(vec![1.0, -0.5]);
        let mut st = AdamState::new(2);
        let lr = 3e-4;
        adam_step(&mut p, &g, &mut st, lr);
        assert!((p.0[0] + lr).abs() < 1e-6);
        assert!((p.0[1] - lr).abs() < 1e-6);
    }

    #[test]
    fn adam_is_bitwise_deterministic() {
        let run = || {
            let mut p = ParamVector(vec![0.5, -0.25, 0.125]);
            let mut st = AdamState::new(3);
            for k in 0..50 {
                let g = ParamVector(vec![0.1 * k as f64, -0.2, 0.3]);
                adam_step(&mut p, &g, &mut st, 1e-3);
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clip_halves_at_double_norm() {
        // Direct norm computation: vector (3, 4) has norm 5; doubled it is 10.
        let mut g = ParamVector(vec![6.0, 8.0]);
        let norm = clip_gradients(&mut g, 5.0);
        assert!((norm - 10.0).abs() < 1e-12);
        assert!((g.0[0] - 3.0).abs() < 1e-12);
        assert!((g.0[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn clip_leaves_small_and_zero_vectors() {
        let mut g = ParamVector(vec![1.0, 2.0, 2.0]); // norm 3
        clip_gradients(&mut g, 5.0);
        assert_eq!(g.0, vec![1.0, 2.0, 2.0]);
        let mut z = ParamVector::zeros(4);
        clip_gradients(&mut z, 5.0);
        assert!(z.0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn joint_clip_bounds_global_norm() {
        let mut a = ParamVector(vec![3.0, 0.0]);
        let mut b = ParamVector(vec![0.0, 4.0]);
        let norm = clip_gradients_joint(&mut [&mut a, &mut b], 2.5);
        assert!((norm - 5.0).abs() < 1e-12);
        let after = (a.0[0].powi(2) + b.0[1].powi(2)).sqrt();
        assert!(after <= 2.5 + 1e-9);
    }
}
