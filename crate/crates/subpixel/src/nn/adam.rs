//! Adam optimizer with bias correction.

use super::{Gradients, ModelParams, Scalar, TrainConfig};

/// First/second moment estimates per trainable tensor plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> AdamState<T> {
        let m = params
            .trainable()
            .iter()
            .map(|(_, t)| vec![T::zero(); t.len()])
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState { m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update over every trainable parameter:
    /// `m = b1*m + (1-b1)*g`, `v = b2*v + (1-b2)*g^2`, with bias-corrected
    /// `m_hat`, `v_hat` and `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update(&mut self, params: &mut ModelParams<T>, grads: &Gradients<T>, tcfg: &TrainConfig) {
        self.t += 1;
        let lr = T::from_f64(tcfg.learning_rate);
        let b1 = T::from_f64(tcfg.beta1);
        let b2 = T::from_f64(tcfg.beta2);
        let eps = T::from_f64(tcfg.adam_eps);
        let one = T::one();
        let bc1 = one - T::from_f64(tcfg.beta1.powi(self.t as i32));
        let bc2 = one - T::from_f64(tcfg.beta2.powi(self.t as i32));

        let grad_tensors = grads.tensors();
        for (idx, (_, tensor)) in params.trainable_mut().into_iter().enumerate() {
            let g = grad_tensors[idx];
            debug_assert_eq!(tensor.len(), g.len());
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..tensor.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor[i] = tensor[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, ModelConfig};

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let cfg = ModelConfig {
            window: 5,
            conv_channels: (2, 2),
            conv_kernels: ((3, 3), (3, 3)),
            fc_widths: (3, 2),
            ..Default::default()
        };
        let mut params: ModelParams<f64> = init_params(&cfg, 3).unwrap();
        let before = params.clone();
        let grads = Gradients {
            conv1_w: vec![1.0; params.conv1_w.len()],
            conv1_b: vec![1.0; params.conv1_b.len()],
            bn1_gamma: vec![1.0; params.bn1.gamma.len()],
            bn1_beta: vec![1.0; params.bn1.beta.len()],
            conv2_w: vec![1.0; params.conv2_w.len()],
            conv2_b: vec![1.0; params.conv2_b.len()],
            bn2_gamma: vec![1.0; params.bn2.gamma.len()],
            bn2_beta: vec![1.0; params.bn2.beta.len()],
            fc1_w: vec![1.0; params.fc1_w.len()],
            fc1_b: vec![1.0; params.fc1_b.len()],
            fc2_w: vec![1.0; params.fc2_w.len()],
            fc2_b: vec![1.0; params.fc2_b.len()],
        };
        let tcfg = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let mut adam = AdamState::new(&params);
        adam.update(&mut params, &grads, &tcfg);
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with constant gradient g, the bias-corrected first step is
        // lr * g/|g| (up to eps)
        let cfg = ModelConfig {
            window: 5,
            conv_channels: (2, 2),
            conv_kernels: ((3, 3), (3, 3)),
            fc_widths: (3, 2),
            ..Default::default()
        };
        let mut params: ModelParams<f64> = init_params(&cfg, 3).unwrap();
        let w0 = params.fc2_b[0];
        let mut grads = Gradients {
            conv1_w: vec![0.0; params.conv1_w.len()],
            conv1_b: vec![0.0; params.conv1_b.len()],
            bn1_gamma: vec![0.0; params.bn1.gamma.len()],
            bn1_beta: vec![0.0; params.bn1.beta.len()],
            conv2_w: vec![0.0; params.conv2_w.len()],
            conv2_b: vec![0.0; params.conv2_b.len()],
            bn2_gamma: vec![0.0; params.bn2.gamma.len()],
            bn2_beta: vec![0.0; params.bn2.beta.len()],
            fc1_w: vec![0.0; params.fc1_w.len()],
            fc1_b: vec![0.0; params.fc1_b.len()],
            fc2_w: vec![0.0; params.fc2_w.len()],
            fc2_b: vec![0.0; params.fc2_b.len()],
        };
        grads.fc2_b[0] = 0.5;
        let tcfg = TrainConfig::default();
        let mut adam = AdamState::new(&params);
        adam.update(&mut params, &grads, &tcfg);
        let moved = w0 - params.fc2_b[0];
        assert!((moved - tcfg.learning_rate).abs() < 1e-6, "moved {moved}");
    }
}
