//! Numerical verification of the backward pass: central finite differences
//! against analytic gradients in 64-bit arithmetic, dropout disabled.

use super::network::Network;
use super::{init_params, logcosh_loss, ModelConfig, ModelParams};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: usize,
    pub worst_tensor: &'static str,
}

struct Harness {
    net: Network,
    params: ModelParams<f64>,
    input: Vec<f64>,
    targets: Vec<f64>,
    n: usize,
}

impl Harness {
    fn new(cfg: &ModelConfig, seed: u64, n: usize) -> Result<Harness> {
        // dropout must be off so the loss is a deterministic function of the
        // parameters
        let cfg = ModelConfig {
            dropout_rates: (0.0, 0.0, 0.0),
            ..cfg.clone()
        };
        let net = Network::new(&cfg)?;
        let params: ModelParams<f64> = init_params(&cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let input: Vec<f64> = (0..net.input_len(n))
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let targets: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(0.0..1.0)).collect();
        Ok(Harness {
            net,
            params,
            input,
            targets,
            n,
        })
    }

    /// Loss with one parameter nudged by `delta`. Train-mode forward (batch
    /// BN statistics) matching what the analytic backward differentiates.
    fn loss_with(&self, tensor_idx: usize, elem: usize, delta: f64) -> f64 {
        let mut p = self.params.clone();
        p.trainable_mut()[tensor_idx].1[elem] += delta;
        let mut rng = ChaCha8Rng::seed_from_u64(0); // unused: dropout off
        let (out, _) = self
            .net
            .forward_train(&mut p, &self.input, self.n, &mut rng)
            .expect("forward");
        logcosh_loss(&out, &self.targets)
    }

    fn analytic(&self) -> super::Gradients<f64> {
        let mut p = self.params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, cache) = self
            .net
            .forward_train(&mut p, &self.input, self.n, &mut rng)
            .expect("forward");
        let count = out.len() as f64;
        let grad_out: Vec<f64> = out
            .iter()
            .zip(&self.targets)
            .map(|(&o, &t)| (o - t).tanh() / count)
            .collect();
        self.net.backward(&p, &cache, &grad_out)
    }
}

/// Compare analytic gradients against central differences
/// `(L(p+h) - L(p-h)) / 2h` for `n_probes` parameters sampled across every
/// tensor (all parameters when `n_probes` covers them). Errors when the
/// worst relative error exceeds `tolerance`.
pub fn gradient_check(
    cfg: &ModelConfig,
    seed: u64,
    n_probes: usize,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let harness = Harness::new(cfg, seed, 4)?;
    let analytic = harness.analytic();
    let tensors = analytic.tensors();
    let names: Vec<&'static str> = harness.params.trainable().iter().map(|(n, _)| *n).collect();
    let total: usize = tensors.iter().map(|t| t.len()).sum();

    // probe indices: everything, or a deterministic sample spread over the
    // whole parameter vector
    let flat_indices: Vec<usize> = if n_probes >= total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        rand::seq::index::sample(&mut rng, total, n_probes).into_vec()
    };

    let mut max_rel = 0.0f64;
    let mut worst = names[0];
    for flat in &flat_indices {
        let mut idx = *flat;
        let mut tensor_idx = 0usize;
        while idx >= tensors[tensor_idx].len() {
            idx -= tensors[tensor_idx].len();
            tensor_idx += 1;
        }
        let a = tensors[tensor_idx][idx];
        let lp = harness.loss_with(tensor_idx, idx, h);
        let lm = harness.loss_with(tensor_idx, idx, -h);
        let numeric = (lp - lm) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
            worst = names[tensor_idx];
        }
    }

    let report = GradCheckReport {
        max_rel_err: max_rel,
        probes: flat_indices.len(),
        worst_tensor: worst,
    };
    if max_rel > tolerance {
        return Err(Error::Diverged(format!(
            "gradient check failed: max relative error {max_rel:.3e} (worst tensor {worst}) exceeds {tolerance:.1e}"
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            window: 5,
            conv_channels: (2, 3),
            conv_kernels: ((3, 3), (3, 3)),
            fc_widths: (4, 2),
            dropout_rates: (0.0, 0.0, 0.0),
            ..Default::default()
        }
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let report = gradient_check(&tiny_cfg(), 3, 100, 1e-5, 1e-4).unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
        assert_eq!(report.probes, 100);
    }

    #[test]
    fn all_parameters_of_a_micro_net() {
        let cfg = ModelConfig {
            window: 3,
            conv_channels: (2, 2),
            conv_kernels: ((1, 1), (3, 3)),
            fc_widths: (3, 2),
            dropout_rates: (0.0, 0.0, 0.0),
            ..Default::default()
        };
        let report = gradient_check(&cfg, 5, usize::MAX, 1e-5, 1e-4).unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn truncation_error_is_second_order() {
        // central differences have O(h^2) truncation error; doubling h should
        // scale the error by roughly 4
        let harness = Harness::new(&tiny_cfg(), 11, 4).unwrap();
        let analytic = harness.analytic();
        // probe a final-layer weight: the loss is smooth in it (no
        // leaky-ReLU kink between the parameter and the loss)
        let tensor_idx = 10usize; // fc2_w
        let elem = 1usize;
        let a = analytic.tensors()[tensor_idx][elem];
        let slope = |h: f64| {
            (harness.loss_with(tensor_idx, elem, h) - harness.loss_with(tensor_idx, elem, -h))
                / (2.0 * h)
        };
        // large enough h that truncation dominates f64 rounding
        let e1 = (slope(0.05) - a).abs();
        let e2 = (slope(0.10) - a).abs();
        assert!(e1 > 1e-12, "truncation error too small to measure: {e1}");
        let ratio = e2 / e1;
        assert!(
            (2.0..8.0).contains(&ratio),
            "expected ~4x error growth, got {ratio} (e1 {e1}, e2 {e2})"
        );
    }
}
