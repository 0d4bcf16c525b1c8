//! Full network wiring: CL1 -> BN -> leaky-ReLU -> dropout -> CL2 -> BN ->
//! leaky-ReLU -> dropout -> flatten -> FC1 -> leaky-ReLU -> dropout -> FC2.

use super::layers::{self, BnCache, ConvCache};
use super::{BnParams, ModelConfig, ModelParams, Scalar};
use crate::features::N_PLANES;
use crate::{Error, Result};
use rand::Rng;

/// Trainable-parameter count for a configuration (BN running statistics are
/// state, not parameters).
pub fn param_count(cfg: &ModelConfig) -> usize {
    let (c1, c2) = cfg.conv_channels;
    let ((k1h, k1w), (k2h, k2w)) = cfg.conv_kernels;
    let flat = cfg.flatten_width();
    let (fc1, out) = cfg.fc_widths;
    let conv1 = c1 * N_PLANES * k1h * k1w + c1;
    let conv2 = c2 * c1 * k2h * k2w + c2;
    let bn = 2 * c1 + 2 * c2;
    let fc1_p = fc1 * flat + fc1;
    let fc2_p = out * fc1 + out;
    conv1 + conv2 + bn + fc1_p + fc2_p
}

/// Gradients for every trainable tensor, in the same layout as
/// [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub conv1_w: Vec<T>,
    pub conv1_b: Vec<T>,
    pub bn1_gamma: Vec<T>,
    pub bn1_beta: Vec<T>,
    pub conv2_w: Vec<T>,
    pub conv2_b: Vec<T>,
    pub bn2_gamma: Vec<T>,
    pub bn2_beta: Vec<T>,
    pub fc1_w: Vec<T>,
    pub fc1_b: Vec<T>,
    pub fc2_w: Vec<T>,
    pub fc2_b: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Tensors in the same fixed order as [`ModelParams::trainable`].
    pub fn tensors(&self) -> [&[T]; 12] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.bn1_gamma,
            &self.bn1_beta,
            &self.conv2_w,
            &self.conv2_b,
            &self.bn2_gamma,
            &self.bn2_beta,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }
}

/// Forward-pass cache for one batch, consumed by [`Network::backward`].
pub struct ForwardCache<T> {
    n: usize,
    conv1: ConvCache<T>,
    bn1: BnCache<T>,
    pre_act1: Vec<T>,
    mask1: Option<Vec<T>>,
    drop1: Vec<T>,
    conv2: ConvCache<T>,
    bn2: BnCache<T>,
    pre_act2: Vec<T>,
    mask2: Option<Vec<T>>,
    drop2: Vec<T>,
    pre_fc1_act: Vec<T>,
    mask_fc: Option<Vec<T>>,
    drop_fc: Vec<T>,
}

/// Immutable network geometry derived from a validated config.
pub struct Network {
    cfg: ModelConfig,
    pub s1: (usize, usize),
    pub s2: (usize, usize),
    pub flat: usize,
}

impl Network {
    pub fn new(cfg: &ModelConfig) -> Result<Network> {
        cfg.validate()?;
        let (s1, s2) = cfg.conv_sizes();
        let flat = cfg.flatten_width();
        Ok(Network {
            cfg: cfg.clone(),
            s1,
            s2,
            flat,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn input_len(&self, n: usize) -> usize {
        n * N_PLANES * self.cfg.window * self.cfg.window
    }

    /// Train-mode forward pass: BN uses batch statistics (and updates the
    /// running ones), dropout is active when the rates are nonzero. Returns
    /// raw (unclipped) outputs `[n][2]` and the cache for `backward`.
    pub fn forward_train<T: Scalar, R: Rng>(
        &self,
        params: &mut ModelParams<T>,
        input: &[T],
        n: usize,
        rng: &mut R,
    ) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.check_input(input, n)?;
        let cfg = &self.cfg;
        let w = cfg.window;
        let (c1, c2) = cfg.conv_channels;
        let ((k1h, k1w), (k2h, k2w)) = cfg.conv_kernels;
        let (s1h, s1w) = self.s1;
        let (s2h, s2w) = self.s2;
        let slope = T::from_f64(cfg.leaky_slope);
        let eps = T::from_f64(cfg.bn_epsilon);
        let momentum = T::from_f64(cfg.bn_momentum);

        // CL1 -> BN -> leaky -> dropout
        let (a1, conv1) = layers::conv_forward(
            input, n, N_PLANES, w, w, &params.conv1_w, &params.conv1_b, c1, k1h, k1w,
        );
        let (b1, bn1) = layers::bn_forward_train(
            &a1,
            n,
            c1,
            s1h * s1w,
            &params.bn1.gamma,
            &params.bn1.beta,
            &mut params.bn1.run_mean,
            &mut params.bn1.run_var,
            eps,
            momentum,
        );
        let l1 = layers::leaky_forward(&b1, slope);
        let (drop1, mask1) = self.dropout(l1, cfg.dropout_rates.0, rng);

        // CL2 -> BN -> leaky -> dropout
        let (a2, conv2) = layers::conv_forward(
            &drop1, n, c1, s1h, s1w, &params.conv2_w, &params.conv2_b, c2, k2h, k2w,
        );
        let (b2, bn2) = layers::bn_forward_train(
            &a2,
            n,
            c2,
            s2h * s2w,
            &params.bn2.gamma,
            &params.bn2.beta,
            &mut params.bn2.run_mean,
            &mut params.bn2.run_var,
            eps,
            momentum,
        );
        let l2 = layers::leaky_forward(&b2, slope);
        let (drop2, mask2) = self.dropout(l2, cfg.dropout_rates.1, rng);

        // flatten happens for free: [n][c2][s2h][s2w] is already [n][flat]
        let f1 = layers::fc_forward(&drop2, n, self.flat, &params.fc1_w, &params.fc1_b, cfg.fc_widths.0);
        let lf1 = layers::leaky_forward(&f1, slope);
        let (drop_fc, mask_fc) = self.dropout(lf1, cfg.dropout_rates.2, rng);

        let out = layers::fc_forward(
            &drop_fc,
            n,
            cfg.fc_widths.0,
            &params.fc2_w,
            &params.fc2_b,
            cfg.fc_widths.1,
        );

        Ok((
            out,
            ForwardCache {
                n,
                conv1,
                bn1,
                pre_act1: b1,
                mask1,
                drop1,
                conv2,
                bn2,
                pre_act2: b2,
                mask2,
                drop2,
                pre_fc1_act: f1,
                mask_fc,
                drop_fc,
            },
        ))
    }

    /// Infer-mode forward pass: running BN statistics, no dropout. Outputs
    /// are raw; prediction clips them to [0, 1] downstream.
    pub fn forward_infer<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        input: &[T],
        n: usize,
    ) -> Result<Vec<T>> {
        self.check_input(input, n)?;
        let cfg = &self.cfg;
        let w = cfg.window;
        let (c1, c2) = cfg.conv_channels;
        let ((k1h, k1w), (k2h, k2w)) = cfg.conv_kernels;
        let (s1h, s1w) = self.s1;
        let (s2h, s2w) = self.s2;
        let slope = T::from_f64(cfg.leaky_slope);
        let eps = T::from_f64(cfg.bn_epsilon);

        let (a1, _) = layers::conv_forward(
            input, n, N_PLANES, w, w, &params.conv1_w, &params.conv1_b, c1, k1h, k1w,
        );
        let b1 = self.bn_infer(&a1, n, c1, s1h * s1w, &params.bn1, eps);
        let l1 = layers::leaky_forward(&b1, slope);

        let (a2, _) = layers::conv_forward(
            &l1, n, c1, s1h, s1w, &params.conv2_w, &params.conv2_b, c2, k2h, k2w,
        );
        let b2 = self.bn_infer(&a2, n, c2, s2h * s2w, &params.bn2, eps);
        let l2 = layers::leaky_forward(&b2, slope);

        let f1 = layers::fc_forward(&l2, n, self.flat, &params.fc1_w, &params.fc1_b, cfg.fc_widths.0);
        let lf1 = layers::leaky_forward(&f1, slope);
        Ok(layers::fc_forward(
            &lf1,
            n,
            cfg.fc_widths.0,
            &params.fc2_w,
            &params.fc2_b,
            cfg.fc_widths.1,
        ))
    }

    /// Exact gradients of the loss through the cached forward pass.
    /// `grad_out` is dLoss/dOutput, shape `[n][2]`.
    pub fn backward<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        cache: &ForwardCache<T>,
        grad_out: &[T],
    ) -> Gradients<T> {
        let cfg = &self.cfg;
        let n = cache.n;
        let w = cfg.window;
        let (c1, c2) = cfg.conv_channels;
        let ((k1h, k1w), (k2h, k2w)) = cfg.conv_kernels;
        let (s1h, s1w) = self.s1;
        let (s2h, s2w) = self.s2;
        let slope = T::from_f64(cfg.leaky_slope);

        // FC2
        let fc2 = layers::fc_backward(
            grad_out,
            &cache.drop_fc,
            n,
            cfg.fc_widths.0,
            &params.fc2_w,
            cfg.fc_widths.1,
        );
        // dropout + leaky before FC2
        let g = self.mask_backward(fc2.input, cache.mask_fc.as_deref());
        let g = layers::leaky_backward(&g, &cache.pre_fc1_act, slope);
        // FC1
        let fc1 = layers::fc_backward(&g, &cache.drop2, n, self.flat, &params.fc1_w, cfg.fc_widths.0);

        // dropout + leaky + BN after CL2
        let g = self.mask_backward(fc1.input, cache.mask2.as_deref());
        let g = layers::leaky_backward(&g, &cache.pre_act2, slope);
        let bn2 = layers::bn_backward(&g, &cache.bn2, n, c2, s2h * s2w, &params.bn2.gamma);
        // CL2
        let conv2 = layers::conv_backward(
            &bn2.input,
            &cache.conv2,
            n,
            c1,
            s1h,
            s1w,
            &params.conv2_w,
            c2,
            k2h,
            k2w,
            true,
        );

        // dropout + leaky + BN after CL1
        let g = self.mask_backward(conv2.input.expect("requested input grad"), cache.mask1.as_deref());
        let g = layers::leaky_backward(&g, &cache.pre_act1, slope);
        let bn1 = layers::bn_backward(&g, &cache.bn1, n, c1, s1h * s1w, &params.bn1.gamma);
        // CL1: the input gradient is never needed
        let conv1 = layers::conv_backward(
            &bn1.input,
            &cache.conv1,
            n,
            N_PLANES,
            w,
            w,
            &params.conv1_w,
            c1,
            k1h,
            k1w,
            false,
        );

        Gradients {
            conv1_w: conv1.weights,
            conv1_b: conv1.bias,
            bn1_gamma: bn1.gamma,
            bn1_beta: bn1.beta,
            conv2_w: conv2.weights,
            conv2_b: conv2.bias,
            bn2_gamma: bn2.gamma,
            bn2_beta: bn2.beta,
            fc1_w: fc1.weights,
            fc1_b: fc1.bias,
            fc2_w: fc2.weights,
            fc2_b: fc2.bias,
        }
    }

    fn dropout<T: Scalar, R: Rng>(
        &self,
        input: Vec<T>,
        rate: f64,
        rng: &mut R,
    ) -> (Vec<T>, Option<Vec<T>>) {
        if rate == 0.0 {
            (input, None)
        } else {
            let mask = layers::dropout_mask(input.len(), rate, rng);
            (layers::apply_mask(&input, &mask), Some(mask))
        }
    }

    fn mask_backward<T: Scalar>(&self, grad: Vec<T>, mask: Option<&[T]>) -> Vec<T> {
        match mask {
            Some(m) => layers::apply_mask(&grad, m),
            None => grad,
        }
    }

    fn bn_infer<T: Scalar>(
        &self,
        input: &[T],
        n: usize,
        c: usize,
        plane: usize,
        bn: &BnParams<T>,
        eps: T,
    ) -> Vec<T> {
        layers::bn_forward_infer(input, n, c, plane, &bn.gamma, &bn.beta, &bn.run_mean, &bn.run_var, eps)
    }

    fn check_input<T>(&self, input: &[T], n: usize) -> Result<()> {
        if input.len() != self.input_len(n) {
            return Err(Error::DimensionMismatch(format!(
                "batch of {n} needs {} values, got {}",
                self.input_len(n),
                input.len()
            )));
        }
        if n == 0 {
            return Err(Error::EmptyInput("empty batch".to_string()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

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
    fn default_param_count() {
        let cfg = ModelConfig::default();
        assert_eq!(param_count(&cfg), 669_122);
        let p: ModelParams<f32> = init_params(&cfg, 0).unwrap();
        assert_eq!(p.trainable_len(), 669_122);
    }

    #[test]
    fn output_shape_matches_batch() {
        let cfg = tiny_cfg();
        let net = Network::new(&cfg).unwrap();
        let mut params: ModelParams<f64> = init_params(&cfg, 1).unwrap();
        let n = 5;
        let input: Vec<f64> = (0..net.input_len(n)).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = net.forward_train(&mut params, &input, n, &mut rng).unwrap();
        assert_eq!(out.len(), n * 2);
        let out2 = net.forward_infer(&params, &input, n).unwrap();
        assert_eq!(out2.len(), n * 2);
    }

    #[test]
    fn zero_params_zero_output_infer() {
        let cfg = tiny_cfg();
        let net = Network::new(&cfg).unwrap();
        let mut params: ModelParams<f64> = init_params(&cfg, 1).unwrap();
        for (_, t) in params.trainable_mut() {
            for v in t.iter_mut() {
                *v = 0.0;
            }
        }
        let input: Vec<f64> = (0..net.input_len(3)).map(|i| i as f64 * 0.01).collect();
        let out = net.forward_infer(&params, &input, 3).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infer_deterministic() {
        let cfg = ModelConfig {
            dropout_rates: (0.5, 0.25, 0.5),
            ..tiny_cfg()
        };
        let net = Network::new(&cfg).unwrap();
        let params: ModelParams<f64> = init_params(&cfg, 2).unwrap();
        let input: Vec<f64> = (0..net.input_len(4)).map(|i| (i as f64 * 0.11).cos()).collect();
        let a = net.forward_infer(&params, &input, 4).unwrap();
        let b = net.forward_infer(&params, &input, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flatten_width_shape_oracle() {
        // window 7, kernels 3x3/3x3 -> 3*3*128 = 1152
        let cfg = ModelConfig::default();
        let net = Network::new(&cfg).unwrap();
        assert_eq!(net.flat, 3 * 3 * 128);
    }
}
