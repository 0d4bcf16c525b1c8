//! From-scratch convolutional regression engine.
//!
//! Architecture: two valid convolutions (64 and 128 kernels by default) each
//! followed by batch normalization, leaky-ReLU and dropout, then two fully
//! connected layers (512 and 2 outputs). Trained with Adam on the log-cosh
//! loss; outputs are clipped to [0, 1] only at prediction time and no
//! sum-to-one constraint is ever applied.
//!
//! Training runs in f32; gradient verification instantiates the identical
//! code in f64.

mod adam;
mod artifact;
mod gradcheck;
mod layers;
mod network;
mod train;

pub use adam::AdamState;
pub use artifact::{
    decode_model_bytes, encode_model_bytes, export_summary_json, load_model, save_model,
};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use network::{param_count, Gradients, Network};
pub use train::{fit, predict, predict_rows, train_step, Mode, TrainedModel, TrainingLog};

use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Scalar type the network runs on. f32 for training throughput, f64 for
/// gradient checking.
pub trait Scalar:
    ndarray::LinalgScalar + num_traits::Float + Send + Sync + std::fmt::Debug + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Leaky rectified linear unit.
pub fn leaky_relu<T: Scalar>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        slope * x
    }
}

/// Overflow-safe `ln(cosh(x))`: `|x| - ln 2 + ln(1 + exp(-2|x|))`.
pub fn logcosh<T: Scalar>(x: T) -> T {
    let a = x.abs();
    let two = T::from_f64(2.0);
    a - T::from_f64(std::f64::consts::LN_2) + (-two * a).exp().ln_1p()
}

/// Mean log-cosh loss over paired predictions and targets.
pub fn logcosh_loss<T: Scalar>(pred: &[T], target: &[T]) -> T {
    assert_eq!(pred.len(), target.len(), "loss inputs must pair up");
    if pred.is_empty() {
        return T::zero();
    }
    let mut sum = T::zero();
    for (&p, &t) in pred.iter().zip(target) {
        sum = sum + logcosh(p - t);
    }
    sum / T::from_f64(pred.len() as f64)
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Neighborhood window size (odd).
    pub window: usize,
    /// Kernel counts for the two convolutional layers.
    pub conv_channels: (usize, usize),
    /// Kernel sizes (height, width) for the two convolutional layers.
    pub conv_kernels: ((usize, usize), (usize, usize)),
    /// Fully connected widths; the second is the output width (2).
    pub fc_widths: (usize, usize),
    /// Dropout rates after CL1, CL2 and FC1 activations.
    pub dropout_rates: (f64, f64, f64),
    pub leaky_slope: f64,
    pub bn_epsilon: f64,
    /// Exponential moving average momentum for BN running statistics.
    pub bn_momentum: f64,
    /// Gaussian init: standard deviation and mean of initial weights.
    pub init_sd: f64,
    pub init_mean: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: 7,
            conv_channels: (64, 128),
            conv_kernels: ((3, 3), (3, 3)),
            fc_widths: (512, 2),
            dropout_rates: (0.5, 0.25, 0.5),
            leaky_slope: 0.01,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
            init_sd: 0.05,
            init_mean: 0.0,
        }
    }
}

impl ModelConfig {
    /// Spatial size after the first and second valid convolution (0 when a
    /// kernel collapses the window; `validate` rejects such configs).
    pub fn conv_sizes(&self) -> ((usize, usize), (usize, usize)) {
        let s1h = (self.window + 1).saturating_sub(self.conv_kernels.0 .0);
        let s1w = (self.window + 1).saturating_sub(self.conv_kernels.0 .1);
        let s2h = (s1h + 1).saturating_sub(self.conv_kernels.1 .0);
        let s2w = (s1w + 1).saturating_sub(self.conv_kernels.1 .1);
        ((s1h, s1w), (s2h, s2w))
    }

    /// Width of the flattened features entering FC1.
    pub fn flatten_width(&self) -> usize {
        let (_, (s2h, s2w)) = self.conv_sizes();
        self.conv_channels.1 * s2h * s2w
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "window must be odd and positive, got {}",
                self.window
            )));
        }
        if self.conv_channels.0 == 0 || self.conv_channels.1 == 0 {
            return Err(Error::Config("conv channel counts must be positive".into()));
        }
        let k = self.conv_kernels;
        if k.0 .0 == 0 || k.0 .1 == 0 || k.1 .0 == 0 || k.1 .1 == 0 {
            return Err(Error::Config("kernel sizes must be positive".into()));
        }
        if self.window + 1 < k.0 .0 || self.window + 1 < k.0 .1 {
            return Err(Error::Config(format!(
                "first kernel {:?} larger than window {}",
                k.0, self.window
            )));
        }
        let ((s1h, s1w), (s2h, s2w)) = self.conv_sizes();
        if s1h < 1 || s1w < 1 || s2h < 1 || s2w < 1 {
            return Err(Error::Config(format!(
                "valid convolutions collapse the window: {} -> {}x{} -> {}x{}",
                self.window, s1h, s1w, s2h, s2w
            )));
        }
        if self.fc_widths.1 != 2 {
            return Err(Error::Config(format!(
                "the network predicts 2 fractions, fc output width is {}",
                self.fc_widths.1
            )));
        }
        if self.fc_widths.0 == 0 {
            return Err(Error::Config("fc1 width must be positive".into()));
        }
        for (name, rate) in [
            ("cl1", self.dropout_rates.0),
            ("cl2", self.dropout_rates.1),
            ("fc1", self.dropout_rates.2),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!(
                    "dropout rate for {name} must be in [0, 1), got {rate}"
                )));
            }
        }
        if self.leaky_slope <= 0.0 {
            return Err(Error::Config("leaky_slope must be positive".into()));
        }
        if self.bn_epsilon <= 0.0 {
            return Err(Error::Config("bn_epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_momentum must be in [0, 1)".into()));
        }
        if self.init_sd <= 0.0 {
            return Err(Error::Config("init_sd must be positive".into()));
        }
        Ok(())
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Train/validation/test fractions.
    pub split: (f64, f64, f64),
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            epochs: 250,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            split: (0.80, 0.05, 0.15),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let (a, b, c) = self.split;
        if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be nonnegative and sum to 1, got {:?}",
                self.split
            )));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Batch normalization parameters for one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub run_mean: Vec<T>,
    pub run_var: Vec<T>,
}

impl<T: Scalar> BnParams<T> {
    fn identity(channels: usize) -> Self {
        BnParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            run_mean: vec![T::zero(); channels],
            run_var: vec![T::one(); channels],
        }
    }
}

/// All network parameters. Weight layouts: conv `[out_c][in_c][kh][kw]`,
/// fully connected `[out][in]`, all row-major contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub conv1_w: Vec<T>,
    pub conv1_b: Vec<T>,
    pub bn1: BnParams<T>,
    pub conv2_w: Vec<T>,
    pub conv2_b: Vec<T>,
    pub bn2: BnParams<T>,
    pub fc1_w: Vec<T>,
    pub fc1_b: Vec<T>,
    pub fc2_w: Vec<T>,
    pub fc2_b: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Trainable tensors in a fixed order (running BN statistics excluded).
    pub fn trainable(&self) -> [(&'static str, &[T]); 12] {
        [
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("bn1_gamma", &self.bn1.gamma),
            ("bn1_beta", &self.bn1.beta),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("bn2_gamma", &self.bn2.gamma),
            ("bn2_beta", &self.bn2.beta),
            ("fc1_w", &self.fc1_w),
            ("fc1_b", &self.fc1_b),
            ("fc2_w", &self.fc2_w),
            ("fc2_b", &self.fc2_b),
        ]
    }

    pub fn trainable_mut(&mut self) -> [(&'static str, &mut Vec<T>); 12] {
        [
            ("conv1_w", &mut self.conv1_w),
            ("conv1_b", &mut self.conv1_b),
            ("bn1_gamma", &mut self.bn1.gamma),
            ("bn1_beta", &mut self.bn1.beta),
            ("conv2_w", &mut self.conv2_w),
            ("conv2_b", &mut self.conv2_b),
            ("bn2_gamma", &mut self.bn2.gamma),
            ("bn2_beta", &mut self.bn2.beta),
            ("fc1_w", &mut self.fc1_w),
            ("fc1_b", &mut self.fc1_b),
            ("fc2_w", &mut self.fc2_w),
            ("fc2_b", &mut self.fc2_b),
        ]
    }

    pub fn trainable_len(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    /// Convert parameter precision (used when persisting f64 nets as f32
    /// artifacts and vice versa).
    pub fn convert<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect();
        ModelParams {
            conv1_w: conv(&self.conv1_w),
            conv1_b: conv(&self.conv1_b),
            bn1: BnParams {
                gamma: conv(&self.bn1.gamma),
                beta: conv(&self.bn1.beta),
                run_mean: conv(&self.bn1.run_mean),
                run_var: conv(&self.bn1.run_var),
            },
            conv2_w: conv(&self.conv2_w),
            conv2_b: conv(&self.conv2_b),
            bn2: BnParams {
                gamma: conv(&self.bn2.gamma),
                beta: conv(&self.bn2.beta),
                run_mean: conv(&self.bn2.run_mean),
                run_var: conv(&self.bn2.run_var),
            },
            fc1_w: conv(&self.fc1_w),
            fc1_b: conv(&self.fc1_b),
            fc2_w: conv(&self.fc2_w),
            fc2_b: conv(&self.fc2_b),
        }
    }
}

/// Gaussian-initialized parameters: weights from N(init_mean, init_sd^2),
/// biases zero, BN scale 1 / shift 0. Deterministic per seed.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |len: usize| -> Vec<T> {
        (0..len)
            .map(|_| {
                let z: f64 = rand::Rng::sample(&mut rng, StandardNormal);
                T::from_f64(cfg.init_mean + cfg.init_sd * z)
            })
            .collect()
    };
    let (c1, c2) = cfg.conv_channels;
    let ((k1h, k1w), (k2h, k2w)) = cfg.conv_kernels;
    let flat = cfg.flatten_width();
    let (fc1, out) = cfg.fc_widths;
    Ok(ModelParams {
        conv1_w: gauss(c1 * crate::features::N_PLANES * k1h * k1w),
        conv1_b: vec![T::zero(); c1],
        bn1: BnParams::identity(c1),
        conv2_w: gauss(c2 * c1 * k2h * k2w),
        conv2_b: vec![T::zero(); c2],
        bn2: BnParams::identity(c2),
        fc1_w: gauss(fc1 * flat),
        fc1_b: vec![T::zero(); fc1],
        fc2_w: gauss(out * fc1),
        fc2_b: vec![T::zero(); out],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_examples() {
        assert_eq!(leaky_relu(2.0f64, 0.01), 2.0);
        assert_eq!(leaky_relu(-1.0f64, 0.01), -0.01);
        assert_eq!(leaky_relu(0.0f64, 0.01), 0.0);
    }

    #[test]
    fn logcosh_examples() {
        assert_eq!(logcosh_loss::<f64>(&[0.3, -0.2], &[0.3, -0.2]), 0.0);
        let l = logcosh_loss::<f64>(&[1.0], &[0.0]);
        assert!((l - 0.4337808304830271).abs() < 1e-12, "got {l}");
        // even function: loss(p, t) == loss(t, p)
        let a = logcosh_loss::<f64>(&[0.9, 0.1], &[0.2, 0.6]);
        let b = logcosh_loss::<f64>(&[0.2, 0.6], &[0.9, 0.1]);
        assert_eq!(a, b);
    }

    #[test]
    fn logcosh_overflow_safe() {
        let l = logcosh(1000.0f64);
        assert!((l - (1000.0 - std::f64::consts::LN_2)).abs() < 1e-9);
        assert!(logcosh(-500.0f32).is_finite());
    }

    #[test]
    fn default_config_shapes() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.conv_sizes(), ((5, 5), (3, 3)));
        assert_eq!(cfg.flatten_width(), 1152);
    }

    #[test]
    fn window_kernel_table_configs_valid() {
        // (window, (k1, k2)) pairs studied for the window-size experiment
        let table = [
            (3, ((3, 3), (1, 1))),
            (5, ((3, 3), (3, 3))),
            (7, ((3, 3), (3, 3))),
            (9, ((5, 5), (3, 3))),
        ];
        for (window, kernels) in table {
            let cfg = ModelConfig {
                window,
                conv_kernels: kernels,
                ..Default::default()
            };
            cfg.validate().unwrap();
            let (_, (s2h, s2w)) = cfg.conv_sizes();
            assert!(s2h >= 1 && s2w >= 1, "window {window}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ModelConfig {
            window: 4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.window = 3;
        cfg.conv_kernels = ((3, 3), (3, 3)); // 3 -> 1 -> -1
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            fc_widths: (512, 3),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_deterministic_per_seed() {
        let cfg = ModelConfig::default();
        let a: ModelParams<f32> = init_params(&cfg, 5).unwrap();
        let b: ModelParams<f32> = init_params(&cfg, 5).unwrap();
        assert_eq!(a, b);
        let c: ModelParams<f32> = init_params(&cfg, 6).unwrap();
        assert_ne!(a.conv1_w, c.conv1_w);
    }

    #[test]
    fn init_statistics() {
        // pool all weights of a large draw; sample mean within 3 sd of 0
        let cfg = ModelConfig::default();
        let p: ModelParams<f64> = init_params(&cfg, 11).unwrap();
        let mut values: Vec<f64> = Vec::new();
        values.extend(&p.conv1_w);
        values.extend(&p.conv2_w);
        values.extend(&p.fc1_w);
        values.extend(&p.fc2_w);
        assert!(values.len() > 100_000);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let tol = 3.0 * 0.05 / n.sqrt();
        assert!(mean.abs() < tol, "mean {mean} vs tol {tol}");
        let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        assert!((sd - 0.05).abs() < 0.002, "sd {sd}");
        // biases zero, BN identity
        assert!(p.conv1_b.iter().all(|&b| b == 0.0));
        assert!(p.bn1.gamma.iter().all(|&g| g == 1.0));
    }

    #[test]
    fn train_config_split_validation() {
        let mut t = TrainConfig::default();
        t.validate().unwrap();
        t.split = (0.5, 0.2, 0.2);
        assert!(t.validate().is_err());
    }
}
