//! Training loop (Adam + log-cosh, fixed epoch budget, no early stopping)
//! and prediction.

use super::adam::AdamState;
use super::network::Network;
use super::{logcosh_loss, ModelConfig, ModelParams, Scalar, TrainConfig};
use crate::features::{InputTensor, PlaneStats, N_PLANES};
use crate::reference::FractionMap;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Forward-pass mode: train uses batch statistics and active dropout, infer
/// uses running statistics and no dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A trained network: parameters, architecture and the input
/// standardization statistics it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub stats: PlaneStats,
}

/// Per-epoch loss curves.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct TrainingLog {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

/// Standardize every sample of a tensor into a flat `[n][6*w*w]` buffer.
pub(crate) fn standardized_values<T: Scalar>(stats: &PlaneStats, tensor: &InputTensor) -> Vec<T> {
    let w = tensor.window();
    let plane_len = w * w;
    let row = N_PLANES * plane_len;
    let mut out = vec![T::zero(); tensor.n() * row];
    for s in 0..tensor.n() {
        let sample = tensor.sample(s);
        let dst = &mut out[s * row..(s + 1) * row];
        for plane in 0..N_PLANES {
            let mu = stats.mean[plane];
            let sd = stats.sd[plane];
            for k in 0..plane_len {
                let idx = plane * plane_len + k;
                dst[idx] = T::from_f64((sample[idx] as f64 - mu) / sd);
            }
        }
    }
    out
}

/// One optimization step on a standardized batch. Returns the batch loss.
pub fn train_step<T: Scalar, R: Rng>(
    net: &Network,
    params: &mut ModelParams<T>,
    adam: &mut AdamState<T>,
    tcfg: &TrainConfig,
    input: &[T],
    targets: &[T],
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    let (out, cache) = net.forward_train(params, input, n, rng)?;
    debug_assert_eq!(out.len(), targets.len());
    let loss = logcosh_loss(&out, targets).as_f64();
    if !loss.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite loss {loss} on a batch of {n} at adam step {}",
            adam.step_count() + 1
        )));
    }
    let count = T::from_f64(out.len() as f64);
    let grad_out: Vec<T> = out
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (p - t).tanh() / count)
        .collect();
    let grads = net.backward(params, &cache, &grad_out);
    adam.update(params, &grads, tcfg);
    Ok(loss)
}

fn infer_loss<T: Scalar>(
    net: &Network,
    params: &ModelParams<T>,
    values: &[T],
    targets: &[T],
    n: usize,
    row: usize,
) -> Result<f64> {
    let mut total = 0.0f64;
    let chunk = 1024usize;
    let mut start = 0usize;
    while start < n {
        let len = chunk.min(n - start);
        let out = net.forward_infer(params, &values[start * row..(start + len) * row], len)?;
        let t = &targets[start * 2..(start + len) * 2];
        total += logcosh_loss(&out, t).as_f64() * (len * 2) as f64;
        start += len;
    }
    Ok(total / (n * 2) as f64)
}

/// Train a network for exactly `tcfg.epochs` epochs of shuffled batches.
/// Standardization statistics are estimated on the training tensor and
/// carried in the returned model. Validation loss is recorded per epoch when
/// a validation set is supplied.
pub fn fit(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    train: &InputTensor,
    train_targets: &[[f32; 2]],
    val: Option<(&InputTensor, &[[f32; 2]])>,
) -> Result<(TrainedModel, TrainingLog)> {
    cfg.validate()?;
    tcfg.validate()?;
    if train.n() == 0 {
        return Err(Error::EmptyInput("no training samples".to_string()));
    }
    if train.n() != train_targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples but {} targets",
            train.n(),
            train_targets.len()
        )));
    }
    if cfg.window != train.window() {
        return Err(Error::DimensionMismatch(format!(
            "model window {} vs tensor window {}",
            cfg.window,
            train.window()
        )));
    }

    let net = Network::new(cfg)?;
    let stats = PlaneStats::fit(train);
    let row = N_PLANES * cfg.window * cfg.window;
    let values: Vec<f32> = standardized_values(&stats, train);
    let targets: Vec<f32> = train_targets.iter().flat_map(|t| [t[0], t[1]]).collect();
    let val_data = val
        .map(|(vt, vy)| -> Result<_> {
            if vt.n() != vy.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} validation samples but {} targets",
                    vt.n(),
                    vy.len()
                )));
            }
            let vv: Vec<f32> = standardized_values(&stats, vt);
            let vt_flat: Vec<f32> = vy.iter().flat_map(|t| [t[0], t[1]]).collect();
            Ok((vv, vt_flat, vt.n()))
        })
        .transpose()?;

    let mut params: ModelParams<f32> = super::init_params(cfg, tcfg.seed)?;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut log = TrainingLog::default();

    let n = train.n();
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_in = vec![0.0f32; tcfg.batch_size * row];
    let mut batch_t = vec![0.0f32; tcfg.batch_size * 2];

    for _epoch in 0..tcfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(tcfg.batch_size) {
            let bn = chunk.len();
            for (bi, &si) in chunk.iter().enumerate() {
                batch_in[bi * row..(bi + 1) * row]
                    .copy_from_slice(&values[si * row..(si + 1) * row]);
                batch_t[bi * 2..(bi + 1) * 2].copy_from_slice(&targets[si * 2..(si + 1) * 2]);
            }
            let loss = train_step(
                &net,
                &mut params,
                &mut adam,
                tcfg,
                &batch_in[..bn * row],
                &batch_t[..bn * 2],
                bn,
                &mut rng,
            )?;
            epoch_loss += loss * bn as f64;
        }
        log.train_loss.push(epoch_loss / n as f64);
        if let Some((vv, vt, vn)) = &val_data {
            log.val_loss.push(infer_loss(&net, &params, vv, vt, *vn, row)?);
        }
    }

    Ok((
        TrainedModel {
            config: cfg.clone(),
            params,
            stats,
        },
        log,
    ))
}

/// Raw fraction predictions per tensor sample, clipped to [0, 1]. No
/// sum-to-one renormalization is applied: a cell may predict e.g. (0.7, 0.6).
pub fn predict_rows(model: &TrainedModel, tensor: &InputTensor) -> Result<Vec<[f32; 2]>> {
    if tensor.window() != model.config.window {
        return Err(Error::DimensionMismatch(format!(
            "model window {} vs tensor window {}",
            model.config.window,
            tensor.window()
        )));
    }
    let net = Network::new(&model.config)?;
    let row = N_PLANES * model.config.window * model.config.window;
    let values: Vec<f32> = standardized_values(&model.stats, tensor);
    let mut out = Vec::with_capacity(tensor.n());
    let chunk = 1024usize;
    let mut start = 0usize;
    while start < tensor.n() {
        let len = chunk.min(tensor.n() - start);
        let raw = net.forward_infer(&model.params, &values[start * row..(start + len) * row], len)?;
        for i in 0..len {
            out.push([raw[i * 2].clamp(0.0, 1.0), raw[i * 2 + 1].clamp(0.0, 1.0)]);
        }
        start += len;
    }
    Ok(out)
}

/// Predict a fraction map over the tensor's source grid; cells not covered
/// by the tensor's selection stay invalid.
pub fn predict(model: &TrainedModel, tensor: &InputTensor) -> Result<FractionMap> {
    let rows = predict_rows(model, tensor)?;
    let mut map = FractionMap::new(tensor.grid_rows(), tensor.grid_cols());
    for (&(r, c), pred) in tensor.sample_index().iter().zip(&rows) {
        let i = r * map.cols + c;
        map.builtup[i] = pred[0];
        map.vegetation[i] = pred[1];
        map.valid[i] = true;
    }
    Ok(map)
}
