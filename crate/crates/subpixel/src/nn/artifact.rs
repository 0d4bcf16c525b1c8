//! Versioned model artifact.
//!
//! Layout (little-endian):
//!   bytes 0..4    magic "SPXM"
//!   bytes 4..8    format version (u32, currently 1)
//!   bytes 8..12   header length H (u32)
//!   bytes 12..12+H  header JSON: config, standardization stats, training
//!                   log, and the tensor table (name + length, fixed order)
//!   remainder     tensor payload: f32 little-endian values, concatenated in
//!                 table order
//!
//! Tensor order: conv1_w, conv1_b, bn1_gamma, bn1_beta, bn1_run_mean,
//! bn1_run_var, conv2_w, conv2_b, bn2_gamma, bn2_beta, bn2_run_mean,
//! bn2_run_var, fc1_w, fc1_b, fc2_w, fc2_b.

use super::{BnParams, ModelConfig, ModelParams, TrainedModel, TrainingLog};
use crate::features::PlaneStats;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SPXM";
const VERSION: u32 = 1;
const MAX_HEADER: usize = 16 << 20;

#[derive(Serialize, Deserialize)]
struct ArtifactHeader {
    config: ModelConfig,
    stats: PlaneStats,
    log: TrainingLog,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

fn tensor_table(params: &ModelParams<f32>) -> Vec<(&'static str, &[f32])> {
    vec![
        ("conv1_w", &params.conv1_w),
        ("conv1_b", &params.conv1_b),
        ("bn1_gamma", &params.bn1.gamma),
        ("bn1_beta", &params.bn1.beta),
        ("bn1_run_mean", &params.bn1.run_mean),
        ("bn1_run_var", &params.bn1.run_var),
        ("conv2_w", &params.conv2_w),
        ("conv2_b", &params.conv2_b),
        ("bn2_gamma", &params.bn2.gamma),
        ("bn2_beta", &params.bn2.beta),
        ("bn2_run_mean", &params.bn2.run_mean),
        ("bn2_run_var", &params.bn2.run_var),
        ("fc1_w", &params.fc1_w),
        ("fc1_b", &params.fc1_b),
        ("fc2_w", &params.fc2_w),
        ("fc2_b", &params.fc2_b),
    ]
}

/// Tensor lengths implied by a validated config, in table order.
fn expected_lens(cfg: &ModelConfig) -> Vec<(&'static str, usize)> {
    let (c1, c2) = cfg.conv_channels;
    let ((k1h, k1w), (k2h, k2w)) = cfg.conv_kernels;
    let flat = cfg.flatten_width();
    let (fc1, out) = cfg.fc_widths;
    vec![
        ("conv1_w", c1 * crate::features::N_PLANES * k1h * k1w),
        ("conv1_b", c1),
        ("bn1_gamma", c1),
        ("bn1_beta", c1),
        ("bn1_run_mean", c1),
        ("bn1_run_var", c1),
        ("conv2_w", c2 * c1 * k2h * k2w),
        ("conv2_b", c2),
        ("bn2_gamma", c2),
        ("bn2_beta", c2),
        ("bn2_run_mean", c2),
        ("bn2_run_var", c2),
        ("fc1_w", fc1 * flat),
        ("fc1_b", fc1),
        ("fc2_w", out * fc1),
        ("fc2_b", out),
    ]
}

/// Serialize a trained model and its training log.
pub fn encode_model_bytes(model: &TrainedModel, log: &TrainingLog) -> Vec<u8> {
    let table = tensor_table(&model.params);
    let header = ArtifactHeader {
        config: model.config.clone(),
        stats: model.stats.clone(),
        log: log.clone(),
        tensors: table
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                len: t.len(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let payload_len: usize = table.iter().map(|(_, t)| t.len() * 4).sum();
    let mut out = Vec::with_capacity(12 + header_json.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, tensor) in table {
        for v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decode and validate a model artifact from raw bytes.
pub fn decode_model_bytes(bytes: &[u8]) -> Result<(TrainedModel, TrainingLog)> {
    if bytes.len() < 12 {
        return Err(Error::Artifact("file shorter than the fixed header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Artifact("bad magic, not a model artifact".into()));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(Error::Artifact(format!(
            "unsupported artifact version {version}"
        )));
    }
    let hlen = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    if hlen > MAX_HEADER || 12 + hlen > bytes.len() {
        return Err(Error::Artifact(format!("header length {hlen} out of range")));
    }
    let header: ArtifactHeader = serde_json::from_slice(&bytes[12..12 + hlen])
        .map_err(|e| Error::Artifact(format!("malformed header JSON: {e}")))?;
    header.config.validate()?;

    let expected = expected_lens(&header.config);
    if header.tensors.len() != expected.len() {
        return Err(Error::Artifact(format!(
            "expected {} tensors, header lists {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    for (entry, (name, len)) in header.tensors.iter().zip(&expected) {
        if entry.name != *name || entry.len != *len {
            return Err(Error::Artifact(format!(
                "tensor table mismatch: got {}({}) want {}({})",
                entry.name, entry.len, name, len
            )));
        }
    }
    let payload_len: usize = expected.iter().map(|(_, len)| len * 4).sum();
    let payload = &bytes[12 + hlen..];
    if payload.len() != payload_len {
        return Err(Error::SizeMismatch {
            expected: payload_len,
            actual: payload.len(),
        });
    }

    let mut offset = 0usize;
    let mut read = |len: usize| -> Result<Vec<f32>> {
        let raw = &payload[offset..offset + len * 4];
        offset += len * 4;
        let vals: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        for (i, v) in vals.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Artifact(format!(
                    "non-finite parameter at payload value {}",
                    offset / 4 - len + i
                )));
            }
        }
        Ok(vals)
    };
    let conv1_w = read(expected[0].1)?;
    let conv1_b = read(expected[1].1)?;
    let bn1_gamma = read(expected[2].1)?;
    let bn1_beta = read(expected[3].1)?;
    let bn1_run_mean = read(expected[4].1)?;
    let bn1_run_var = read(expected[5].1)?;
    let conv2_w = read(expected[6].1)?;
    let conv2_b = read(expected[7].1)?;
    let bn2_gamma = read(expected[8].1)?;
    let bn2_beta = read(expected[9].1)?;
    let bn2_run_mean = read(expected[10].1)?;
    let bn2_run_var = read(expected[11].1)?;
    let fc1_w = read(expected[12].1)?;
    let fc1_b = read(expected[13].1)?;
    let fc2_w = read(expected[14].1)?;
    let fc2_b = read(expected[15].1)?;

    if bn1_run_var.iter().chain(&bn2_run_var).any(|&v| v <= 0.0) {
        return Err(Error::Artifact(
            "running variances must be positive".into(),
        ));
    }
    for (plane, &sd) in header.stats.sd.iter().enumerate() {
        if !(sd.is_finite() && sd > 0.0) {
            return Err(Error::Artifact(format!(
                "standardization sd for plane {plane} must be positive, got {sd}"
            )));
        }
    }

    let params = ModelParams {
        conv1_w,
        conv1_b,
        bn1: BnParams {
            gamma: bn1_gamma,
            beta: bn1_beta,
            run_mean: bn1_run_mean,
            run_var: bn1_run_var,
        },
        conv2_w,
        conv2_b,
        bn2: BnParams {
            gamma: bn2_gamma,
            beta: bn2_beta,
            run_mean: bn2_run_mean,
            run_var: bn2_run_var,
        },
        fc1_w,
        fc1_b,
        fc2_w,
        fc2_b,
    };
    Ok((
        TrainedModel {
            config: header.config,
            params,
            stats: header.stats,
        },
        header.log,
    ))
}

pub fn save_model(path: impl AsRef<Path>, model: &TrainedModel, log: &TrainingLog) -> Result<()> {
    let bytes = encode_model_bytes(model, log);
    crate::raster::format::write_file(path.as_ref(), &bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(TrainedModel, TrainingLog)> {
    let bytes = crate::raster::format::read_file(path.as_ref())?;
    decode_model_bytes(&bytes)
}

/// JSON summary of a model (config, standardization stats, parameter count
/// and loss curves) for the artifact's sidecar export.
pub fn export_summary_json(model: &TrainedModel, log: &TrainingLog) -> String {
    #[derive(Serialize)]
    struct Summary<'a> {
        config: &'a ModelConfig,
        stats: &'a PlaneStats,
        trainable_params: usize,
        log: &'a TrainingLog,
    }
    serde_json::to_string_pretty(&Summary {
        config: &model.config,
        stats: &model.stats,
        trainable_params: super::param_count(&model.config),
        log,
    })
    .expect("summary serializes")
}
