//! Checkpoints: parameters go to raw little-endian f32 blobs (the embedding
//! exchange layout) next to a JSON snapshot of shapes and config.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::PairScorerParams;
use crate::embedding::ToyEncoderParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    hash_dim: usize,
    embed_dim: usize,
    seed: u64,
    encoder_blob: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    head_blob: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    feature_dim: Option<usize>,
}

fn write_blob(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut blob = Vec::new();
    for v in values {
        blob.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, blob)?;
    Ok(())
}

fn read_blob(path: &Path, expected_len: usize) -> Result<Vec<f64>> {
    let blob = fs::read(path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    if blob.len() != expected_len * 4 {
        return Err(Error::Validation(format!(
            "{}: expected {} f32 values, found {} bytes",
            path.display(),
            expected_len,
            blob.len()
        )));
    }
    Ok(blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

const META_FILE: &str = "checkpoint.json";
const ENCODER_FILE: &str = "encoder.f32";
const HEAD_FILE: &str = "head.f32";

pub fn save_encoder_checkpoint(params: &ToyEncoderParams, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_blob(&dir.join(ENCODER_FILE), params.projection.iter().copied())?;
    let meta = CheckpointMeta {
        kind: "toy_encoder".into(),
        hash_dim: params.hash_dim,
        embed_dim: params.embed_dim,
        seed: params.seed,
        encoder_blob: ENCODER_FILE.into(),
        head_blob: None,
        feature_dim: None,
    };
    fs::write(
        dir.join(META_FILE),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(())
}

pub fn load_encoder_checkpoint(dir: impl AsRef<Path>) -> Result<ToyEncoderParams> {
    let dir = dir.as_ref();
    let meta: CheckpointMeta =
        serde_json::from_str(&fs::read_to_string(dir.join(META_FILE)).map_err(|e| {
            Error::Validation(format!(
                "cannot read {}: {e}",
                dir.join(META_FILE).display()
            ))
        })?)?;
    if meta.kind != "toy_encoder" {
        return Err(Error::Validation(format!(
            "expected a toy_encoder checkpoint, found '{}'",
            meta.kind
        )));
    }
    let values = read_blob(
        &dir.join(&meta.encoder_blob),
        meta.hash_dim * meta.embed_dim,
    )?;
    let projection = Array2::from_shape_vec((meta.hash_dim, meta.embed_dim), values)
        .map_err(|e| Error::Validation(format!("projection shape: {e}")))?;
    let params = ToyEncoderParams {
        hash_dim: meta.hash_dim,
        embed_dim: meta.embed_dim,
        projection,
        seed: meta.seed,
    };
    params.validate()?;
    Ok(params)
}

pub fn save_scorer_checkpoint(params: &PairScorerParams, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_blob(
        &dir.join(ENCODER_FILE),
        params.encoder.projection.iter().copied(),
    )?;
    // Head blob: weight rows then the two bias values.
    write_blob(
        &dir.join(HEAD_FILE),
        params
            .head_weights
            .iter()
            .copied()
            .chain(params.head_bias.iter().copied()),
    )?;
    let meta = CheckpointMeta {
        kind: "pair_scorer".into(),
        hash_dim: params.encoder.hash_dim,
        embed_dim: params.encoder.embed_dim,
        seed: params.encoder.seed,
        encoder_blob: ENCODER_FILE.into(),
        head_blob: Some(HEAD_FILE.into()),
        feature_dim: Some(params.feature_dim()),
    };
    fs::write(
        dir.join(META_FILE),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(())
}

pub fn load_scorer_checkpoint(dir: impl AsRef<Path>) -> Result<PairScorerParams> {
    let dir = dir.as_ref();
    let meta: CheckpointMeta =
        serde_json::from_str(&fs::read_to_string(dir.join(META_FILE)).map_err(|e| {
            Error::Validation(format!(
                "cannot read {}: {e}",
                dir.join(META_FILE).display()
            ))
        })?)?;
    if meta.kind != "pair_scorer" {
        return Err(Error::Validation(format!(
            "expected a pair_scorer checkpoint, found '{}'",
            meta.kind
        )));
    }
    let head_blob = meta
        .head_blob
        .as_ref()
        .ok_or_else(|| Error::Validation("pair_scorer checkpoint lacks a head blob".into()))?;
    let feature_dim = meta.feature_dim.unwrap_or(4 * meta.embed_dim);

    let proj_values = read_blob(
        &dir.join(&meta.encoder_blob),
        meta.hash_dim * meta.embed_dim,
    )?;
    let projection = Array2::from_shape_vec((meta.hash_dim, meta.embed_dim), proj_values)
        .map_err(|e| Error::Validation(format!("projection shape: {e}")))?;
    let head_values = read_blob(&dir.join(head_blob), 2 * feature_dim + 2)?;
    let (w, b) = head_values.split_at(2 * feature_dim);
    let head_weights = Array2::from_shape_vec((2, feature_dim), w.to_vec())
        .map_err(|e| Error::Validation(format!("head shape: {e}")))?;
    let head_bias = Array1::from_vec(b.to_vec());

    let params = PairScorerParams {
        encoder: ToyEncoderParams {
            hash_dim: meta.hash_dim,
            embed_dim: meta.embed_dim,
            projection,
            seed: meta.seed,
        },
        head_weights,
        head_bias,
    };
    params.validate()?;
    Ok(params)
}
