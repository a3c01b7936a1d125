//! Embedding exchange format, the bridge for external (pretrained) embedding
//! backends: a raw little-endian f32 blob (row-major), a JSON sidecar with
//! count/dim/normalization, and an ids file with one id per line.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{l2_norm, EmbeddingMatrix};
use crate::error::{Error, Result};

/// JSON sidecar describing an embedding blob.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeMeta {
    pub count: usize,
    pub dim: usize,
    pub normalized: bool,
    /// Name of the ids file, relative to the sidecar's directory.
    pub ids_file: String,
}

/// Write the matrix as blob + sidecar + ids file. Values are stored as f32;
/// ids must not contain newlines.
pub fn export_embeddings(
    matrix: &EmbeddingMatrix,
    meta_path: impl AsRef<Path>,
    blob_path: impl AsRef<Path>,
    ids_path: impl AsRef<Path>,
) -> Result<()> {
    let meta_path = meta_path.as_ref();
    let ids_path = ids_path.as_ref();

    let mut blob = Vec::with_capacity(matrix.len() * matrix.dim() * 4);
    for value in matrix.vectors().iter() {
        blob.extend_from_slice(&(*value as f32).to_le_bytes());
    }
    fs::write(blob_path.as_ref(), blob)?;

    let mut ids_out = String::new();
    for id in matrix.ids() {
        if id.contains('\n') || id.contains('\r') {
            return Err(Error::Validation(format!("id '{id}' contains a newline")));
        }
        ids_out.push_str(id);
        ids_out.push('\n');
    }
    fs::write(ids_path, ids_out)?;

    let ids_file = ids_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Validation(format!("bad ids path {}", ids_path.display())))?
        .to_string();
    let meta = ExchangeMeta {
        count: matrix.len(),
        dim: matrix.dim(),
        normalized: matrix.is_normalized(),
        ids_file,
    };
    fs::write(meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Read blob + sidecar back into a matrix, validating size, finiteness, id
/// count, and the normalization claim.
pub fn import_embeddings(
    meta_path: impl AsRef<Path>,
    blob_path: impl AsRef<Path>,
) -> Result<EmbeddingMatrix> {
    let meta_path = meta_path.as_ref();
    let blob_path = blob_path.as_ref();

    let meta: ExchangeMeta =
        serde_json::from_str(&fs::read_to_string(meta_path).map_err(|e| {
            Error::Validation(format!("cannot read {}: {e}", meta_path.display()))
        })?)?;

    let blob = fs::read(blob_path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", blob_path.display())))?;
    let expected = meta
        .count
        .checked_mul(meta.dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Validation("count * dim overflows".into()))?;
    if blob.len() != expected {
        return Err(Error::Validation(format!(
            "{}: blob is {} bytes but sidecar says {} x {} x 4 = {} bytes",
            blob_path.display(),
            blob.len(),
            meta.count,
            meta.dim,
            expected
        )));
    }

    let mut values = Vec::with_capacity(meta.count * meta.dim);
    for chunk in blob.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "{}: blob contains NaN/Inf",
                blob_path.display()
            )));
        }
        values.push(v as f64);
    }
    let vectors = Array2::from_shape_vec((meta.count, meta.dim), values)
        .map_err(|e| Error::Validation(format!("blob shape: {e}")))?;

    let ids_path = meta_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&meta.ids_file);
    let ids: Vec<String> = fs::read_to_string(&ids_path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", ids_path.display())))?
        .lines()
        .map(|l| l.to_string())
        .collect();
    if ids.len() != meta.count {
        return Err(Error::Validation(format!(
            "{}: {} ids but sidecar says count {}",
            ids_path.display(),
            ids.len(),
            meta.count
        )));
    }

    if meta.normalized {
        for (i, row) in vectors.outer_iter().enumerate() {
            let norm = l2_norm(row);
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "{}: sidecar claims normalized but row {i} has L2 norm {norm}",
                    blob_path.display()
                )));
            }
        }
    }
    EmbeddingMatrix::new(ids, vectors, meta.normalized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::TempDir;

    fn paths(dir: &TempDir) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
        (
            dir.path().join("emb.json"),
            dir.path().join("emb.f32"),
            dir.path().join("emb.ids.txt"),
        )
    }

    #[test]
    fn round_trip_is_identity_for_f32_values() {
        let dir = TempDir::new().unwrap();
        let (meta, blob, ids) = paths(&dir);
        // f32-representable values round-trip exactly.
        let m = EmbeddingMatrix::new(
            vec!["a".into(), "b".into()],
            array![[0.5, -1.25, 3.0], [0.0625, 8.0, -0.5]],
            false,
        )
        .unwrap();
        export_embeddings(&m, &meta, &blob, &ids).unwrap();
        let back = import_embeddings(&meta, &blob).unwrap();
        assert_eq!(back.ids(), m.ids());
        assert_eq!(back.vectors(), m.vectors());
        assert_eq!(back.is_normalized(), m.is_normalized());
    }

    #[test]
    fn truncated_blob_is_size_error() {
        let dir = TempDir::new().unwrap();
        let (meta, blob, ids) = paths(&dir);
        let m = EmbeddingMatrix::new(vec!["a".into()], array![[1.0, 2.0]], false).unwrap();
        export_embeddings(&m, &meta, &blob, &ids).unwrap();
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        let err = import_embeddings(&meta, &blob).unwrap_err().to_string();
        assert!(err.contains("bytes"), "{err}");
    }

    #[test]
    fn false_normalization_claim_is_rejected() {
        let dir = TempDir::new().unwrap();
        let (meta, blob, ids) = paths(&dir);
        let m = EmbeddingMatrix::new(vec!["a".into()], array![[1.0, 0.0]], true).unwrap();
        export_embeddings(&m, &meta, &blob, &ids).unwrap();
        // Corrupt the blob so the row norm becomes 0.5.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0.5f32.to_le_bytes());
        bytes.extend_from_slice(&0.0f32.to_le_bytes());
        fs::write(&blob, bytes).unwrap();
        let err = import_embeddings(&meta, &blob).unwrap_err().to_string();
        assert!(err.contains("normalized"), "{err}");
    }

    #[test]
    fn nan_in_blob_is_rejected() {
        let dir = TempDir::new().unwrap();
        let (meta, blob, ids) = paths(&dir);
        let m = EmbeddingMatrix::new(vec!["a".into()], array![[1.0, 0.0]], false).unwrap();
        export_embeddings(&m, &meta, &blob, &ids).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        bytes.extend_from_slice(&0.0f32.to_le_bytes());
        fs::write(&blob, bytes).unwrap();
        assert!(matches!(
            import_embeddings(&meta, &blob),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn id_count_mismatch_is_rejected() {
        let dir = TempDir::new().unwrap();
        let (meta, blob, ids) = paths(&dir);
        let m = EmbeddingMatrix::new(vec!["a".into()], array![[1.0, 0.0]], false).unwrap();
        export_embeddings(&m, &meta, &blob, &ids).unwrap();
        fs::write(&ids, "a\nb\n").unwrap();
        let err = import_embeddings(&meta, &blob).unwrap_err().to_string();
        assert!(err.contains("ids"), "{err}");
    }
}
