//! Embedding primitives: the id-carrying embedding matrix, cosine similarity,
//! the deterministic trainable hashed n-gram encoder, and the binary exchange
//! format used to plug in external embedding backends.

mod encoder;
mod exchange;

// Sparse featurization internals shared with the trainers.
pub(crate) mod encoder_internals {
    pub(crate) use super::encoder::{hashed_counts, project};
}

pub use encoder::{
    encode, encode_with_stats, EncodeStats, PromptTemplate, ToyEncoderParams, TASK_A_PROMPT,
    TASK_B_PROMPT,
};
pub use exchange::{export_embeddings, import_embeddings, ExchangeMeta};

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Row-aligned embeddings: `ids[i]` labels `vectors.row(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    vectors: Array2<f64>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Build a matrix, validating that ids and rows align, every entry is
    /// finite, and (when `normalized`) every row has unit L2 norm within 1e-6.
    pub fn new(ids: Vec<String>, vectors: Array2<f64>, normalized: bool) -> Result<Self> {
        if ids.len() != vectors.nrows() {
            return Err(Error::Validation(format!(
                "id count {} does not match row count {}",
                ids.len(),
                vectors.nrows()
            )));
        }
        for (i, row) in vectors.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "embedding row {i} contains NaN/Inf"
                )));
            }
            if normalized {
                let norm = l2_norm(row);
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::Validation(format!(
                        "row {i} claims to be normalized but has L2 norm {norm}"
                    )));
                }
            }
        }
        Ok(Self {
            ids,
            vectors,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }

    /// Replace the ids (e.g. with doc ids) keeping the vectors.
    pub fn with_ids(self, ids: Vec<String>) -> Result<Self> {
        Self::new(ids, self.vectors, self.normalized)
    }
}

pub(crate) fn l2_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity, clamped to [-1, 1] against rounding. Zero vectors have
/// no defined direction and are an error.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Pairwise cosine similarities: entry (i, j) is `cosine(U_i, V_j)`.
pub fn similarity_matrix(u: &EmbeddingMatrix, v: &EmbeddingMatrix) -> Result<Array2<f64>> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            got: v.dim(),
        });
    }
    let mut out = Array2::zeros((u.len(), v.len()));
    for i in 0..u.len() {
        let ui = u.row(i);
        let ui_slice = ui.as_slice().expect("contiguous row");
        for j in 0..v.len() {
            let vj = v.row(j);
            out[(i, j)] = cosine(ui_slice, vj.as_slice().expect("contiguous row"))?;
        }
    }
    Ok(out)
}
