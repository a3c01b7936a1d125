//! Deterministic trainable text encoder: hashed character bigram/trigram
//! counts projected through a trainable matrix. Language-agnostic (works on
//! any script) and differentiable through the projection only, which keeps
//! desk-scale training exact and reproducible.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::text::match_key;

/// Default query prefix for title-to-title matching.
pub const TASK_A_PROMPT: &str = "Given a job title, find the most relevant job titles.";
/// Default query prefix for title-to-skill matching.
pub const TASK_B_PROMPT: &str = "Given a job title, find the most relevant skills.";

/// Task-description prefix applied to queries only; candidates are always
/// embedded without it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }

    pub fn task_a() -> Self {
        Self::new(TASK_A_PROMPT)
    }

    pub fn task_b() -> Self {
        Self::new(TASK_B_PROMPT)
    }

    /// Prefix and query joined by a single space.
    pub fn apply(&self, query: &str) -> String {
        format!("{} {}", self.text, query)
    }
}

/// Trainable encoder parameters: a `hash_dim x embed_dim` projection over
/// hashed character n-gram counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoderParams {
    pub hash_dim: usize,
    pub embed_dim: usize,
    pub projection: Array2<f64>,
    pub seed: u64,
}

impl ToyEncoderParams {
    /// Random uniform init in [-1/sqrt(embed_dim), 1/sqrt(embed_dim)],
    /// reproducible from the seed.
    pub fn init(hash_dim: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        validate_dims(hash_dim, embed_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (embed_dim as f64).sqrt();
        let projection = Array2::from_shape_fn((hash_dim, embed_dim), |_| {
            (rng.random::<f64>() * 2.0 - 1.0) * scale
        });
        Ok(Self {
            hash_dim,
            embed_dim,
            projection,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        validate_dims(self.hash_dim, self.embed_dim)?;
        if self.projection.shape() != [self.hash_dim, self.embed_dim] {
            return Err(Error::Validation(format!(
                "projection shape {:?} does not match hash_dim x embed_dim ({} x {})",
                self.projection.shape(),
                self.hash_dim,
                self.embed_dim
            )));
        }
        if self.projection.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "projection matrix contains NaN/Inf".into(),
            ));
        }
        Ok(())
    }
}

fn validate_dims(hash_dim: usize, embed_dim: usize) -> Result<()> {
    if embed_dim < 2 || hash_dim < embed_dim {
        return Err(Error::Validation(format!(
            "encoder dims must satisfy hash_dim >= embed_dim >= 2, got {hash_dim} x {embed_dim}"
        )));
    }
    Ok(())
}

// Sentinels wrap every text before n-gram extraction, so even an empty string
// yields one bigram and encoding never produces an all-zero count vector.
const START: char = '\u{2}';
const END: char = '\u{3}';

/// FNV-1a; fixed here so hashed features stay stable across toolchains.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Sparse hashed counts of character 2- and 3-grams of the case-folded,
/// sentinel-wrapped text. Sorted by bucket for deterministic iteration.
pub(crate) fn hashed_counts(text: &str, hash_dim: usize) -> Vec<(usize, f64)> {
    let folded = match_key(text);
    let mut chars: Vec<char> = Vec::with_capacity(folded.chars().count() + 2);
    chars.push(START);
    chars.extend(folded.chars());
    chars.push(END);

    let mut counts: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
    let mut buf = String::new();
    for n in [2usize, 3] {
        if chars.len() < n {
            continue;
        }
        for window in chars.windows(n) {
            buf.clear();
            buf.extend(window.iter());
            let bucket = (fnv1a(buf.as_bytes()) % hash_dim as u64) as usize;
            *counts.entry(bucket).or_insert(0.0) += 1.0;
        }
    }
    let mut sparse: Vec<(usize, f64)> = counts.into_iter().collect();
    sparse.sort_unstable_by_key(|(bucket, _)| *bucket);
    sparse
}

/// Project sparse counts through the encoder, without normalization.
pub(crate) fn project(counts: &[(usize, f64)], params: &ToyEncoderParams) -> Array1<f64> {
    let mut out = Array1::zeros(params.embed_dim);
    for &(bucket, count) in counts {
        out.scaled_add(count, &params.projection.row(bucket));
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeStats {
    /// Inputs that were empty after trimming; they encode as the prompt
    /// alone (or as bare sentinels without one).
    pub empty_texts: usize,
}

/// Encode texts: hashed n-gram counts -> projection -> optional L2 norm.
/// A pure function of (texts, params, prompt, normalize); row ids default to
/// the input index.
pub fn encode<S: AsRef<str>>(
    texts: &[S],
    params: &ToyEncoderParams,
    prompt: Option<&PromptTemplate>,
    normalize: bool,
) -> Result<EmbeddingMatrix> {
    encode_with_stats(texts, params, prompt, normalize).map(|(m, _)| m)
}

/// [`encode`], also reporting how many inputs were empty.
pub fn encode_with_stats<S: AsRef<str>>(
    texts: &[S],
    params: &ToyEncoderParams,
    prompt: Option<&PromptTemplate>,
    normalize: bool,
) -> Result<(EmbeddingMatrix, EncodeStats)> {
    if texts.is_empty() {
        return Err(Error::EmptyInput("encode: texts"));
    }
    params.validate()?;
    let mut stats = EncodeStats::default();
    let mut vectors = Array2::zeros((texts.len(), params.embed_dim));
    for (i, text) in texts.iter().enumerate() {
        let text = text.as_ref();
        if text.trim().is_empty() {
            stats.empty_texts += 1;
        }
        let prompted;
        let effective = match prompt {
            Some(p) => {
                prompted = p.apply(text);
                prompted.as_str()
            }
            None => text,
        };
        let counts = hashed_counts(effective, params.hash_dim);
        let mut row = project(&counts, params);
        if normalize {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Validation(format!(
                    "row {i}: cannot normalize a zero embedding (degenerate projection)"
                )));
            }
            row.mapv_inplace(|x| x / norm);
        }
        vectors.row_mut(i).assign(&row);
    }
    let ids = (0..texts.len()).map(|i| i.to_string()).collect();
    Ok((EmbeddingMatrix::new(ids, vectors, normalize)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine;
    use approx::assert_abs_diff_eq;

    fn params() -> ToyEncoderParams {
        ToyEncoderParams::init(256, 16, 0).unwrap()
    }

    #[test]
    fn identical_texts_get_identical_rows() {
        let m = encode(&["welder", "welder"], &params(), None, true).unwrap();
        assert_eq!(m.row(0), m.row(1));
    }

    #[test]
    fn encode_is_pure() {
        let a = encode(&["data analyst"], &params(), None, true).unwrap();
        let b = encode(&["data analyst"], &params(), None, true).unwrap();
        assert_eq!(a.vectors(), b.vectors());
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let m = encode(&["a", "bb", "ccc", "软件工程师"], &params(), None, true).unwrap();
        for row in m.vectors().outer_iter() {
            assert_abs_diff_eq!(
                row.iter().map(|x| x * x).sum::<f64>().sqrt(),
                1.0,
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn prompt_changes_the_embedding() {
        let p = params();
        let plain = encode(&["welder"], &p, None, true).unwrap();
        let prompted = encode(&["welder"], &p, Some(&PromptTemplate::task_a()), true).unwrap();
        let sim = cosine(
            plain.row(0).as_slice().unwrap(),
            prompted.row(0).as_slice().unwrap(),
        )
        .unwrap();
        assert!(
            sim < 1.0 - 1e-9,
            "prompted embedding should differ, sim={sim}"
        );
    }

    #[test]
    fn empty_text_encodes_prompt_alone() {
        let p = params();
        let (with_empty, stats) =
            encode_with_stats(&[""], &p, Some(&PromptTemplate::task_a()), true).unwrap();
        assert_eq!(stats.empty_texts, 1);
        let prompt_only = encode(&[TASK_A_PROMPT.to_string() + " "], &p, None, true).unwrap();
        assert_eq!(with_empty.row(0), prompt_only.row(0));
    }

    #[test]
    fn empty_text_without_prompt_never_crashes() {
        // Sentinels guarantee at least one n-gram even for "".
        let m = encode(&[""], &params(), None, false).unwrap();
        assert!(m.row(0).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn casefold_makes_encoding_case_insensitive() {
        let m = encode(&["Welder", "welder"], &params(), None, false).unwrap();
        assert_eq!(m.row(0), m.row(1));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = ToyEncoderParams::init(128, 8, 42).unwrap();
        let b = ToyEncoderParams::init(128, 8, 42).unwrap();
        let c = ToyEncoderParams::init(128, 8, 43).unwrap();
        assert_eq!(a.projection, b.projection);
        assert_ne!(a.projection, c.projection);
    }

    #[test]
    fn init_rejects_degenerate_dims() {
        assert!(ToyEncoderParams::init(4, 8, 0).is_err());
        assert!(ToyEncoderParams::init(8, 1, 0).is_err());
    }

    #[test]
    fn default_prompts_are_the_documented_strings() {
        assert_eq!(
            PromptTemplate::task_a().text,
            "Given a job title, find the most relevant job titles."
        );
        assert_eq!(
            PromptTemplate::task_b().text,
            "Given a job title, find the most relevant skills."
        );
    }
}
