//! InfoNCE contrastive loss over aligned (anchor, positive) batches.
//!
//! For a batch of N aligned pairs with cosine similarities s_ij between
//! anchor i and candidate j, each anchor's loss is
//!
//! ```text
//! l_i = -log( exp(s_ii) / sum_{j in D_i} exp(s_ij) )
//! ```
//!
//! where D_i contains the positive itself plus either all other in-batch
//! candidates or `k_negatives` of them sampled without replacement
//! (deterministically by seed). Similarities are raw cosines; the config's
//! `temperature` defaults to 1, which leaves them untouched. With
//! `symmetric` on, the candidate->anchor direction is averaged in. In-batch
//! candidates whose text duplicates anchor i's own positive are excluded
//! from D_i (false-negative guard); that guard only applies on the text
//! path, where duplicates are observable.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ContrastiveConfig, HeldoutEntry, LossValue, TrainLog, TrainLogEntry};
use crate::embedding::{similarity_matrix, EmbeddingMatrix, ToyEncoderParams};
use crate::error::{Checkpoint, Error, Result};
use crate::pairs::ContrastivePair;
use crate::text::match_key;

/// Per-anchor softmax over the selected denominator: the loss term plus the
/// probabilities needed for the gradient.
struct AnchorSoftmax {
    loss: f64,
    /// (candidate index, softmax probability) over the denominator set.
    probs: Vec<(usize, f64)>,
}

/// One direction of the loss over a similarity matrix. `excluded(i, j)` masks
/// candidate j out of anchor i's denominator (false-negative guard).
/// Similarities enter the softmax divided by `temperature` (1 = as written).
fn directional_softmaxes(
    sims: ArrayView2<'_, f64>,
    k_negatives: usize,
    temperature: f64,
    excluded: &dyn Fn(usize, usize) -> bool,
    rng: &mut ChaCha8Rng,
) -> Vec<AnchorSoftmax> {
    let n = sims.nrows();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let eligible: Vec<usize> = (0..n).filter(|&j| j != i && !excluded(i, j)).collect();
        let mut denom: Vec<usize> = vec![i];
        if k_negatives >= eligible.len() {
            denom.extend(eligible);
        } else {
            let picks = rand::seq::index::sample(rng, eligible.len(), k_negatives);
            denom.extend(picks.iter().map(|p| eligible[p]));
        }

        let s = |j: usize| sims[(i, j)] / temperature;
        let max = denom
            .iter()
            .map(|&j| s(j))
            .fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = denom.iter().map(|&j| (s(j) - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let loss = (lse - s(i)).max(0.0);
        let probs = denom.iter().map(|&j| (j, (s(j) - lse).exp())).collect();
        out.push(AnchorSoftmax { loss, probs });
    }
    out
}

fn check_pairs_preconditions(n: usize, cfg: &ContrastiveConfig) -> Result<()> {
    if n < 2 {
        return Err(Error::Validation(format!(
            "InfoNCE needs at least 2 aligned pairs, got {n}"
        )));
    }
    // Only the loss-relevant parts of the config; batch_size constrains the
    // training loop, not a single loss evaluation.
    if cfg.k_negatives < 1 {
        return Err(Error::Validation("k_negatives must be >= 1".into()));
    }
    if !(cfg.temperature.is_finite() && cfg.temperature > 0.0) {
        return Err(Error::Validation(format!(
            "temperature must be positive, got {}",
            cfg.temperature
        )));
    }
    Ok(())
}

/// InfoNCE loss over two aligned embedding matrices (row i of `u` pairs with
/// row i of `v`). No duplicate masking happens here: embeddings are opaque.
pub fn infonce_loss(
    u: &EmbeddingMatrix,
    v: &EmbeddingMatrix,
    cfg: &ContrastiveConfig,
) -> Result<LossValue> {
    check_pairs_preconditions(u.len(), cfg)?;
    if u.len() != v.len() {
        return Err(Error::Validation(format!(
            "aligned matrices must have equal row counts, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    let sims = similarity_matrix(u, v)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let no_mask = |_: usize, _: usize| false;
    let forward = directional_softmaxes(
        sims.view(),
        cfg.k_negatives,
        cfg.temperature,
        &no_mask,
        &mut rng,
    );
    let per_example = if cfg.symmetric {
        let sims_t = sims.t();
        let backward =
            directional_softmaxes(sims_t, cfg.k_negatives, cfg.temperature, &no_mask, &mut rng);
        forward
            .iter()
            .zip(&backward)
            .map(|(f, b)| (f.loss + b.loss) / 2.0)
            .collect()
    } else {
        forward.iter().map(|f| f.loss).collect()
    };
    Ok(LossValue::from_per_example(per_example))
}

/// A text batch prepared for the encoder: sparse hashed counts and raw
/// (unnormalized) projections for both sides.
struct EncodedBatch {
    anchor_counts: Vec<Vec<(usize, f64)>>,
    positive_counts: Vec<Vec<(usize, f64)>>,
    u_norms: Vec<f64>,
    v_norms: Vec<f64>,
    anchor_keys: Vec<String>,
    positive_keys: Vec<String>,
    /// Unit rows of u and v.
    u_hat: Array2<f64>,
    v_hat: Array2<f64>,
    /// sims[(i, j)] = cos(u_i, v_j)
    sims: Array2<f64>,
}

fn encode_batch(batch: &[ContrastivePair], params: &ToyEncoderParams) -> Result<EncodedBatch> {
    use crate::embedding::encoder_internals::{hashed_counts, project};

    params.validate()?;
    let n = batch.len();
    let d = params.embed_dim;
    let mut anchor_counts = Vec::with_capacity(n);
    let mut positive_counts = Vec::with_capacity(n);
    let mut u = Array2::zeros((n, d));
    let mut v = Array2::zeros((n, d));
    for (i, pair) in batch.iter().enumerate() {
        let xc = hashed_counts(&pair.anchor, params.hash_dim);
        let yc = hashed_counts(&pair.positive, params.hash_dim);
        u.row_mut(i).assign(&project(&xc, params));
        v.row_mut(i).assign(&project(&yc, params));
        anchor_counts.push(xc);
        positive_counts.push(yc);
    }
    let norms = |m: &Array2<f64>| -> Result<Vec<f64>> {
        m.outer_iter()
            .map(|row| {
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    Err(Error::ZeroVector)
                } else if !norm.is_finite() {
                    Err(Error::NonFinite("embedding norm overflowed".into()))
                } else {
                    Ok(norm)
                }
            })
            .collect()
    };
    let u_norms = norms(&u)?;
    let v_norms = norms(&v)?;
    let mut u_hat = u.clone();
    for (i, mut row) in u_hat.outer_iter_mut().enumerate() {
        row.mapv_inplace(|x| x / u_norms[i]);
    }
    let mut v_hat = v.clone();
    for (i, mut row) in v_hat.outer_iter_mut().enumerate() {
        row.mapv_inplace(|x| x / v_norms[i]);
    }
    let sims = u_hat.dot(&v_hat.t());
    Ok(EncodedBatch {
        anchor_counts,
        positive_counts,
        u_norms,
        v_norms,
        anchor_keys: batch.iter().map(|p| match_key(&p.anchor)).collect(),
        positive_keys: batch.iter().map(|p| match_key(&p.positive)).collect(),
        u_hat,
        v_hat,
        sims,
    })
}

fn batch_forward_backward(
    batch: &[ContrastivePair],
    params: &ToyEncoderParams,
    cfg: &ContrastiveConfig,
    want_grad: bool,
) -> Result<(LossValue, Option<Array2<f64>>)> {
    check_pairs_preconditions(batch.len(), cfg)?;
    let enc = encode_batch(batch, params)?;
    let n = batch.len();
    let d = params.embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // dL/dsims[(i, j)] with sims[(i, j)] = cos(u_i, v_j).
    let mut sim_grad = Array2::<f64>::zeros((n, n));
    let weight = if cfg.symmetric {
        1.0 / (2.0 * n as f64)
    } else {
        1.0 / n as f64
    };
    let weight = weight / cfg.temperature;

    let dup_positive = |i: usize, j: usize| enc.positive_keys[j] == enc.positive_keys[i];
    let forward = directional_softmaxes(
        enc.sims.view(),
        cfg.k_negatives,
        cfg.temperature,
        &dup_positive,
        &mut rng,
    );
    for (i, anchor) in forward.iter().enumerate() {
        for &(j, p) in &anchor.probs {
            sim_grad[(i, j)] += weight * (p - if j == i { 1.0 } else { 0.0 });
        }
    }

    let backward = if cfg.symmetric {
        let dup_anchor = |i: usize, j: usize| enc.anchor_keys[j] == enc.anchor_keys[i];
        let sims_t = enc.sims.t().into_owned();
        let backward = directional_softmaxes(
            sims_t.view(),
            cfg.k_negatives,
            cfg.temperature,
            &dup_anchor,
            &mut rng,
        );
        // Entry (i, j) of the transposed pass is cos(v_i, u_j) = sims[(j, i)].
        for (i, anchor) in backward.iter().enumerate() {
            for &(j, p) in &anchor.probs {
                sim_grad[(j, i)] += weight * (p - if j == i { 1.0 } else { 0.0 });
            }
        }
        Some(backward)
    } else {
        None
    };

    let per_example: Vec<f64> = match &backward {
        Some(b) => forward
            .iter()
            .zip(b)
            .map(|(f, g)| (f.loss + g.loss) / 2.0)
            .collect(),
        None => forward.iter().map(|f| f.loss).collect(),
    };
    let loss = LossValue::from_per_example(per_example);
    if !loss.value.is_finite() {
        return Err(Error::NonFinite(format!(
            "InfoNCE loss is not finite on a batch of {n} pairs"
        )));
    }
    if !want_grad {
        return Ok((loss, None));
    }

    // Backpropagate through cosine: with uh = u/|u|, vh = v/|v|,
    //   d cos(u_i, v_j) / d u_i = (vh_j - s_ij * uh_i) / |u_i|
    //   d cos(u_i, v_j) / d v_j = (uh_i - s_ij * vh_j) / |v_j|
    let mut du = Array2::<f64>::zeros((n, d));
    let mut dv = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        for j in 0..n {
            let g = sim_grad[(i, j)];
            if g == 0.0 {
                continue;
            }
            let s = enc.sims[(i, j)];
            for t in 0..d {
                du[(i, t)] += g * (enc.v_hat[(j, t)] - s * enc.u_hat[(i, t)]) / enc.u_norms[i];
                dv[(j, t)] += g * (enc.u_hat[(i, t)] - s * enc.v_hat[(j, t)]) / enc.v_norms[j];
            }
        }
    }

    let mut grad = Array2::<f64>::zeros((params.hash_dim, d));
    for i in 0..n {
        for &(bucket, count) in &enc.anchor_counts[i] {
            let mut row = grad.row_mut(bucket);
            row.scaled_add(count, &du.row(i));
        }
        for &(bucket, count) in &enc.positive_counts[i] {
            let mut row = grad.row_mut(bucket);
            row.scaled_add(count, &dv.row(i));
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "InfoNCE gradient is not finite on a batch of {n} pairs"
        )));
    }
    Ok((loss, Some(grad)))
}

/// InfoNCE loss of a text batch under the toy encoder, with the in-batch
/// duplicate guard applied.
pub fn infonce_loss_texts(
    batch: &[ContrastivePair],
    params: &ToyEncoderParams,
    cfg: &ContrastiveConfig,
) -> Result<LossValue> {
    batch_forward_backward(batch, params, cfg, false).map(|(loss, _)| loss)
}

#[derive(Debug, Clone)]
pub struct GradOutcome {
    pub grad: Array2<f64>,
    pub loss: LossValue,
}

/// Exact gradient of [`infonce_loss_texts`] with respect to the projection
/// matrix.
pub fn infonce_grad(
    batch: &[ContrastivePair],
    params: &ToyEncoderParams,
    cfg: &ContrastiveConfig,
) -> Result<GradOutcome> {
    let (loss, grad) = batch_forward_backward(batch, params, cfg, true)?;
    Ok(GradOutcome {
        grad: grad.expect("gradient requested"),
        loss,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ToyEncoderParams,
    pub log: TrainLog,
}

/// Minibatch gradient descent on InfoNCE with a constant learning rate:
/// `epochs * floor(n / batch_size)` steps over seed-shuffled batches.
/// When a held-out split is supplied its full-batch loss is logged per epoch.
/// A non-finite loss or gradient aborts with the last good parameters
/// attached to the error.
pub fn train_contrastive(
    pairs: &[ContrastivePair],
    params: &ToyEncoderParams,
    cfg: &ContrastiveConfig,
    heldout: Option<&[ContrastivePair]>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.validate()?;
    if pairs.len() < cfg.batch_size {
        return Err(Error::Validation(format!(
            "need at least batch_size ({}) pairs, got {}",
            cfg.batch_size,
            pairs.len()
        )));
    }
    let mut params = params.clone();
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { params, log });
    }

    // Full-denominator config for held-out evaluation.
    let heldout_cfg = |n: usize| ContrastiveConfig {
        k_negatives: (n - 1).max(1),
        batch_size: n.max(2),
        ..*cfg
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..pairs.len()).collect();
    let batches_per_epoch = pairs.len() / cfg.batch_size;
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng);
        for b in 0..batches_per_epoch {
            let batch: Vec<ContrastivePair> = indices[b * cfg.batch_size..(b + 1) * cfg.batch_size]
                .iter()
                .map(|&i| pairs[i].clone())
                .collect();
            let outcome = match infonce_grad(&batch, &params, cfg) {
                Ok(o) => o,
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        step,
                        last_good: Checkpoint::Encoder(Box::new(params)),
                    });
                }
                Err(e) => return Err(e),
            };
            log.steps.push(TrainLogEntry {
                step,
                lr: cfg.learning_rate,
                loss: outcome.loss.value,
            });
            let before = params.clone();
            params
                .projection
                .scaled_add(-cfg.learning_rate, &outcome.grad);
            if params.projection.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    step,
                    last_good: Checkpoint::Encoder(Box::new(before)),
                });
            }
            step += 1;
        }
        if let Some(held) = heldout {
            if held.len() >= 2 {
                let loss = infonce_loss_texts(held, &params, &heldout_cfg(held.len()))?;
                log.heldout.push(HeldoutEntry {
                    epoch,
                    heldout_loss: loss.value,
                });
            }
        }
    }
    Ok(TrainOutcome { params, log })
}
