//! Binary pair classifier: a linear head over the interaction vector
//! [u; v; |u-v|; u*v] of the normalized query/candidate embeddings, trained
//! with 2-way softmax cross-entropy and a slanted-triangular schedule. The
//! encoder projection and the head are optimized jointly. Ranking uses the
//! positive-class softmax probability.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClassifierConfig, LossValue, TrainLog, TrainLogEntry};
use crate::embedding::encoder_internals::{hashed_counts, project};
use crate::embedding::ToyEncoderParams;
use crate::error::{Checkpoint, Error, Result};
use crate::pairs::LabeledPair;

/// Encoder plus the 2-logit linear head over the 4*embed_dim interaction
/// features.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScorerParams {
    pub encoder: ToyEncoderParams,
    /// 2 x (4 * embed_dim)
    pub head_weights: Array2<f64>,
    /// 2
    pub head_bias: Array1<f64>,
}

impl PairScorerParams {
    /// Zero-initialized head on top of the given encoder: the untrained
    /// scorer outputs probability 0.5 for every pair.
    pub fn init(encoder: ToyEncoderParams) -> Result<Self> {
        encoder.validate()?;
        let feat = 4 * encoder.embed_dim;
        Ok(Self {
            encoder,
            head_weights: Array2::zeros((2, feat)),
            head_bias: Array1::zeros(2),
        })
    }

    pub fn feature_dim(&self) -> usize {
        4 * self.encoder.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.head_weights.shape() != [2, self.feature_dim()] {
            return Err(Error::Validation(format!(
                "head shape {:?} does not match 2 x {}",
                self.head_weights.shape(),
                self.feature_dim()
            )));
        }
        if self
            .head_weights
            .iter()
            .chain(self.head_bias.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("head weights contain NaN/Inf".into()));
        }
        Ok(())
    }
}

/// Everything the backward pass needs about one encoded side.
struct SideForward {
    counts: Vec<(usize, f64)>,
    norm: f64,
    hat: Array1<f64>,
}

fn encode_side(text: &str, params: &ToyEncoderParams) -> Result<SideForward> {
    let counts = hashed_counts(text, params.hash_dim);
    let raw = project(&counts, params);
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    if !norm.is_finite() {
        return Err(Error::NonFinite("embedding norm overflowed".into()));
    }
    let hat = raw.mapv(|x| x / norm);
    Ok(SideForward { counts, norm, hat })
}

struct PairForward {
    query: SideForward,
    candidate: SideForward,
    features: Array1<f64>,
    logits: [f64; 2],
}

fn pair_forward(query: &str, candidate: &str, params: &PairScorerParams) -> Result<PairForward> {
    let q = encode_side(query, &params.encoder)?;
    let c = encode_side(candidate, &params.encoder)?;
    let d = params.encoder.embed_dim;
    let mut features = Array1::zeros(4 * d);
    for t in 0..d {
        features[t] = q.hat[t];
        features[d + t] = c.hat[t];
        features[2 * d + t] = (q.hat[t] - c.hat[t]).abs();
        features[3 * d + t] = q.hat[t] * c.hat[t];
    }
    let mut logits = [params.head_bias[0], params.head_bias[1]];
    for (cls, logit) in logits.iter_mut().enumerate() {
        *logit += params.head_weights.row(cls).dot(&features);
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite(format!(
            "non-finite logits for pair ('{query}', '{candidate}')"
        )));
    }
    Ok(PairForward {
        query: q,
        candidate: c,
        features,
        logits,
    })
}

fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

fn cross_entropy(logits: [f64; 2], label: usize) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    (lse - logits[label]).max(0.0)
}

/// Mean binary cross-entropy of the 2-way softmax over the batch.
pub fn bce_loss(batch: &[LabeledPair], params: &PairScorerParams) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("bce_loss: batch"));
    }
    params.validate()?;
    let per_example = batch
        .iter()
        .map(|pair| {
            let fwd = pair_forward(&pair.query, &pair.document, params)?;
            Ok(cross_entropy(fwd.logits, pair.label as usize))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(LossValue::from_per_example(per_example))
}

/// Softmax probability of the positive class, strictly inside (0, 1).
/// Ranking by this score equals ranking by the logit margin.
pub fn score_pair(query: &str, candidate: &str, params: &PairScorerParams) -> Result<f64> {
    params.validate()?;
    let fwd = pair_forward(query, candidate, params)?;
    // sigmoid of the positive-vs-negative margin, numerically stable.
    let margin = fwd.logits[1] - fwd.logits[0];
    Ok(if margin >= 0.0 {
        1.0 / (1.0 + (-margin).exp())
    } else {
        let e = margin.exp();
        e / (1.0 + e)
    })
}

struct BatchGrads {
    head_weights: Array2<f64>,
    head_bias: Array1<f64>,
    projection: Array2<f64>,
    loss: f64,
}

fn batch_backward(batch: &[&LabeledPair], params: &PairScorerParams) -> Result<BatchGrads> {
    let d = params.encoder.embed_dim;
    let scale = 1.0 / batch.len() as f64;
    let mut gw = Array2::zeros((2, 4 * d));
    let mut gb = Array1::zeros(2);
    let mut gp = Array2::zeros((params.encoder.hash_dim, d));
    let mut loss_sum = 0.0;

    for pair in batch {
        let fwd = pair_forward(&pair.query, &pair.document, params)?;
        let label = pair.label as usize;
        loss_sum += cross_entropy(fwd.logits, label);
        let probs = softmax2(fwd.logits);
        let dz = [
            scale * (probs[0] - if label == 0 { 1.0 } else { 0.0 }),
            scale * (probs[1] - if label == 1 { 1.0 } else { 0.0 }),
        ];
        for (cls, &delta) in dz.iter().enumerate() {
            gb[cls] += delta;
            let mut row = gw.row_mut(cls);
            row.scaled_add(delta, &fwd.features);
        }

        // d loss / d features
        let mut dfeat = Array1::<f64>::zeros(4 * d);
        for (cls, &delta) in dz.iter().enumerate() {
            dfeat.scaled_add(delta, &params.head_weights.row(cls));
        }
        // Split into the four blocks and fold back onto the unit embeddings.
        let qh = &fwd.query.hat;
        let ch = &fwd.candidate.hat;
        let mut d_qh = Array1::<f64>::zeros(d);
        let mut d_ch = Array1::<f64>::zeros(d);
        for t in 0..d {
            let sign = (qh[t] - ch[t]).signum() * if qh[t] == ch[t] { 0.0 } else { 1.0 };
            d_qh[t] = dfeat[t] + dfeat[2 * d + t] * sign + dfeat[3 * d + t] * ch[t];
            d_ch[t] = dfeat[d + t] - dfeat[2 * d + t] * sign + dfeat[3 * d + t] * qh[t];
        }
        // Through the normalization: d_raw = (d_hat - (hat . d_hat) hat) / norm
        let fold = |side: &SideForward, d_hat: &Array1<f64>, gp: &mut Array2<f64>| {
            let dot = side.hat.dot(d_hat);
            let mut d_raw = d_hat - &(&side.hat * dot);
            d_raw.mapv_inplace(|x| x / side.norm);
            for &(bucket, count) in &side.counts {
                let mut row = gp.row_mut(bucket);
                row.scaled_add(count, &d_raw);
            }
        };
        fold(&fwd.query, &d_qh, &mut gp);
        fold(&fwd.candidate, &d_ch, &mut gp);
    }

    let loss = loss_sum * scale;
    if !loss.is_finite() || gw.iter().any(|g| !g.is_finite()) || gp.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(
            "classifier loss/gradient is not finite".into(),
        ));
    }
    Ok(BatchGrads {
        head_weights: gw,
        head_bias: gb,
        projection: gp,
        loss,
    })
}

#[derive(Debug, Clone)]
pub struct ClassifierOutcome {
    pub params: PairScorerParams,
    pub log: TrainLog,
}

/// Minibatch gradient descent over head and encoder with the
/// slanted-triangular schedule. Requires both classes in the data.
pub fn train_classifier(
    data: &[LabeledPair],
    params: &PairScorerParams,
    cfg: &ClassifierConfig,
) -> Result<ClassifierOutcome> {
    cfg.validate()?;
    params.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("train_classifier: data"));
    }
    let positives = data.iter().filter(|p| p.is_positive()).count();
    if positives == 0 || positives == data.len() {
        return Err(Error::Validation(
            "training data must contain both positive and negative pairs".into(),
        ));
    }

    let mut params = params.clone();
    let mut log = TrainLog::default();
    let batches_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;

    for _ in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledPair> = chunk.iter().map(|&i| &data[i]).collect();
            let lr = cfg.scheduler.lr_at(cfg.learning_rate, step, total_steps);
            let grads = match batch_backward(&batch, &params) {
                Ok(g) => g,
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        step,
                        last_good: Checkpoint::Scorer(Box::new(params)),
                    });
                }
                Err(e) => return Err(e),
            };
            log.steps.push(TrainLogEntry {
                step,
                lr,
                loss: grads.loss,
            });
            let before = params.clone();
            params.head_weights.scaled_add(-lr, &grads.head_weights);
            params.head_bias.scaled_add(-lr, &grads.head_bias);
            params.encoder.projection.scaled_add(-lr, &grads.projection);
            if params.validate().is_err() {
                return Err(Error::Diverged {
                    step,
                    last_good: Checkpoint::Scorer(Box::new(before)),
                });
            }
            step += 1;
        }
    }
    Ok(ClassifierOutcome { params, log })
}
