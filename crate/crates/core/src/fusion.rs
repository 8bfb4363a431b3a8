//! Late-fusion classification.
//!
//! Per-modality encoders emit class-score logits; the fusion head is a
//! trainable linear map on the concatenated logits (6 -> 3) followed by
//! softmax, the smallest merger that subsumes weighted averaging of the
//! unimodal classifiers. Only the head trains; encoders are frozen behind
//! the [`ModalityEncoder`] interface so real backbone outputs can be
//! substituted from score files.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_image, sanitize_text, Dataset, Label, Post};
use crate::dedup::dhash;
use crate::error::{Error, Result};
use crate::rng::{derive_stream, fnv1a, mix};

pub const NUM_CLASSES: usize = 3;
pub const FUSED_DIM: usize = 2 * NUM_CLASSES;

/// Per-class logits in label-code order (0, 1, 2).
pub type ScoreVector = [f64; NUM_CLASSES];

/// What an encoder does to raw content before scoring it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TransformSpec {
    /// Resized crop to a fixed square plus per-channel normalization.
    ResizedCropNormalize {
        side: u32,
        mean: [f32; 3],
        std: [f32; 3],
    },
    /// Whitespace tokenization hashed into integer ids below `vocab`.
    HashedTokens { vocab: usize },
    /// Adjacent-pixel difference bits on a 9x8 downscale.
    DifferenceBits,
    /// Scores computed elsewhere and looked up by post id.
    Precomputed,
}

/// A frozen per-modality classifier: deterministic post -> logits.
pub trait ModalityEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn transform(&self) -> TransformSpec;
    fn encode(&self, post: &Post) -> Result<ScoreVector>;
}

const TEXT_BINS: usize = 64;
const IMAGE_BITS: usize = 64;

/// Deterministic text stand-in: seeded hashed bag-of-words through a
/// fixed random linear map.
pub struct StubTextEncoder {
    seed: u64,
    weights: Vec<[f64; NUM_CLASSES]>,
}

impl StubTextEncoder {
    pub fn new(seed: u64) -> Self {
        let mut rng = derive_stream(seed, "stub-text-weights");
        let weights = (0..TEXT_BINS)
            .map(|_| {
                [
                    rng.next_gaussian_ih(),
                    rng.next_gaussian_ih(),
                    rng.next_gaussian_ih(),
                ]
            })
            .collect();
        StubTextEncoder { seed, weights }
    }
}

impl ModalityEncoder for StubTextEncoder {
    fn name(&self) -> &str {
        "stub-text"
    }

    fn transform(&self) -> TransformSpec {
        TransformSpec::HashedTokens { vocab: TEXT_BINS }
    }

    fn encode(&self, post: &Post) -> Result<ScoreVector> {
        let sanitized = sanitize_text(&post.text);
        if sanitized.is_empty() {
            return Err(Error::Data(format!(
                "post {}: missing modality: text",
                post.id
            )));
        }
        let tag = fnv1a(b"stub-text-feature");
        let mut bins = [0.0f64; TEXT_BINS];
        for token in sanitized.split_whitespace() {
            let h = mix(&[self.seed, tag, fnv1a(token.to_lowercase().as_bytes())]);
            let sign = if h >> 63 == 1 { 1.0 } else { -1.0 };
            bins[(h % TEXT_BINS as u64) as usize] += sign;
        }
        let mut scores = [0.0f64; NUM_CLASSES];
        for (bin, weight) in bins.iter().zip(&self.weights) {
            for c in 0..NUM_CLASSES {
                scores[c] += bin * weight[c];
            }
        }
        Ok(scores)
    }
}

/// Deterministic image stand-in: the 64 dHash bits through a fixed random
/// linear map.
pub struct StubImageEncoder {
    weights: Vec<[f64; NUM_CLASSES]>,
}

impl StubImageEncoder {
    pub fn new(seed: u64) -> Self {
        let mut rng = derive_stream(seed, "stub-image-weights");
        let weights = (0..IMAGE_BITS)
            .map(|_| {
                [
                    rng.next_gaussian_ih(),
                    rng.next_gaussian_ih(),
                    rng.next_gaussian_ih(),
                ]
            })
            .collect();
        StubImageEncoder { weights }
    }
}

impl ModalityEncoder for StubImageEncoder {
    fn name(&self) -> &str {
        "stub-image"
    }

    fn transform(&self) -> TransformSpec {
        TransformSpec::DifferenceBits
    }

    fn encode(&self, post: &Post) -> Result<ScoreVector> {
        let image_ref = post.image.as_ref().ok_or_else(|| {
            Error::Data(format!("post {}: missing modality: image", post.id))
        })?;
        let img = load_image(image_ref)
            .map_err(|e| Error::Data(format!("post {}: missing modality: image ({e})", post.id)))?;
        let hash = dhash(&img)?;
        let mut scores = [0.0f64; NUM_CLASSES];
        for (bit, weight) in self.weights.iter().enumerate() {
            if (hash.0 >> (63 - bit)) & 1 == 1 {
                for c in 0..NUM_CLASSES {
                    scores[c] += weight[c];
                }
            }
        }
        Ok(scores)
    }
}

/// Precomputed scores keyed by post id, loaded from a CSV of
/// `id,s0,s1,s2` rows. This is the substitution point for real backbone
/// outputs.
pub struct CsvScoreEncoder {
    name: String,
    scores: HashMap<String, ScoreVector>,
}

impl CsvScoreEncoder {
    pub fn from_path(name: impl Into<String>, path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| {
            Error::Data(format!("{}: {e}", path.display()))
        })?;
        let mut scores = HashMap::new();
        for row in reader.deserialize::<(String, f64, f64, f64)>() {
            let (id, s0, s1, s2) =
                row.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            scores.insert(id, [s0, s1, s2]);
        }
        Ok(CsvScoreEncoder {
            name: name.into(),
            scores,
        })
    }
}

impl ModalityEncoder for CsvScoreEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn transform(&self) -> TransformSpec {
        TransformSpec::Precomputed
    }

    fn encode(&self, post: &Post) -> Result<ScoreVector> {
        self.scores.get(&post.id).copied().ok_or_else(|| {
            Error::Data(format!(
                "post {}: no precomputed {} score",
                post.id, self.name
            ))
        })
    }
}

/// Trainable merger of two unimodal score vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionHead {
    /// Row-major 3x6 weight matrix over concat(text, image).
    pub w: [[f64; FUSED_DIM]; NUM_CLASSES],
    pub b: [f64; NUM_CLASSES],
    pub meta: TrainMeta,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub best_val_loss: f64,
}

impl FusionHead {
    pub fn zeros() -> Self {
        FusionHead {
            w: [[0.0; FUSED_DIM]; NUM_CLASSES],
            b: [0.0; NUM_CLASSES],
            meta: TrainMeta::default(),
        }
    }

    /// Head computing the element-wise mean of the two modalities.
    pub fn averaging() -> Self {
        let mut head = FusionHead::zeros();
        for c in 0..NUM_CLASSES {
            head.w[c][c] = 0.5;
            head.w[c][c + NUM_CLASSES] = 0.5;
        }
        head
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fusion head serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let head: FusionHead =
            serde_json::from_str(json).map_err(|e| Error::Data(format!("fusion head: {e}")))?;
        for row in &head.w {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("fusion head has non-finite weights".into()));
            }
        }
        if head.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("fusion head has non-finite bias".into()));
        }
        Ok(head)
    }
}

/// Gradient-descent settings for the fusion head.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            max_epochs: 200,
            batch_size: 32,
            patience: 10,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, value) in [
            ("max_epochs", self.max_epochs),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
        ] {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// One encoded training example: both modality scores plus the label.
#[derive(Clone, Copy, Debug)]
pub struct ScoredSample {
    pub text: ScoreVector,
    pub image: ScoreVector,
    pub label: Label,
}

/// Overflow-free softmax: max-subtracted, clipped to [-50, 50] before
/// exponentiation. Output components are positive and sum to 1 within
/// 1e-12.
pub fn softmax(logits: &ScoreVector) -> ScoreVector {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).clamp(-50.0, 50.0).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Fused logits: W . concat(text, image) + b.
pub fn fuse(text: &ScoreVector, image: &ScoreVector, head: &FusionHead) -> ScoreVector {
    let mut logits = head.b;
    for c in 0..NUM_CLASSES {
        for j in 0..NUM_CLASSES {
            logits[c] += head.w[c][j] * text[j];
            logits[c] += head.w[c][j + NUM_CLASSES] * image[j];
        }
    }
    logits
}

/// Zero-parameter late-fusion baseline: element-wise mean.
pub fn mean_fuse(text: &ScoreVector, image: &ScoreVector) -> ScoreVector {
    [
        (text[0] + image[0]) / 2.0,
        (text[1] + image[1]) / 2.0,
        (text[2] + image[2]) / 2.0,
    ]
}

/// Multiclass cross-entropy: -ln(probs[true_code]), probabilities clamped
/// at 1e-12.
pub fn cross_entropy(probs: &ScoreVector, true_code: u8) -> f64 {
    -probs[true_code as usize].max(1e-12).ln()
}

fn sample_loss(head: &FusionHead, sample: &ScoredSample) -> f64 {
    let probs = softmax(&fuse(&sample.text, &sample.image, head));
    cross_entropy(&probs, sample.label.code())
}

/// Mean cross-entropy over a set of samples.
pub fn batch_loss(head: &FusionHead, samples: &[ScoredSample]) -> f64 {
    samples.iter().map(|s| sample_loss(head, s)).sum::<f64>() / samples.len() as f64
}

fn concat(sample: &ScoredSample) -> [f64; FUSED_DIM] {
    let mut x = [0.0; FUSED_DIM];
    x[..NUM_CLASSES].copy_from_slice(&sample.text);
    x[NUM_CLASSES..].copy_from_slice(&sample.image);
    x
}

/// Analytic gradient of the mean cross-entropy over a batch:
/// d/d logits = softmax - onehot, propagated to W and b.
pub fn batch_gradient(
    head: &FusionHead,
    samples: &[ScoredSample],
) -> ([[f64; FUSED_DIM]; NUM_CLASSES], [f64; NUM_CLASSES]) {
    let mut grad_w = [[0.0; FUSED_DIM]; NUM_CLASSES];
    let mut grad_b = [0.0; NUM_CLASSES];
    let scale = 1.0 / samples.len() as f64;
    for sample in samples {
        let x = concat(sample);
        let probs = softmax(&fuse(&sample.text, &sample.image, head));
        for c in 0..NUM_CLASSES {
            let delta = (probs[c] - f64::from(sample.label.code() as usize == c)) * scale;
            grad_b[c] += delta;
            for j in 0..FUSED_DIM {
                grad_w[c][j] += delta * x[j];
            }
        }
    }
    (grad_w, grad_b)
}

/// Mini-batch gradient descent with validation-based early stopping.
///
/// Retains the parameters with the lowest validation loss seen, counting
/// the untrained initial head as a candidate, and stops after `patience`
/// epochs without improvement. Deterministic for a given seed: batches
/// are drawn by seeded shuffle and accumulated in order.
pub fn train_fusion(
    train: &[ScoredSample],
    val: &[ScoredSample],
    cfg: &TrainConfig,
) -> Result<FusionHead> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let mut head = FusionHead::zeros();
    let mut best = head.clone();
    let mut best_val = batch_loss(&head, val);
    let mut epochs_without_improvement = 0;
    let mut epochs_run = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = derive_stream(cfg.seed, "train-fusion");

    for _ in 0..cfg.max_epochs {
        rng.shuffle(&mut order);
        for batch_indices in order.chunks(cfg.batch_size) {
            let batch: Vec<ScoredSample> =
                batch_indices.iter().map(|&i| train[i]).collect();
            let (grad_w, grad_b) = batch_gradient(&head, &batch);
            for c in 0..NUM_CLASSES {
                head.b[c] -= cfg.learning_rate * grad_b[c];
                for j in 0..FUSED_DIM {
                    head.w[c][j] -= cfg.learning_rate * grad_w[c][j];
                }
            }
        }
        epochs_run += 1;
        let val_loss = batch_loss(&head, val);
        if val_loss < best_val {
            best_val = val_loss;
            best = head.clone();
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement >= cfg.patience {
                break;
            }
        }
    }
    best.meta = TrainMeta {
        epochs_run,
        best_val_loss: best_val,
    };
    Ok(best)
}

/// Argmax of the fused softmax; ties resolve to the lowest label code.
pub fn predict_scores(
    text: &ScoreVector,
    image: &ScoreVector,
    head: &FusionHead,
) -> (Label, ScoreVector) {
    let probs = softmax(&fuse(text, image, head));
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if probs[c] > probs[best] {
            best = c;
        }
    }
    (Label::from_code(best as u8).unwrap(), probs)
}

/// Encodes a post with both encoders and classifies it. Errors name the
/// missing modality.
pub fn predict(
    post: &Post,
    text_encoder: &dyn ModalityEncoder,
    image_encoder: &dyn ModalityEncoder,
    head: &FusionHead,
) -> Result<(Label, ScoreVector)> {
    let text = text_encoder.encode(post)?;
    let image = image_encoder.encode(post)?;
    Ok(predict_scores(&text, &image, head))
}

/// Encodes every post in a labeled dataset.
pub fn encode_dataset(
    dataset: &Dataset,
    text_encoder: &dyn ModalityEncoder,
    image_encoder: &dyn ModalityEncoder,
) -> Result<Vec<ScoredSample>> {
    dataset
        .posts
        .iter()
        .map(|post| {
            let label = post
                .label
                .ok_or_else(|| Error::Data(format!("post {} is unlabeled", post.id)))?;
            Ok(ScoredSample {
                text: text_encoder.encode(post)?,
                image: image_encoder.encode(post)?,
                label,
            })
        })
        .collect()
}

/// Compares the analytic batch gradient against central finite
/// differences (h = 1e-5) and returns the maximum relative error over all
/// 21 parameters.
pub fn gradient_check(head: &FusionHead, batch: &[ScoredSample]) -> f64 {
    const H: f64 = 1e-5;
    let (grad_w, grad_b) = batch_gradient(head, batch);
    let mut max_rel = 0.0f64;
    let mut check = |analytic: f64, perturb: &mut dyn FnMut(&mut FusionHead, f64)| {
        let mut plus = head.clone();
        perturb(&mut plus, H);
        let mut minus = head.clone();
        perturb(&mut minus, -H);
        let numeric = (batch_loss(&plus, batch) - batch_loss(&minus, batch)) / (2.0 * H);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    };
    for c in 0..NUM_CLASSES {
        for j in 0..FUSED_DIM {
            check(grad_w[c][j], &mut |h, eps| h.w[c][j] += eps);
        }
        check(grad_b[c], &mut |h, eps| h.b[c] += eps);
    }
    max_rel
}
