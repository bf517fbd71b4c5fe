//! Binomial perturbation masks and their application to word and visual
//! features.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, PredictorError, Result};
use crate::model::{BBox, Instance, StrategyKind, PLACEHOLDER_WORD};
use crate::seed::stream_rng;

/// Binary activation vector over one modality's features; `true` keeps the
/// feature, `false` inactivates it. Serialized as an array of 0/1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn ones(len: usize) -> Self {
        Mask(vec![true; len])
    }

    pub fn zeros(len: usize) -> Self {
        Mask(vec![false; len])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Mask(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count_active(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn is_all_ones(&self) -> bool {
        self.0.iter().all(|b| *b)
    }

    pub(crate) fn check_len(&self, what: &'static str, expected: usize) -> Result<(), PredictorError> {
        if self.len() != expected {
            return Err(PredictorError::MaskLength {
                what,
                found: self.len(),
                expected,
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<u8>> for Mask {
    type Error = String;

    fn try_from(v: Vec<u8>) -> std::result::Result<Self, String> {
        v.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(format!("mask entries must be 0 or 1, got {other}")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Mask)
    }
}

impl From<Mask> for Vec<u8> {
    fn from(m: Mask) -> Self {
        m.0.into_iter().map(u8::from).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Visual,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Visual => "visual",
        })
    }
}

/// `S` masks over `F` features of one modality. Row 0 is the unperturbed
/// original.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationBatch {
    pub modality: Modality,
    feature_count: usize,
    masks: Vec<Mask>,
}

impl PerturbationBatch {
    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn samples(&self) -> usize {
        self.masks.len()
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn row(&self, i: usize) -> &Mask {
        &self.masks[i]
    }
}

/// Draws `samples` masks over `feature_count` features. Row 0 is all ones;
/// in every other row each entry is independently 0 with probability `p`.
/// Row `i` is drawn from stream `i` of `seed`.
pub fn sample_masks(
    modality: Modality,
    feature_count: usize,
    samples: usize,
    p: f64,
    seed: u64,
) -> Result<PerturbationBatch> {
    if feature_count == 0 {
        return Err(Error::Argument("feature_count must be >= 1".into()));
    }
    if samples == 0 {
        return Err(Error::Argument("samples must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("p must be in [0, 1] (got {p})")));
    }
    let mut masks = Vec::with_capacity(samples);
    masks.push(Mask::ones(feature_count));
    for row in 1..samples {
        let mut rng = stream_rng(seed, row as u64);
        let bits = (0..feature_count).map(|_| !rng.gen_bool(p)).collect();
        masks.push(Mask(bits));
    }
    Ok(PerturbationBatch {
        modality,
        feature_count,
        masks,
    })
}

/// Replaces every occurrence of each inactivated unique word by
/// [`PLACEHOLDER_WORD`]. `mask` is indexed by [`Instance::vocabulary`].
pub fn apply_text_mask(instance: &Instance, mask: &Mask) -> Result<Vec<String>> {
    mask.check_len("token_mask", instance.num_word_features())?;
    let inactive: std::collections::HashSet<&str> = instance
        .vocabulary()
        .iter()
        .zip(mask.bits())
        .filter(|(_, on)| !**on)
        .map(|(w, _)| w.as_str())
        .collect();
    Ok(instance
        .words()
        .iter()
        .map(|w| {
            if inactive.contains(w.as_str()) {
                PLACEHOLDER_WORD.to_string()
            } else {
                w.clone()
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InactivationStrategy {
    pub kind: StrategyKind,
    pub mean_std_k: f64,
}

impl InactivationStrategy {
    pub fn new(kind: StrategyKind, mean_std_k: f64) -> Result<Self> {
        if !mean_std_k.is_finite() {
            return Err(Error::Argument("mean_std_k must be finite".into()));
        }
        Ok(InactivationStrategy { kind, mean_std_k })
    }
}

impl Default for InactivationStrategy {
    fn default() -> Self {
        InactivationStrategy {
            kind: StrategyKind::Zero,
            mean_std_k: 2.0,
        }
    }
}

/// Box positions and embeddings after masking. Inactivated box rows are
/// `[0, 0, 0, 0]`, so they are raw arrays rather than validated boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatures {
    pub boxes: Vec<[f64; 4]>,
    pub embeddings: Vec<Vec<f64>>,
}

impl VisualFeatures {
    pub fn of(instance: &Instance) -> Self {
        VisualFeatures {
            boxes: instance.boxes().iter().map(|b| b.to_array()).collect(),
            embeddings: instance.embeddings().to_vec(),
        }
    }
}

fn mean_and_std(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    // shifted by the first element so a constant row has exactly its value as mean
    let base = row[0];
    let mean = base + row.iter().map(|v| v - base).sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Inactivates every box whose mask bit is 0. Random draws for row `i` come
/// from stream `i` of `seed`; active rows are copied unchanged.
pub fn apply_visual_mask(
    boxes: &[BBox],
    embeddings: &[Vec<f64>],
    mask: &Mask,
    strategy: &InactivationStrategy,
    seed: u64,
) -> Result<VisualFeatures> {
    if boxes.len() != embeddings.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} boxes but {} embedding rows",
            boxes.len(),
            embeddings.len()
        )));
    }
    mask.check_len("visual_mask", boxes.len())?;
    let mut out = VisualFeatures {
        boxes: boxes.iter().map(|b| b.to_array()).collect(),
        embeddings: embeddings.to_vec(),
    };
    for (i, active) in mask.bits().iter().enumerate() {
        if *active {
            continue;
        }
        out.boxes[i] = [0.0; 4];
        let row = &mut out.embeddings[i];
        match strategy.kind {
            StrategyKind::Zero => row.iter_mut().for_each(|v| *v = 0.0),
            StrategyKind::MeanStd => {
                let (mean, std) = mean_and_std(row);
                let mut rng = stream_rng(seed, i as u64);
                for v in row.iter_mut() {
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    *v = mean + strategy.mean_std_k * std * sign;
                }
            }
            StrategyKind::Randomize => {
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut rng = stream_rng(seed, i as u64);
                for v in row.iter_mut() {
                    *v = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
                }
            }
        }
    }
    Ok(out)
}

/// [`apply_visual_mask`] on an instance's own features.
pub fn apply_instance_visual_mask(
    instance: &Instance,
    mask: &Mask,
    strategy: &InactivationStrategy,
    seed: u64,
) -> Result<VisualFeatures> {
    apply_visual_mask(instance.boxes(), instance.embeddings(), mask, strategy, seed)
}
