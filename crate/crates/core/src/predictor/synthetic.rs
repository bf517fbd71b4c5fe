//! Logistic predictor with known per-feature weights.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_version, Instance, FORMAT_VERSION, PLACEHOLDER_WORD};
use crate::perturb::{Mask, VisualFeatures};
use crate::predictor::{FeatureModel, Prediction, PredictionRequest, Predictor};

/// Bias plus additive word and box weights for one finding. Words absent
/// from `word_weights` and boxes absent from `box_weights` weigh 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindingWeights {
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub word_weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub box_weights: BTreeMap<usize, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRepr {
    format_version: u32,
    #[serde(default)]
    name: Option<String>,
    findings: BTreeMap<String, FindingWeights>,
}

/// `P(finding) = σ(b + Σ active word weights + Σ active box weights)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct SyntheticLogisticModel {
    pub name: Option<String>,
    pub findings: BTreeMap<String, FindingWeights>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl SyntheticLogisticModel {
    pub fn new(findings: BTreeMap<String, FindingWeights>) -> Result<Self> {
        let m = SyntheticLogisticModel {
            name: None,
            findings,
        };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        if self.findings.is_empty() {
            return Err(Error::Validation("synthetic model has no findings".into()));
        }
        for (label, f) in &self.findings {
            let finite = f.bias.is_finite()
                && f.word_weights.values().all(|w| w.is_finite())
                && f.box_weights.values().all(|w| w.is_finite());
            if !finite {
                return Err(Error::Validation(format!(
                    "synthetic model weights for {label:?} are not finite"
                )));
            }
        }
        Ok(())
    }

    fn probabilities(&self, active_words: &[&str], active_boxes: &[usize]) -> BTreeMap<String, f64> {
        self.findings
            .iter()
            .map(|(label, f)| {
                let mut z = f.bias;
                for w in active_words {
                    z += f.word_weights.get(*w).copied().unwrap_or(0.0);
                }
                for j in active_boxes {
                    z += f.box_weights.get(j).copied().unwrap_or(0.0);
                }
                (label.clone(), sigmoid(z))
            })
            .collect()
    }
}

/// Evaluates the model directly on masks.
pub fn synthetic_predict(
    model: &SyntheticLogisticModel,
    instance: &Instance,
    token_mask: &Mask,
    visual_mask: &Mask,
) -> Result<Prediction> {
    token_mask.check_len("token_mask", instance.num_word_features())?;
    visual_mask.check_len("visual_mask", instance.num_boxes())?;
    let words: Vec<&str> = instance
        .vocabulary()
        .iter()
        .zip(token_mask.bits())
        .filter(|(_, on)| **on)
        .map(|(w, _)| w.as_str())
        .collect();
    let boxes: Vec<usize> = visual_mask
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, on)| **on)
        .map(|(j, _)| j)
        .collect();
    let probabilities = model.probabilities(&words, &boxes);
    Ok(Prediction { probabilities })
}

impl Predictor for SyntheticLogisticModel {
    fn identifier(&self) -> String {
        format!(
            "synthetic-logistic:{}",
            self.name.as_deref().unwrap_or("unnamed")
        )
    }

    fn predict(&self, instance: &Instance, requests: &[PredictionRequest]) -> Result<Vec<Prediction>> {
        requests
            .iter()
            .map(|r| synthetic_predict(self, instance, &r.token_mask, &r.visual_mask))
            .collect()
    }
}

/// Feature-level view of the same model: a word is active when it survives
/// in the perturbed word list, a box when its position row was not zeroed.
impl FeatureModel for SyntheticLogisticModel {
    fn identifier(&self) -> String {
        Predictor::identifier(self)
    }

    fn predict_features(
        &self,
        _instance: &Instance,
        words: &[String],
        visual: &VisualFeatures,
    ) -> Result<BTreeMap<String, f64>> {
        let mut seen = HashSet::new();
        let unique: Vec<&str> = words
            .iter()
            .map(String::as_str)
            .filter(|w| *w != PLACEHOLDER_WORD && seen.insert(*w))
            .collect();
        let active: Vec<usize> = visual
            .boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != [0.0; 4])
            .map(|(j, _)| j)
            .collect();
        Ok(self.probabilities(&unique, &active))
    }
}

impl TryFrom<ModelRepr> for SyntheticLogisticModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        check_version(r.format_version)?;
        let m = SyntheticLogisticModel {
            name: r.name,
            findings: r.findings,
        };
        m.check()?;
        Ok(m)
    }
}

impl From<SyntheticLogisticModel> for ModelRepr {
    fn from(m: SyntheticLogisticModel) -> Self {
        ModelRepr {
            format_version: FORMAT_VERSION,
            name: m.name,
            findings: m.findings,
        }
    }
}
