//! Synthetic instance + logistic model + ideal annotation triples with
//! known hot features.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{BBox, ExpertAnnotation, ImageSize, Instance};
use crate::predictor::{FindingWeights, SyntheticLogisticModel};
use crate::seed::{self, tags};

const TERMS: [&str; 24] = [
    "heart", "size", "normal", "lungs", "clear", "no", "focal", "consolidation", "pleural",
    "effusion", "pneumothorax", "nodule", "opacity", "right", "upper", "lobe", "calcified",
    "granuloma", "mediastinal", "contour", "stable", "mild", "atelectasis", "bibasilar",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub id: String,
    pub finding: String,
    pub words: usize,
    pub boxes: usize,
    pub dim: usize,
    pub hot_words: usize,
    pub hot_boxes: usize,
    pub weight: f64,
    pub bias: f64,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            id: "synthetic-0".into(),
            finding: "nodule".into(),
            words: 20,
            boxes: 36,
            dim: 8,
            hot_words: 3,
            hot_boxes: 3,
            weight: 2.0,
            bias: -2.0,
            width: 512,
            height: 512,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub instance: Instance,
    pub model: SyntheticLogisticModel,
    /// Annotator whose words and boxes are exactly the hot features.
    pub annotation: ExpertAnnotation,
    pub hot_words: Vec<String>,
    pub hot_boxes: Vec<usize>,
}

fn word(i: usize) -> String {
    let base = TERMS[i % TERMS.len()];
    match i / TERMS.len() {
        0 => base.to_string(),
        n => format!("{base}{n}"),
    }
}

impl FixtureSpec {
    fn check(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.words == 0 || self.boxes == 0 || self.dim == 0 {
            problems.push("words, boxes and dim must be >= 1".to_string());
        }
        if self.hot_words > self.words {
            problems.push(format!("hot_words = {} exceeds words = {}", self.hot_words, self.words));
        }
        if self.hot_boxes > self.boxes {
            problems.push(format!("hot_boxes = {} exceeds boxes = {}", self.hot_boxes, self.boxes));
        }
        if self.width < 2 || self.height < 2 {
            problems.push("image must be at least 2x2".to_string());
        }
        if !self.weight.is_finite() || !self.bias.is_finite() {
            problems.push("weight and bias must be finite".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn generate(&self) -> Result<Fixture> {
        self.check()?;
        let mut rng = seed::stream_rng(seed::derive(self.seed, tags::FIXTURE), 0);
        let mut words: Vec<String> = (0..self.words).map(word).collect();
        words.shuffle(&mut rng);
        let mut picks: Vec<usize> = (0..self.words).collect();
        picks.shuffle(&mut rng);
        let hot_words: Vec<String> = picks[..self.hot_words].iter().map(|&i| words[i].clone()).collect();
        let mut box_picks: Vec<usize> = (0..self.boxes).collect();
        box_picks.shuffle(&mut rng);
        let mut hot_boxes = box_picks[..self.hot_boxes].to_vec();
        hot_boxes.sort_unstable();

        let (w, h) = (self.width as f64, self.height as f64);
        let boxes: Vec<BBox> = (0..self.boxes)
            .map(|_| {
                let x1 = rng.gen_range(0.0..w - 1.0).floor();
                let y1 = rng.gen_range(0.0..h - 1.0).floor();
                let x2 = rng.gen_range(x1 + 1.0..=w.min(x1 + w / 3.0).max(x1 + 1.0)).ceil();
                let y2 = rng.gen_range(y1 + 1.0..=h.min(y1 + h / 3.0).max(y1 + 1.0)).ceil();
                BBox::new(x1, y1, x2.min(w), y2.min(h))
            })
            .collect::<Result<_>>()?;
        let embeddings: Vec<Vec<f64>> = (0..self.boxes)
            .map(|_| (0..self.dim).map(|_| rng.gen_range(0.0..4.0)).collect())
            .collect();
        let instance = Instance::new(
            self.id.clone(),
            words,
            ImageSize {
                width: self.width,
                height: self.height,
            },
            boxes,
            embeddings,
            BTreeSet::from([self.finding.clone()]),
        )?;
        let weights = FindingWeights {
            bias: self.bias,
            word_weights: hot_words.iter().map(|w| (w.clone(), self.weight)).collect(),
            box_weights: hot_boxes.iter().map(|&j| (j, self.weight)).collect(),
        };
        let mut model = SyntheticLogisticModel::new(BTreeMap::from([(self.finding.clone(), weights)]))?;
        model.name = Some(self.id.clone());
        let annotation = ExpertAnnotation::new(
            "oracle",
            self.id.clone(),
            [self.finding.as_str()],
            hot_words.iter().map(String::as_str),
            hot_boxes.iter().map(|&j| instance.boxes()[j]).collect(),
        )?;
        Ok(Fixture {
            instance,
            model,
            annotation,
            hot_words,
            hot_boxes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_shape() {
        let f = FixtureSpec::default().generate().unwrap();
        assert_eq!(f.instance.num_word_features(), 20);
        assert_eq!(f.instance.num_boxes(), 36);
        assert_eq!(f.instance.embedding_dim(), 8);
        assert_eq!(f.hot_words.len(), 3);
        assert_eq!(f.hot_boxes.len(), 3);
        let w = &f.model.findings["nodule"];
        assert_eq!(w.bias, -2.0);
        assert!(w.word_weights.values().all(|v| *v == 2.0));
        assert_eq!(f.annotation.words.len(), 3);
        f.annotation.check_against(&f.instance).unwrap();
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = FixtureSpec::default().generate().unwrap();
        let b = FixtureSpec::default().generate().unwrap();
        assert_eq!(a, b);
        let c = FixtureSpec {
            seed: 1,
            ..Default::default()
        }
        .generate()
        .unwrap();
        assert_ne!(a.instance, c.instance);
    }

    #[test]
    fn invalid_counts_are_config_errors() {
        let err = FixtureSpec {
            hot_words: 21,
            ..Default::default()
        }
        .generate()
        .unwrap_err();
        assert_eq!(err.class(), crate::error::ErrorClass::Config);
    }

    #[test]
    fn large_vocabularies_stay_unique() {
        let f = FixtureSpec {
            words: 60,
            ..Default::default()
        }
        .generate()
        .unwrap();
        assert_eq!(f.instance.num_word_features(), 60);
    }
}
