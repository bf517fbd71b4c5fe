//! The two multi-modal explanation pipelines.
//!
//! *Separate* fits one surrogate on word masks (boxes held at the original)
//! and one on box masks (words held at the original), then merges the two
//! rankings. *Simultaneous* pairs word mask `i` with box mask `i`, weights
//! the pair by the combined kernel weights and fits one surrogate on the
//! concatenated design.
//!
//! Sub-seeds: word masks use `derive(seed, "text")`, box masks
//! `derive(seed, "visual")`, per-sample inactivation seeds
//! `derive_index(derive(visual_seed, "strategy"), i)`. Both modes share these
//! streams, so the same seed perturbs the same way in either mode.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{batch_weights, combine_batch};
use crate::model::{
    BoxItem, ExplainerConfig, Explanation, FitDiagnostic, Instance, Mode, Provenance, Target,
    WordItem,
};
use crate::perturb::{sample_masks, Mask, Modality, PerturbationBatch};
use crate::predictor::{PredictionRequest, Predictor};
use crate::seed::{self, tags};
use crate::surrogate::{fit_weighted_ridge, rank_coefficients, DesignMatrix, RidgeOptions, SurrogateFit};

/// Output of one single-modality run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityRun<T> {
    pub items: Vec<T>,
    pub fit: SurrogateFit,
    /// Probability of the finding on the unperturbed input.
    pub prediction: f64,
    pub requests: usize,
    pub seed: u64,
}

pub type TextRun = ModalityRun<WordItem>;
pub type VisualRun = ModalityRun<BoxItem>;

fn check_finding(finding: &str, config: &ExplainerConfig) -> Result<()> {
    if !config.labels.contains(finding) {
        return Err(Error::Config(format!(
            "unknown finding {finding:?}; configured labels: {}",
            config.labels
        )));
    }
    Ok(())
}

fn text_seed(config: &ExplainerConfig) -> u64 {
    seed::derive(config.seed, tags::TEXT)
}

fn visual_seed(config: &ExplainerConfig) -> u64 {
    seed::derive(config.seed, tags::VISUAL)
}

fn strategy_seed(config: &ExplainerConfig, sample: usize) -> u64 {
    seed::derive_index(seed::derive(visual_seed(config), tags::STRATEGY), sample as u64)
}

/// Queries the predictor for every (word mask, box mask) pair in
/// `batch_size` chunks and returns the finding's probability per sample, in
/// sample order.
fn query(
    predictor: &dyn Predictor,
    instance: &Instance,
    finding: &str,
    tag: &str,
    pairs: &[(&Mask, &Mask)],
    config: &ExplainerConfig,
) -> Result<Vec<f64>> {
    let mean_std_k = (config.mean_std_k != 2.0).then_some(config.mean_std_k);
    let requests: Vec<PredictionRequest> = pairs
        .iter()
        .enumerate()
        .map(|(i, (t, v))| PredictionRequest {
            request_id: format!("{}/{finding}/{tag}/{i}", instance.id()),
            instance_id: instance.id().to_string(),
            token_mask: (*t).clone(),
            visual_mask: (*v).clone(),
            strategy: config.strategy,
            strategy_seed: strategy_seed(config, i),
            mean_std_k,
        })
        .collect();
    let chunks: Vec<Vec<f64>> = requests
        .par_chunks(config.batch_size)
        .map(|chunk| {
            predictor
                .predict(instance, chunk)?
                .iter()
                .map(|p| Ok(p.probability(finding)?))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Regression targets from per-sample probabilities. Row 0 is the
/// unperturbed input.
fn targets(probabilities: &[f64], target: Target) -> Vec<f64> {
    match target {
        Target::Probability => probabilities.to_vec(),
        Target::Loss => {
            let positive = probabilities[0] >= 0.5;
            probabilities
                .iter()
                .map(|p| {
                    let p = p.clamp(1e-12, 1.0 - 1e-12);
                    if positive {
                        -p.ln()
                    } else {
                        -(1.0 - p).ln()
                    }
                })
                .collect()
        }
    }
}

fn fit(design: &DesignMatrix, y: &[f64], w: &[f64], config: &ExplainerConfig) -> Result<SurrogateFit> {
    fit_weighted_ridge(
        design,
        y,
        w,
        RidgeOptions {
            lambda: config.ridge_lambda,
            fit_intercept: true,
        },
    )
}

fn keep(score: f64, config: &ExplainerConfig) -> bool {
    config.score_threshold.is_none_or(|t| score.abs() >= t)
}

fn word_items(instance: &Instance, coefficients: &[f64], config: &ExplainerConfig) -> Vec<WordItem> {
    rank_coefficients(coefficients, config.k_words)
        .into_iter()
        .filter(|(_, s)| keep(*s, config))
        .map(|(i, score)| WordItem {
            word: instance.vocabulary()[i].clone(),
            score,
        })
        .collect()
}

fn box_items(instance: &Instance, coefficients: &[f64], config: &ExplainerConfig) -> Vec<BoxItem> {
    rank_coefficients(coefficients, config.k_boxes)
        .into_iter()
        .filter(|(_, s)| keep(*s, config))
        .map(|(index, score)| BoxItem {
            index,
            bbox: instance.boxes()[index],
            score,
        })
        .collect()
}

fn single_modality_fit(
    instance: &Instance,
    finding: &str,
    predictor: &dyn Predictor,
    config: &ExplainerConfig,
    batch: &PerturbationBatch,
) -> Result<(SurrogateFit, f64)> {
    let fixed = match batch.modality {
        Modality::Text => Mask::ones(instance.num_boxes()),
        Modality::Visual => Mask::ones(instance.num_word_features()),
    };
    let pairs: Vec<(&Mask, &Mask)> = batch
        .masks()
        .iter()
        .map(|m| match batch.modality {
            Modality::Text => (m, &fixed),
            Modality::Visual => (&fixed, m),
        })
        .collect();
    let probs = query(
        predictor,
        instance,
        finding,
        &batch.modality.to_string(),
        &pairs,
        config,
    )?;
    let weights = batch_weights(batch, config.kernel_width)?;
    let design = DesignMatrix::from_masks(batch.masks().iter().map(|m| vec![m]))?;
    let f = fit(&design, &targets(&probs, config.target), &weights, config)?;
    Ok((f, probs[0]))
}

/// Perturbs only the words, keeping every box at its original features.
pub fn explain_text_only(
    instance: &Instance,
    finding: &str,
    predictor: &dyn Predictor,
    config: &ExplainerConfig,
) -> Result<TextRun> {
    check_finding(finding, config)?;
    let seed = text_seed(config);
    let batch = sample_masks(
        Modality::Text,
        instance.num_word_features(),
        config.samples,
        config.p_text,
        seed,
    )?;
    let (f, prediction) = single_modality_fit(instance, finding, predictor, config, &batch)?;
    Ok(ModalityRun {
        items: word_items(instance, &f.coefficients, config),
        fit: f,
        prediction,
        requests: batch.samples(),
        seed,
    })
}

/// Perturbs only the boxes, keeping the words at the original.
pub fn explain_visual_only(
    instance: &Instance,
    finding: &str,
    predictor: &dyn Predictor,
    config: &ExplainerConfig,
) -> Result<VisualRun> {
    check_finding(finding, config)?;
    let seed = visual_seed(config);
    let batch = sample_masks(
        Modality::Visual,
        instance.num_boxes(),
        config.samples,
        config.p_visual,
        seed,
    )?;
    let (f, prediction) = single_modality_fit(instance, finding, predictor, config, &batch)?;
    Ok(ModalityRun {
        items: box_items(instance, &f.coefficients, config),
        fit: f,
        prediction,
        requests: batch.samples(),
        seed,
    })
}

fn provenance(
    config: &ExplainerConfig,
    predictor: &dyn Predictor,
    sub_seeds: BTreeMap<String, u64>,
    requests: usize,
) -> Provenance {
    Provenance {
        engine_version: crate::ENGINE_VERSION.to_string(),
        seed: config.seed,
        sub_seeds,
        samples: config.samples,
        p_text: config.p_text,
        p_visual: config.p_visual,
        kernel_width: config.kernel_width,
        ridge_lambda: config.ridge_lambda,
        strategy: config.strategy,
        mean_std_k: config.mean_std_k,
        target: config.target,
        combine: config.combine,
        score_threshold: config.score_threshold,
        predictor: predictor.identifier(),
        requests,
    }
}

fn diagnostic(design: &str, f: &SurrogateFit) -> FitDiagnostic {
    FitDiagnostic {
        design: design.to_string(),
        intercept: f.intercept,
        weighted_r2: f.weighted_r2,
    }
}

/// Merges a word-only run and a box-only run. Issues `2·samples` requests.
pub fn explain_separate(
    instance: &Instance,
    finding: &str,
    predictor: &dyn Predictor,
    config: &ExplainerConfig,
) -> Result<Explanation> {
    let text = explain_text_only(instance, finding, predictor, config)?;
    let visual = explain_visual_only(instance, finding, predictor, config)?;
    let sub_seeds = [
        (tags::TEXT.to_string(), text.seed),
        (tags::VISUAL.to_string(), visual.seed),
    ]
    .into();
    let e = Explanation {
        instance_id: instance.id().to_string(),
        finding: finding.to_string(),
        mode: Mode::Separate,
        prediction: Some(text.prediction),
        fits: vec![diagnostic("text", &text.fit), diagnostic("visual", &visual.fit)],
        provenance: Some(provenance(
            config,
            predictor,
            sub_seeds,
            text.requests + visual.requests,
        )),
        word_items: text.items,
        box_items: visual.items,
    };
    e.check_against(instance)?;
    Ok(e)
}

/// One surrogate over paired word and box masks. Issues `samples` requests.
pub fn explain_simultaneous(
    instance: &Instance,
    finding: &str,
    predictor: &dyn Predictor,
    config: &ExplainerConfig,
) -> Result<Explanation> {
    check_finding(finding, config)?;
    let (ts, vs) = (text_seed(config), visual_seed(config));
    let text = sample_masks(
        Modality::Text,
        instance.num_word_features(),
        config.samples,
        config.p_text,
        ts,
    )?;
    let visual = sample_masks(
        Modality::Visual,
        instance.num_boxes(),
        config.samples,
        config.p_visual,
        vs,
    )?;
    let pairs: Vec<(&Mask, &Mask)> = text.masks().iter().zip(visual.masks()).collect();
    let probs = query(predictor, instance, finding, "joint", &pairs, config)?;
    let weights = combine_batch(
        &batch_weights(&text, config.kernel_width)?,
        &batch_weights(&visual, config.kernel_width)?,
        config.combine,
    )?;
    let design = joint_design(&text, &visual)?;
    let f = fit(&design, &targets(&probs, config.target), &weights, config)?;
    let split = instance.num_word_features();
    let e = Explanation {
        instance_id: instance.id().to_string(),
        finding: finding.to_string(),
        mode: Mode::Simultaneous,
        prediction: Some(probs[0]),
        word_items: word_items(instance, &f.coefficients[..split], config),
        box_items: box_items(instance, &f.coefficients[split..], config),
        fits: vec![diagnostic("joint", &f)],
        provenance: Some(provenance(
            config,
            predictor,
            [(tags::TEXT.to_string(), ts), (tags::VISUAL.to_string(), vs)].into(),
            pairs.len(),
        )),
    };
    e.check_against(instance)?;
    Ok(e)
}

/// `[word mask ‖ box mask]` per sample.
pub fn joint_design(text: &PerturbationBatch, visual: &PerturbationBatch) -> Result<DesignMatrix> {
    if text.samples() != visual.samples() {
        return Err(Error::Argument(format!(
            "paired batches differ in size: {} vs {}",
            text.samples(),
            visual.samples()
        )));
    }
    DesignMatrix::from_masks(text.masks().iter().zip(visual.masks()).map(|(t, v)| vec![t, v]))
}

/// Runs the pipeline named by `mode`.
pub fn explain(
    mode: Mode,
    instance: &Instance,
    finding: &str,
    predictor: &dyn Predictor,
    config: &ExplainerConfig,
) -> Result<Explanation> {
    match mode {
        Mode::Separate => explain_separate(instance, finding, predictor, config),
        Mode::Simultaneous => explain_simultaneous(instance, finding, predictor, config),
        Mode::RandomBaseline => {
            random_explanation(instance, finding, config.k_words, config.k_boxes, config.seed)
        }
    }
}

/// Partial Fisher-Yates: `k` distinct indices from `0..n`, uniformly.
fn sample_without_replacement(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::Rng;
    let mut rng = seed::stream_rng(seed, 0);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Uniformly drawn words and boxes with zero scores; the lower-bound
/// baseline.
pub fn random_explanation(
    instance: &Instance,
    finding: &str,
    k_words: usize,
    k_boxes: usize,
    seed: u64,
) -> Result<Explanation> {
    let vocab = instance.vocabulary();
    if k_words > vocab.len() {
        return Err(Error::Argument(format!(
            "instance {}: k_words = {k_words} exceeds {} unique words",
            instance.id(),
            vocab.len()
        )));
    }
    if k_boxes > instance.num_boxes() {
        return Err(Error::Argument(format!(
            "instance {}: k_boxes = {k_boxes} exceeds {} boxes",
            instance.id(),
            instance.num_boxes()
        )));
    }
    let words = sample_without_replacement(vocab.len(), k_words, seed::derive(seed, tags::RANDOM_WORDS));
    let boxes = sample_without_replacement(
        instance.num_boxes(),
        k_boxes,
        seed::derive(seed, tags::RANDOM_BOXES),
    );
    Ok(Explanation {
        instance_id: instance.id().to_string(),
        finding: finding.to_string(),
        mode: Mode::RandomBaseline,
        prediction: None,
        word_items: words
            .into_iter()
            .map(|i| WordItem {
                word: vocab[i].clone(),
                score: 0.0,
            })
            .collect(),
        box_items: boxes
            .into_iter()
            .map(|index| BoxItem {
                index,
                bbox: instance.boxes()[index],
                score: 0.0,
            })
            .collect(),
        fits: Vec::new(),
        provenance: None,
    })
}
