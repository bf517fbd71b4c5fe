//! The black-box prediction boundary.
//!
//! A predictor receives mask pairs for an instance it already holds and
//! answers with one probability per finding. Implementations:
//!
//! - [`SyntheticLogisticModel`]: in-process logistic model with known
//!   per-feature weights, used as a ground-truth oracle.
//! - [`MaskingPredictor`]: applies masks to an instance's features and hands
//!   the perturbed words, boxes and embeddings to any [`FeatureModel`].
//! - [`RemotePredictor`]: speaks the newline-delimited JSON protocol of
//!   [`protocol`] to a subprocess or an HTTP endpoint.

pub mod protocol;
pub mod remote;
pub mod synthetic;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, PredictorError, Result};
use crate::model::{Instance, StrategyKind};
use crate::perturb::{
    apply_instance_visual_mask, apply_text_mask, InactivationStrategy, Mask, VisualFeatures,
};

pub use remote::{RemotePredictor, Transport};
pub use synthetic::{FindingWeights, SyntheticLogisticModel};

/// One mask pair to score, as sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRequest {
    pub request_id: String,
    pub instance_id: String,
    pub token_mask: Mask,
    pub visual_mask: Mask,
    pub strategy: StrategyKind,
    pub strategy_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_std_k: Option<f64>,
}

impl PredictionRequest {
    pub fn check_against(&self, instance: &Instance) -> Result<(), PredictorError> {
        self.token_mask
            .check_len("token_mask", instance.num_word_features())?;
        self.visual_mask.check_len("visual_mask", instance.num_boxes())
    }

    pub fn inactivation(&self) -> InactivationStrategy {
        InactivationStrategy {
            kind: self.strategy,
            mean_std_k: self.mean_std_k.unwrap_or(2.0),
        }
    }
}

/// Independent per-finding probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: BTreeMap<String, f64>,
}

impl Prediction {
    pub fn probability(&self, finding: &str) -> Result<f64, PredictorError> {
        self.probabilities
            .get(finding)
            .copied()
            .ok_or_else(|| PredictorError::UnknownFinding(finding.to_string()))
    }

    pub(crate) fn check(&self) -> Result<(), PredictorError> {
        for (k, p) in &self.probabilities {
            if !(p.is_finite() && (0.0..=1.0).contains(p)) {
                return Err(PredictorError::Protocol(format!(
                    "probability for {k:?} is {p}, outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// A black-box model queried with masks. Results come back in request order.
pub trait Predictor: Send + Sync {
    /// Opaque identifier recorded in explanation provenance.
    fn identifier(&self) -> String;

    fn predict(&self, instance: &Instance, requests: &[PredictionRequest]) -> Result<Vec<Prediction>>;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn identifier(&self) -> String {
        (**self).identifier()
    }

    fn predict(&self, instance: &Instance, requests: &[PredictionRequest]) -> Result<Vec<Prediction>> {
        (**self).predict(instance, requests)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn identifier(&self) -> String {
        (**self).identifier()
    }

    fn predict(&self, instance: &Instance, requests: &[PredictionRequest]) -> Result<Vec<Prediction>> {
        (**self).predict(instance, requests)
    }
}

/// A model that consumes perturbed features directly.
pub trait FeatureModel: Send + Sync {
    fn identifier(&self) -> String;

    fn predict_features(
        &self,
        instance: &Instance,
        words: &[String],
        visual: &VisualFeatures,
    ) -> Result<BTreeMap<String, f64>>;
}

/// Applies each request's masks (with its inactivation strategy and seed)
/// to the instance, then queries the wrapped feature model.
pub struct MaskingPredictor<M> {
    pub model: M,
}

impl<M: FeatureModel> MaskingPredictor<M> {
    pub fn new(model: M) -> Self {
        MaskingPredictor { model }
    }

    pub fn predict_one(&self, instance: &Instance, request: &PredictionRequest) -> Result<Prediction> {
        request.check_against(instance)?;
        let words = apply_text_mask(instance, &request.token_mask)?;
        let visual = apply_instance_visual_mask(
            instance,
            &request.visual_mask,
            &request.inactivation(),
            request.strategy_seed,
        )?;
        let probabilities = self.model.predict_features(instance, &words, &visual)?;
        let p = Prediction { probabilities };
        p.check()?;
        Ok(p)
    }
}

impl<M: FeatureModel> Predictor for MaskingPredictor<M> {
    fn identifier(&self) -> String {
        self.model.identifier()
    }

    fn predict(&self, instance: &Instance, requests: &[PredictionRequest]) -> Result<Vec<Prediction>> {
        requests.iter().map(|r| self.predict_one(instance, r)).collect()
    }
}

/// Wraps a predictor and counts the requests it serves.
pub struct CountingPredictor<P> {
    inner: P,
    requests: AtomicUsize,
    calls: AtomicUsize,
}

impl<P> CountingPredictor<P> {
    pub fn new(inner: P) -> Self {
        CountingPredictor {
            inner,
            requests: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.requests.store(0, Ordering::SeqCst);
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<P: Predictor> Predictor for CountingPredictor<P> {
    fn identifier(&self) -> String {
        self.inner.identifier()
    }

    fn predict(&self, instance: &Instance, requests: &[PredictionRequest]) -> Result<Vec<Prediction>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.fetch_add(requests.len(), Ordering::SeqCst);
        self.inner.predict(instance, requests)
    }
}

/// Where predictions come from, parsed from `synthetic:<path>`,
/// `cmd:<argv>` or `url:<endpoint>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PredictorSpec {
    Synthetic(std::path::PathBuf),
    Command(Vec<String>),
    Url(String),
}

impl std::str::FromStr for PredictorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("synthetic:") {
            if path.is_empty() {
                return Err(Error::Config("synthetic: needs a model path".into()));
            }
            Ok(PredictorSpec::Synthetic(path.into()))
        } else if let Some(argv) = s.strip_prefix("cmd:") {
            let parts = shlex::split(argv)
                .filter(|p| !p.is_empty())
                .ok_or_else(|| Error::Config(format!("cannot parse command line {argv:?}")))?;
            Ok(PredictorSpec::Command(parts))
        } else if let Some(url) = s.strip_prefix("url:") {
            if url.is_empty() {
                return Err(Error::Config("url: needs an endpoint".into()));
            }
            Ok(PredictorSpec::Url(url.to_string()))
        } else {
            Err(Error::Config(format!(
                "unknown predictor {s:?}; expected synthetic:<model-path>, cmd:<argv> or url:<endpoint>"
            )))
        }
    }
}

/// Settings for remote transports.
#[derive(Debug, Clone, Copy)]
pub struct RemoteOptions {
    pub timeout: Duration,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        RemoteOptions {
            timeout: Duration::from_secs(60),
        }
    }
}

/// Instantiates the predictor described by `spec`.
pub fn connect(spec: &PredictorSpec, options: RemoteOptions) -> Result<Box<dyn Predictor>> {
    match spec {
        PredictorSpec::Synthetic(path) => {
            let model: SyntheticLogisticModel = crate::io::read_json(path)?;
            Ok(Box::new(model))
        }
        PredictorSpec::Command(argv) => Ok(Box::new(RemotePredictor::spawn(argv, options)?)),
        PredictorSpec::Url(url) => Ok(Box::new(RemotePredictor::http(url, options))),
    }
}
