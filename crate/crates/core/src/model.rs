//! Domain types: instances, expert annotations, explanations and the
//! explainer configuration.
//!
//! Every type that carries invariants is validated on construction, including
//! when it is deserialized, so downstream code never sees an invalid value.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Current version of every JSON schema this crate reads and writes.
pub const FORMAT_VERSION: u32 = 1;

/// Word substituted for every occurrence of an inactivated word feature.
pub const PLACEHOLDER_WORD: &str = "¤masked¤";

/// Findings explained when no label set is configured.
pub const DEFAULT_FINDINGS: [&str; 3] = ["atelectasis", "cardiomegaly", "nodule"];

/// Lowercases a word and strips leading and trailing punctuation.
pub fn normalize_word(raw: &str) -> String {
    raw.to_lowercase()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_string()
}

/// Whitespace-splits report text into normalized words, dropping tokens that
/// are pure punctuation.
pub fn tokenize_report(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_word)
        .filter(|w| !w.is_empty())
        .collect()
}

/// Axis-aligned box in pixel coordinates, serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box, checking that it is finite, non-negative and has
    /// positive extent on both axes.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(format!(
                "box ({x1},{y1},{x2},{y2}) has non-finite coordinates"
            )));
        }
        if x1 < 0.0 || y1 < 0.0 {
            return Err(Error::Validation(format!(
                "box ({x1},{y1},{x2},{y2}): 0 <= x1 and 0 <= y1 violated"
            )));
        }
        if x1 >= x2 {
            return Err(Error::Validation(format!(
                "box ({x1},{y1},{x2},{y2}): x1 < x2 violated"
            )));
        }
        if y1 >= y2 {
            return Err(Error::Validation(format!(
                "box ({x1},{y1},{x2},{y2}): y1 < y2 violated"
            )));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Checks `x2 <= width` and `y2 <= height`.
    pub fn check_within(&self, width: u32, height: u32) -> Result<()> {
        if self.x2 > width as f64 || self.y2 > height as f64 {
            return Err(Error::Validation(format!(
                "box ({},{},{},{}) exceeds image bounds {}x{}",
                self.x1, self.y1, self.x2, self.y2, width, height
            )));
        }
        Ok(())
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Non-empty, duplicate-free set of finding labels, in configured order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet(Vec<String>);

impl LabelSet {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let labels: Vec<String> = labels
            .into_iter()
            .map(|s| normalize_word(s.as_ref()))
            .collect();
        if labels.is_empty() {
            return Err(Error::Config("label set must not be empty".into()));
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            if l.is_empty() {
                return Err(Error::Config("label set contains an empty label".into()));
            }
            if !seen.insert(l.as_str()) {
                return Err(Error::Config(format!("duplicate label {l:?}")));
            }
        }
        Ok(LabelSet(labels))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.iter().any(|l| l == label)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        LabelSet(DEFAULT_FINDINGS.iter().map(|s| s.to_string()).collect())
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        LabelSet::new(v)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(l: LabelSet) -> Self {
        l.0
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRepr {
    format_version: u32,
    id: String,
    words: Vec<String>,
    image: ImageSize,
    boxes: Vec<BBox>,
    embeddings: Vec<Vec<f64>>,
    #[serde(default)]
    gold_findings: BTreeSet<String>,
}

/// One vision+language data point: report words plus precomputed visual
/// boxes and their embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRepr", into = "InstanceRepr")]
pub struct Instance {
    id: String,
    words: Vec<String>,
    image: ImageSize,
    boxes: Vec<BBox>,
    embeddings: Vec<Vec<f64>>,
    gold_findings: BTreeSet<String>,
    vocabulary: Vec<String>,
}

impl Instance {
    pub fn new(
        id: impl Into<String>,
        words: Vec<String>,
        image: ImageSize,
        boxes: Vec<BBox>,
        embeddings: Vec<Vec<f64>>,
        gold_findings: BTreeSet<String>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Validation("instance id must not be empty".into()));
        }
        if words.is_empty() {
            return Err(Error::Validation(format!("instance {id}: words must not be empty")));
        }
        let words: Vec<String> = words.iter().map(|w| normalize_word(w)).collect();
        for w in &words {
            if w.is_empty() {
                return Err(Error::Validation(format!(
                    "instance {id}: empty word after normalization"
                )));
            }
            if w.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!(
                    "instance {id}: word {w:?} contains whitespace"
                )));
            }
        }
        if boxes.is_empty() {
            return Err(Error::Validation(format!("instance {id}: at least one box is required")));
        }
        if boxes.len() != embeddings.len() {
            return Err(Error::DimensionMismatch(format!(
                "instance {id}: {} boxes but {} embedding rows",
                boxes.len(),
                embeddings.len()
            )));
        }
        for b in &boxes {
            b.check_within(image.width, image.height)?;
        }
        let dim = embeddings[0].len();
        if dim == 0 {
            return Err(Error::DimensionMismatch(format!(
                "instance {id}: embedding dimension must be at least 1"
            )));
        }
        for (i, row) in embeddings.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "instance {id}: embedding row {i} has {} values, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "instance {id}: embedding row {i} has non-finite values"
                )));
            }
        }
        let gold_findings = gold_findings.iter().map(|f| normalize_word(f)).collect();

        let mut seen = HashMap::new();
        let mut vocabulary = Vec::new();
        for w in &words {
            if !seen.contains_key(w.as_str()) {
                seen.insert(w.as_str(), vocabulary.len());
                vocabulary.push(w.clone());
            }
        }
        Ok(Instance {
            id,
            words,
            image,
            boxes,
            embeddings,
            gold_findings,
            vocabulary,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn image(&self) -> ImageSize {
        self.image
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings[0].len()
    }

    pub fn gold_findings(&self) -> &BTreeSet<String> {
        &self.gold_findings
    }

    /// Unique words in first-occurrence order; word feature `i` is
    /// `vocabulary()[i]`.
    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn num_word_features(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn num_boxes(&self) -> usize {
        self.boxes.len()
    }
}

impl TryFrom<InstanceRepr> for Instance {
    type Error = Error;

    fn try_from(r: InstanceRepr) -> Result<Self> {
        check_version(r.format_version)?;
        Instance::new(r.id, r.words, r.image, r.boxes, r.embeddings, r.gold_findings)
    }
}

impl From<Instance> for InstanceRepr {
    fn from(i: Instance) -> Self {
        InstanceRepr {
            format_version: FORMAT_VERSION,
            id: i.id,
            words: i.words,
            image: i.image,
            boxes: i.boxes,
            embeddings: i.embeddings,
            gold_findings: i.gold_findings,
        }
    }
}

pub(crate) fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRepr {
    #[serde(default = "default_version")]
    format_version: u32,
    annotator_id: String,
    instance_id: String,
    #[serde(default)]
    finding_context: BTreeSet<String>,
    #[serde(default)]
    words: BTreeSet<String>,
    #[serde(default)]
    boxes: Vec<BBox>,
}

/// One annotator's highlighted words and drawn boxes for an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AnnotationRepr", into = "AnnotationRepr")]
pub struct ExpertAnnotation {
    pub annotator_id: String,
    pub instance_id: String,
    pub finding_context: BTreeSet<String>,
    pub words: BTreeSet<String>,
    pub boxes: Vec<BBox>,
}

impl ExpertAnnotation {
    pub fn new<W, S>(
        annotator_id: impl Into<String>,
        instance_id: impl Into<String>,
        finding_context: impl IntoIterator<Item = S>,
        words: W,
        boxes: Vec<BBox>,
    ) -> Result<Self>
    where
        W: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let annotator_id = annotator_id.into();
        let instance_id = instance_id.into();
        if annotator_id.is_empty() || instance_id.is_empty() {
            return Err(Error::Validation(
                "annotation needs non-empty annotator_id and instance_id".into(),
            ));
        }
        let finding_context = finding_context
            .into_iter()
            .map(|f| normalize_word(f.as_ref()))
            .filter(|f| !f.is_empty())
            .collect();
        let mut set = BTreeSet::new();
        for w in words {
            let n = normalize_word(w.as_ref());
            if n.is_empty() {
                return Err(Error::Validation(format!(
                    "annotation {annotator_id}/{instance_id}: empty word {:?}",
                    w.as_ref()
                )));
            }
            set.insert(n);
        }
        Ok(ExpertAnnotation {
            annotator_id,
            instance_id,
            finding_context,
            words: set,
            boxes,
        })
    }

    /// Checks the drawn boxes against the annotated instance's image size.
    pub fn check_against(&self, instance: &Instance) -> Result<()> {
        if instance.id() != self.instance_id {
            return Err(Error::InstanceMismatch {
                left: self.instance_id.clone(),
                right: instance.id().to_string(),
            });
        }
        let size = instance.image();
        for b in &self.boxes {
            b.check_within(size.width, size.height)?;
        }
        Ok(())
    }

    /// Finding context as a single `+`-joined key.
    pub fn context_key(&self) -> String {
        self.finding_context
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join("+")
    }
}

impl TryFrom<AnnotationRepr> for ExpertAnnotation {
    type Error = Error;

    fn try_from(r: AnnotationRepr) -> Result<Self> {
        check_version(r.format_version)?;
        ExpertAnnotation::new(
            r.annotator_id,
            r.instance_id,
            r.finding_context,
            r.words,
            r.boxes,
        )
    }
}

impl From<ExpertAnnotation> for AnnotationRepr {
    fn from(a: ExpertAnnotation) -> Self {
        AnnotationRepr {
            format_version: FORMAT_VERSION,
            annotator_id: a.annotator_id,
            instance_id: a.instance_id,
            finding_context: a.finding_context,
            words: a.words,
            boxes: a.boxes,
        }
    }
}

/// How a visual feature is inactivated when its mask bit is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    #[default]
    Zero,
    MeanStd,
    Randomize,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Zero => "zero",
            StrategyKind::MeanStd => "mean-std",
            StrategyKind::Randomize => "randomize",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(StrategyKind::Zero),
            "mean-std" => Ok(StrategyKind::MeanStd),
            "randomize" => Ok(StrategyKind::Randomize),
            other => Err(Error::Config(format!(
                "unknown inactivation strategy {other:?} (expected zero, mean-std or randomize)"
            ))),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Quantity the surrogate regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// Predicted probability of the explained finding.
    #[default]
    Probability,
    /// Binary cross-entropy against the label predicted for the unperturbed input.
    Loss,
}

/// Rule merging the per-modality kernel weights of a paired sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineRule {
    /// `(w_text + w_visual) / 2`
    #[default]
    Halve,
    /// Min-max rescaling of the summed weights over the whole batch.
    BatchMinMax,
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" => Ok(Target::Probability),
            "loss" => Ok(Target::Loss),
            other => Err(Error::Config(format!(
                "unknown target {other:?} (expected probability or loss)"
            ))),
        }
    }
}

impl std::str::FromStr for CombineRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "halve" => Ok(CombineRule::Halve),
            "batch-min-max" => Ok(CombineRule::BatchMinMax),
            other => Err(Error::Config(format!(
                "unknown combine rule {other:?} (expected halve or batch-min-max)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Separate,
    Simultaneous,
    RandomBaseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Separate => "separate",
            Mode::Simultaneous => "simultaneous",
            Mode::RandomBaseline => "random-baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separate" => Ok(Mode::Separate),
            "simultaneous" => Ok(Mode::Simultaneous),
            "random-baseline" => Ok(Mode::RandomBaseline),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected separate or simultaneous)"
            ))),
        }
    }
}

/// Hyperparameters of one explanation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainerConfig {
    /// Perturbation masks per modality, including the unperturbed row.
    pub samples: usize,
    pub p_text: f64,
    pub p_visual: f64,
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub k_words: usize,
    pub k_boxes: usize,
    pub strategy: StrategyKind,
    /// Multiplier of the standard deviation in the mean-std strategy.
    pub mean_std_k: f64,
    pub seed: u64,
    pub target: Target,
    pub combine: CombineRule,
    /// When set, ranked items with `|score|` below the threshold are dropped.
    pub score_threshold: Option<f64>,
    pub batch_size: usize,
    pub labels: LabelSet,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            samples: 1000,
            p_text: 0.5,
            p_visual: 0.5,
            kernel_width: 0.25,
            ridge_lambda: 1.0,
            k_words: 5,
            k_boxes: 3,
            strategy: StrategyKind::Zero,
            mean_std_k: 2.0,
            seed: 0,
            target: Target::Probability,
            combine: CombineRule::Halve,
            score_threshold: None,
            batch_size: 32,
            labels: LabelSet::default(),
        }
    }
}

impl ExplainerConfig {
    /// Every violated bound, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.samples < 2 {
            out.push(format!("samples must be >= 2 (got {})", self.samples));
        }
        for (name, p) in [("p_text", self.p_text), ("p_visual", self.p_visual)] {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("{name} must be in [0, 1] (got {p})"));
            }
        }
        if !(self.kernel_width.is_finite() && self.kernel_width > 0.0) {
            out.push(format!(
                "kernel_width must be > 0 (got {})",
                self.kernel_width
            ));
        }
        if !(self.ridge_lambda.is_finite() && self.ridge_lambda >= 0.0) {
            out.push(format!(
                "ridge_lambda must be >= 0 (got {})",
                self.ridge_lambda
            ));
        }
        if self.k_words == 0 {
            out.push("k_words must be >= 1".into());
        }
        if self.k_boxes == 0 {
            out.push("k_boxes must be >= 1".into());
        }
        if !self.mean_std_k.is_finite() {
            out.push("mean_std_k must be finite".into());
        }
        if let Some(t) = self.score_threshold {
            if !(t.is_finite() && t >= 0.0) {
                out.push(format!("score_threshold must be >= 0 (got {t})"));
            }
        }
        if self.batch_size == 0 {
            out.push("batch_size must be >= 1".into());
        }
        out
    }
}

/// Returns the config unchanged when every bound holds.
pub fn validate_config(config: ExplainerConfig) -> Result<ExplainerConfig> {
    let v = config.violations();
    if v.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(v.join("; ")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordItem {
    pub word: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxItem {
    pub index: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

/// Diagnostics of one surrogate fit recorded with an explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostic {
    pub design: String,
    pub intercept: f64,
    pub weighted_r2: f64,
}

/// Everything needed to reproduce an explanation with the same build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub engine_version: String,
    pub seed: u64,
    pub sub_seeds: BTreeMap<String, u64>,
    pub samples: usize,
    pub p_text: f64,
    pub p_visual: f64,
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub strategy: StrategyKind,
    pub mean_std_k: f64,
    pub target: Target,
    pub combine: CombineRule,
    pub score_threshold: Option<f64>,
    pub predictor: String,
    pub requests: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplanationRepr {
    format_version: u32,
    instance_id: String,
    finding: String,
    mode: Mode,
    prediction: Option<f64>,
    word_items: Vec<WordItem>,
    box_items: Vec<BoxItem>,
    #[serde(default)]
    fits: Vec<FitDiagnostic>,
    provenance: Option<Provenance>,
}

/// Ranked word and box attributions for one (instance, finding).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExplanationRepr", into = "ExplanationRepr")]
pub struct Explanation {
    pub instance_id: String,
    pub finding: String,
    pub mode: Mode,
    /// Probability of the finding on the unperturbed input, when known.
    pub prediction: Option<f64>,
    pub word_items: Vec<WordItem>,
    pub box_items: Vec<BoxItem>,
    pub fits: Vec<FitDiagnostic>,
    pub provenance: Option<Provenance>,
}

impl Explanation {
    /// Distinct words, distinct box indices, rankings non-increasing in
    /// `|score|`.
    pub fn check(&self) -> Result<()> {
        let mut words = BTreeSet::new();
        for w in &self.word_items {
            if !words.insert(w.word.as_str()) {
                return Err(Error::Validation(format!(
                    "explanation lists word {:?} twice",
                    w.word
                )));
            }
        }
        let mut idx = BTreeSet::new();
        for b in &self.box_items {
            if !idx.insert(b.index) {
                return Err(Error::Validation(format!(
                    "explanation lists box {} twice",
                    b.index
                )));
            }
        }
        let scores_sorted = |s: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = s.collect();
            v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0].abs() >= w[1].abs())
        };
        if !scores_sorted(&mut self.word_items.iter().map(|w| w.score))
            || !scores_sorted(&mut self.box_items.iter().map(|b| b.score))
        {
            return Err(Error::Validation(
                "explanation items are not ranked by descending |score|".into(),
            ));
        }
        Ok(())
    }

    /// Additionally checks box indices and coordinates against the instance.
    pub fn check_against(&self, instance: &Instance) -> Result<()> {
        self.check()?;
        if instance.id() != self.instance_id {
            return Err(Error::InstanceMismatch {
                left: self.instance_id.clone(),
                right: instance.id().to_string(),
            });
        }
        for b in &self.box_items {
            match instance.boxes().get(b.index) {
                Some(orig) if *orig == b.bbox => {}
                Some(_) => {
                    return Err(Error::Validation(format!(
                        "box {} coordinates differ from the instance",
                        b.index
                    )))
                }
                None => {
                    return Err(Error::Validation(format!(
                        "box index {} out of range (instance has {})",
                        b.index,
                        instance.num_boxes()
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn predictor_id(&self) -> Option<&str> {
        self.provenance.as_ref().map(|p| p.predictor.as_str())
    }
}

impl TryFrom<ExplanationRepr> for Explanation {
    type Error = Error;

    fn try_from(r: ExplanationRepr) -> Result<Self> {
        check_version(r.format_version)?;
        let e = Explanation {
            instance_id: r.instance_id,
            finding: r.finding,
            mode: r.mode,
            prediction: r.prediction,
            word_items: r.word_items,
            box_items: r.box_items,
            fits: r.fits,
            provenance: r.provenance,
        };
        e.check()?;
        Ok(e)
    }
}

impl From<Explanation> for ExplanationRepr {
    fn from(e: Explanation) -> Self {
        ExplanationRepr {
            format_version: FORMAT_VERSION,
            instance_id: e.instance_id,
            finding: e.finding,
            mode: e.mode,
            prediction: e.prediction,
            word_items: e.word_items,
            box_items: e.box_items,
            fits: e.fits,
            provenance: e.provenance,
        }
    }
}
