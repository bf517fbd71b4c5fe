//! Similarity of explanations to expert annotations, the random baseline,
//! inter-annotator agreement and grouped averages.

pub mod geometry;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::random_explanation;
use crate::model::{BBox, ExpertAnnotation, Explanation, Instance};
use crate::seed::{self, tags};

pub use geometry::region_union_area;

/// Grouping keys understood by [`aggregate`] and the tag names carried by
/// [`SimilarityReport`].
pub mod keys {
    pub const MODE: &str = "mode";
    pub const ANNOTATOR: &str = "annotator";
    pub const PREDICTOR: &str = "predictor";
    pub const FINDING: &str = "finding";
    pub const INSTANCE: &str = "instance";
}

/// `|A ∩ B| / |A ∪ B|`, 1 when both are empty.
pub fn text_similarity<S: Ord>(a: &BTreeSet<S>, b: &BTreeSet<S>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// IoU of the regions covered by each box list. Both empty gives 1, one
/// empty gives 0.
pub fn image_similarity(a: &[BBox], b: &[BBox]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let (inter, union) = geometry::intersection_and_union(a, b);
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

/// Anything that names a set of words and boxes on one instance.
pub trait Explained {
    fn instance_id(&self) -> &str;
    fn word_set(&self) -> BTreeSet<String>;
    fn box_list(&self) -> Vec<BBox>;
    /// Mode for explanations, annotator id for annotations.
    fn source(&self) -> String;
    fn tags(&self) -> BTreeMap<String, String>;
}

impl Explained for Explanation {
    fn instance_id(&self) -> &str {
        &self.instance_id
    }

    fn word_set(&self) -> BTreeSet<String> {
        self.word_items.iter().map(|w| w.word.clone()).collect()
    }

    fn box_list(&self) -> Vec<BBox> {
        self.box_items.iter().map(|b| b.bbox).collect()
    }

    fn source(&self) -> String {
        self.mode.as_str().to_string()
    }

    fn tags(&self) -> BTreeMap<String, String> {
        let mut t = BTreeMap::from([
            (keys::MODE.to_string(), self.mode.as_str().to_string()),
            (keys::FINDING.to_string(), self.finding.clone()),
        ]);
        if let Some(p) = self.predictor_id() {
            t.insert(keys::PREDICTOR.to_string(), p.to_string());
        }
        t
    }
}

impl Explained for ExpertAnnotation {
    fn instance_id(&self) -> &str {
        &self.instance_id
    }

    fn word_set(&self) -> BTreeSet<String> {
        self.words.clone()
    }

    fn box_list(&self) -> Vec<BBox> {
        self.boxes.clone()
    }

    fn source(&self) -> String {
        self.annotator_id.clone()
    }

    fn tags(&self) -> BTreeMap<String, String> {
        BTreeMap::from([(keys::ANNOTATOR.to_string(), self.annotator_id.clone())])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub instance_id: String,
    pub finding: String,
    pub text_iou: f64,
    pub image_iou: f64,
    pub left_source: String,
    pub right_source: String,
    /// Grouping values (mode, annotator, predictor, ...) gathered from both
    /// sides.
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl SimilarityReport {
    fn check(&self) -> Result<()> {
        for (name, v) in [("text_iou", self.text_iou), ("image_iou", self.image_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "report {}/{}: {name} = {v} outside [0, 1]",
                    self.instance_id, self.finding
                )));
            }
        }
        Ok(())
    }

    /// Value of a grouping key; `instance` and `finding` come from the
    /// report itself.
    pub fn key(&self, key: &str) -> Option<&str> {
        match key {
            keys::INSTANCE => Some(&self.instance_id),
            keys::FINDING => Some(&self.finding),
            other => self.tags.get(other).map(String::as_str),
        }
    }
}

/// Similarity of two word/box sets on the same instance. Symmetric.
pub fn evaluate_pair<A: Explained, B: Explained>(
    left: &A,
    right: &B,
    finding: &str,
) -> Result<SimilarityReport> {
    if left.instance_id() != right.instance_id() {
        return Err(Error::InstanceMismatch {
            left: left.instance_id().to_string(),
            right: right.instance_id().to_string(),
        });
    }
    let mut tags = left.tags();
    tags.extend(right.tags());
    tags.insert(keys::FINDING.to_string(), finding.to_string());
    Ok(SimilarityReport {
        instance_id: left.instance_id().to_string(),
        finding: finding.to_string(),
        text_iou: text_similarity(&left.word_set(), &right.word_set()),
        image_iou: image_similarity(&left.box_list(), &right.box_list()),
        left_source: left.source(),
        right_source: right.source(),
        tags,
    })
}

/// Joins explanations to annotations on instance id and finding (the
/// finding must be part of the annotation's context) and scores each pair.
pub fn evaluate_explanations(
    explanations: &[Explanation],
    annotations: &[ExpertAnnotation],
) -> Result<Vec<SimilarityReport>> {
    let mut out = Vec::new();
    for e in explanations {
        for a in annotations {
            if a.instance_id == e.instance_id && a.finding_context.contains(&e.finding) {
                out.push(evaluate_pair(e, a, &e.finding)?);
            }
        }
    }
    Ok(out)
}

/// Running sum for order-independent means.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Accumulator {
    text: f64,
    image: f64,
    count: usize,
}

impl Accumulator {
    fn add(&mut self, text: f64, image: f64) {
        self.text += text;
        self.image += image;
        self.count += 1;
    }

    fn merge(mut self, other: Accumulator) -> Accumulator {
        self.text += other.text;
        self.image += other.image;
        self.count += other.count;
        self
    }

    fn report(self, keys: BTreeMap<String, String>) -> AggregateReport {
        let n = self.count as f64;
        AggregateReport {
            keys,
            mean_text_iou: self.text / n,
            mean_image_iou: self.image / n,
            count: self.count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub keys: BTreeMap<String, String>,
    pub mean_text_iou: f64,
    pub mean_image_iou: f64,
    pub count: usize,
}

/// Arithmetic means per distinct combination of `group_by` values. A report
/// lacking a key is grouped under `"-"`. Groups come out in key order.
pub fn aggregate(reports: &[SimilarityReport], group_by: &[&str]) -> Result<Vec<AggregateReport>> {
    if reports.is_empty() {
        return Err(Error::Argument("nothing to aggregate".into()));
    }
    let mut groups: BTreeMap<Vec<String>, Accumulator> = BTreeMap::new();
    for r in reports {
        r.check()?;
        let key = group_by
            .iter()
            .map(|k| r.key(k).unwrap_or("-").to_string())
            .collect();
        groups.entry(key).or_default().add(r.text_iou, r.image_iou);
    }
    Ok(groups
        .into_iter()
        .map(|(values, acc)| {
            acc.report(
                group_by
                    .iter()
                    .map(|k| k.to_string())
                    .zip(values)
                    .collect(),
            )
        })
        .collect())
}

/// Pairwise agreement between annotators over the (instance, finding
/// context) pairs both annotated. Empty, with a warning, when no pair of
/// annotators overlaps.
pub fn inter_annotator_agreement(annotations: &[ExpertAnnotation]) -> Result<Vec<AggregateReport>> {
    let mut by_annotator: BTreeMap<&str, HashMap<(&str, String), &ExpertAnnotation>> = BTreeMap::new();
    for a in annotations {
        let slot = by_annotator.entry(&a.annotator_id).or_default();
        let key = (a.instance_id.as_str(), a.context_key());
        if slot.contains_key(&key) {
            log::warn!(
                "annotator {} annotated {}/{} more than once; keeping the first",
                a.annotator_id,
                key.0,
                key.1
            );
            continue;
        }
        slot.insert(key, a);
    }
    let ids: Vec<&str> = by_annotator.keys().copied().collect();
    let mut out = Vec::new();
    for (i, left) in ids.iter().enumerate() {
        for right in &ids[i + 1..] {
            let mut acc = Accumulator::default();
            let mut shared: Vec<_> = by_annotator[left]
                .iter()
                .filter_map(|(k, a)| by_annotator[right].get(k).map(|b| (k, *a, *b)))
                .collect();
            shared.sort_by(|x, y| x.0.cmp(y.0));
            for (_, a, b) in shared {
                let r = evaluate_pair(a, b, &a.context_key())?;
                acc.add(r.text_iou, r.image_iou);
            }
            if acc.count > 0 {
                out.push(acc.report(BTreeMap::from([
                    ("annotator_a".to_string(), left.to_string()),
                    ("annotator_b".to_string(), right.to_string()),
                ])));
            }
        }
    }
    if out.is_empty() {
        log::warn!("no two annotators share an annotated instance; agreement report is empty");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFailure {
    pub instance_id: String,
    pub annotator_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub per_annotator: Vec<AggregateReport>,
    /// Mean over all scored (instance, annotator) pairs; `None` when every
    /// pair failed.
    pub overall: Option<AggregateReport>,
    pub failures: Vec<BaselineFailure>,
}

/// Seed of one (instance, annotator, context) pair, independent of the order
/// pairs are visited in.
fn pair_seed(seed: u64, a: &ExpertAnnotation) -> u64 {
    seed::derive(
        seed::derive(seed, tags::BASELINE),
        &format!("{}\u{1f}{}\u{1f}{}", a.instance_id, a.annotator_id, a.context_key()),
    )
}

/// Scores random explanations against every annotation, averaging over
/// `trials` draws per annotation. Annotations whose instance is missing or
/// too small for `k_words`/`k_boxes` are reported as failures.
pub fn baseline_run(
    instances: &[Instance],
    annotations: &[ExpertAnnotation],
    k_words: usize,
    k_boxes: usize,
    trials: usize,
    seed: u64,
) -> Result<BaselineOutcome> {
    if trials == 0 {
        return Err(Error::Argument("trials must be >= 1".into()));
    }
    let index: HashMap<&str, &Instance> = instances.iter().map(|i| (i.id(), i)).collect();
    let scored: Vec<std::result::Result<(String, Accumulator), BaselineFailure>> = annotations
        .par_iter()
        .map(|a| {
            let fail = |message: String| BaselineFailure {
                instance_id: a.instance_id.clone(),
                annotator_id: a.annotator_id.clone(),
                message,
            };
            let inst = index
                .get(a.instance_id.as_str())
                .ok_or_else(|| fail("instance not loaded".into()))?;
            let base = pair_seed(seed, a);
            let mut acc = Accumulator::default();
            for t in 0..trials {
                let e = random_explanation(
                    inst,
                    &a.context_key(),
                    k_words,
                    k_boxes,
                    seed::derive_index(base, t as u64),
                )
                .map_err(|e| fail(e.to_string()))?;
                let r = evaluate_pair(&e, a, &a.context_key()).map_err(|e| fail(e.to_string()))?;
                acc.add(r.text_iou, r.image_iou);
            }
            let n = acc.count as f64;
            Ok((a.annotator_id.clone(), Accumulator {
                text: acc.text / n,
                image: acc.image / n,
                count: 1,
            }))
        })
        .collect();
    let mut per: BTreeMap<String, Accumulator> = BTreeMap::new();
    let mut failures = Vec::new();
    for s in scored {
        match s {
            Ok((annotator, acc)) => {
                let slot = per.entry(annotator).or_default();
                *slot = slot.merge(acc);
            }
            Err(f) => {
                log::warn!("baseline skipped {}/{}: {}", f.instance_id, f.annotator_id, f.message);
                failures.push(f);
            }
        }
    }
    let overall = per
        .values()
        .copied()
        .reduce(Accumulator::merge)
        .map(|acc| acc.report(BTreeMap::new()));
    Ok(BaselineOutcome {
        per_annotator: per
            .into_iter()
            .map(|(a, acc)| acc.report(BTreeMap::from([(keys::ANNOTATOR.to_string(), a)])))
            .collect(),
        overall,
        failures,
    })
}

/// Aligned plain-text table of per-pair reports.
pub fn format_reports_table(reports: &[SimilarityReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.instance_id.clone(),
                r.finding.clone(),
                r.left_source.clone(),
                r.right_source.clone(),
                format!("{:.3}", r.text_iou),
                format!("{:.3}", r.image_iou),
            ]
        })
        .collect();
    table(&["instance", "finding", "left", "right", "text", "image"], &rows)
}

/// Aligned plain-text table of grouped means; columns are the union of the
/// reports' keys.
pub fn format_aggregates_table(reports: &[AggregateReport]) -> String {
    let key_names: BTreeSet<&str> = reports
        .iter()
        .flat_map(|r| r.keys.keys().map(String::as_str))
        .collect();
    let mut header: Vec<&str> = key_names.iter().copied().collect();
    header.extend(["text", "image", "n"]);
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row: Vec<String> = key_names
                .iter()
                .map(|k| r.keys.get(*k).cloned().unwrap_or_else(|| "-".into()))
                .collect();
            row.push(format!("{:.3}", r.mean_text_iou));
            row.push(format!("{:.3}", r.mean_image_iou));
            row.push(r.count.to_string());
            row
        })
        .collect();
    table(&header, &rows)
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec());
    for row in rows {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ImageSize, Mode};

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn ann(annotator: &str, inst: &str, words: &[&str], boxes: Vec<BBox>) -> ExpertAnnotation {
        ExpertAnnotation::new(annotator, inst, ["nodule"], words.iter().copied(), boxes).unwrap()
    }

    #[test]
    fn text_iou_examples() {
        assert_eq!(text_similarity(&set(&["a", "b", "c"]), &set(&["a", "b", "c"])), 1.0);
        assert_eq!(text_similarity(&set(&["a", "b", "c"]), &set(&["b", "c", "d"])), 0.5);
        assert_eq!(text_similarity::<String>(&set(&[]), &set(&[])), 1.0);
        assert_eq!(text_similarity(&set(&["a"]), &set(&[])), 0.0);
    }

    #[test]
    fn worked_word_set_example() {
        let model = set(&["innumerable", "nodules", "atelectasis", "or", "infiltrate"]);
        let expert = set(&["innumerable", "nodules", "atelectasis", "bilateral", "calcified"]);
        let s = text_similarity(&model, &expert);
        assert!((s - 0.429).abs() < 5e-4, "{s}");
    }

    #[test]
    fn image_iou_examples() {
        let a = [b(0.0, 0.0, 2.0, 1.0)];
        assert_eq!(image_similarity(&a, &a), 1.0);
        assert_eq!(image_similarity(&a, &[b(5.0, 5.0, 6.0, 6.0)]), 0.0);
        assert!((image_similarity(&a, &[b(1.0, 0.0, 3.0, 1.0)]) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(image_similarity(&[], &[]), 1.0);
        assert_eq!(image_similarity(&a, &[]), 0.0);
        assert_eq!(image_similarity(&[], &a), 0.0);
    }

    #[test]
    fn evaluate_pair_fixture() {
        let left = ann("x", "i1", &["a", "b", "c"], vec![b(0.0, 0.0, 2.0, 1.0)]);
        let right = ann("y", "i1", &["b", "c", "d"], vec![b(1.0, 0.0, 3.0, 1.0)]);
        let r = evaluate_pair(&left, &right, "nodule").unwrap();
        assert_eq!(r.text_iou, 0.5);
        assert!((r.image_iou - 1.0 / 3.0).abs() < 1e-15);
        let s = evaluate_pair(&right, &left, "nodule").unwrap();
        assert_eq!((s.text_iou, s.image_iou), (r.text_iou, r.image_iou));
        let self_r = evaluate_pair(&left, &left, "nodule").unwrap();
        assert_eq!((self_r.text_iou, self_r.image_iou), (1.0, 1.0));
        let other = ann("y", "i2", &[], vec![]);
        assert!(matches!(
            evaluate_pair(&left, &other, "nodule"),
            Err(Error::InstanceMismatch { .. })
        ));
    }

    #[test]
    fn explanations_joined_on_finding() {
        let inst = Instance::new(
            "i1",
            ["a", "b", "c", "d"].map(String::from).to_vec(),
            ImageSize {
                width: 10,
                height: 10,
            },
            vec![b(0.0, 0.0, 2.0, 1.0)],
            vec![vec![1.0]],
            BTreeSet::new(),
        )
        .unwrap();
        let mut e = random_explanation(&inst, "nodule", 4, 1, 0).unwrap();
        e.mode = Mode::Separate;
        let mut other = e.clone();
        other.finding = "cardiomegaly".into();
        let a = ann("x", "i1", &["a", "b"], vec![b(0.0, 0.0, 2.0, 1.0)]);
        let reports = evaluate_explanations(&[e, other], &[a]).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].text_iou, 0.5);
        assert_eq!(reports[0].image_iou, 1.0);
        assert_eq!(reports[0].key(keys::MODE), Some("separate"));
        assert_eq!(reports[0].key(keys::ANNOTATOR), Some("x"));
    }

    fn report(mode: &str, annotator: &str, text: f64, image: f64) -> SimilarityReport {
        SimilarityReport {
            instance_id: "i".into(),
            finding: "nodule".into(),
            text_iou: text,
            image_iou: image,
            left_source: mode.into(),
            right_source: annotator.into(),
            tags: BTreeMap::from([
                (keys::MODE.into(), mode.into()),
                (keys::ANNOTATOR.into(), annotator.into()),
            ]),
        }
    }

    #[test]
    fn aggregate_groups_and_means() {
        let rs = vec![
            report("separate", "e1", 0.2, 0.4),
            report("separate", "e2", 0.4, 0.0),
            report("simultaneous", "e1", 0.1, 0.1),
        ];
        let by_mode = aggregate(&rs, &[keys::MODE]).unwrap();
        assert_eq!(by_mode.len(), 2);
        assert_eq!(by_mode[0].keys[keys::MODE], "separate");
        assert!((by_mode[0].mean_text_iou - 0.3).abs() < 1e-15);
        assert!((by_mode[0].mean_image_iou - 0.2).abs() < 1e-15);
        assert_eq!(by_mode[0].count, 2);
        let single = aggregate(&rs[2..], &[]).unwrap();
        assert_eq!((single[0].mean_text_iou, single[0].mean_image_iou), (0.1, 0.1));
        assert!(aggregate(&[], &[]).is_err());
        let missing = aggregate(&rs, &[keys::PREDICTOR]).unwrap();
        assert_eq!(missing[0].keys[keys::PREDICTOR], "-");
    }

    #[test]
    fn agreement_examples() {
        let one = vec![
            ann("e1", "i1", &["a", "b"], vec![b(0.0, 0.0, 1.0, 1.0)]),
            ann("e2", "i1", &["b", "c"], vec![b(0.0, 0.0, 1.0, 1.0)]),
        ];
        let r = inter_annotator_agreement(&one).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0].mean_text_iou - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r[0].mean_image_iou, 1.0);
        assert_eq!(r[0].keys["annotator_a"], "e1");
        let disjoint = vec![ann("e1", "i1", &["a"], vec![]), ann("e2", "i2", &["a"], vec![])];
        assert!(inter_annotator_agreement(&disjoint).unwrap().is_empty());
    }

    #[test]
    fn baseline_full_vocabulary_is_exact() {
        let inst = Instance::new(
            "i1",
            ["a", "b", "c", "d"].map(String::from).to_vec(),
            ImageSize {
                width: 10,
                height: 10,
            },
            vec![b(0.0, 0.0, 2.0, 2.0), b(2.0, 0.0, 4.0, 2.0)],
            vec![vec![1.0], vec![2.0]],
            BTreeSet::new(),
        )
        .unwrap();
        let a = ann("e1", "i1", &["a", "b", "z"], vec![b(0.0, 0.0, 2.0, 2.0)]);
        let too_big = ann("e2", "missing", &["a"], vec![]);
        let out = baseline_run(&[inst], &[a, too_big], 4, 2, 7, 1).unwrap();
        let overall = out.overall.unwrap();
        // |vocab ∩ expert| / |vocab ∪ expert| = 2/5; image region covers both boxes: 4/8
        assert!((overall.mean_text_iou - 0.4).abs() < 1e-15);
        assert!((overall.mean_image_iou - 0.5).abs() < 1e-15);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].annotator_id, "e2");
    }

    #[test]
    fn tables_align() {
        let t = format_aggregates_table(&aggregate(&[report("separate", "e1", 0.1, 0.2)], &[keys::MODE]).unwrap());
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "mode      text   image  n");
        assert_eq!(lines[1], "separate  0.100  0.200  1");
        let t = format_reports_table(&[report("separate", "e1", 0.1, 0.2)]);
        assert!(t.starts_with("instance  finding  left"));
    }
}
