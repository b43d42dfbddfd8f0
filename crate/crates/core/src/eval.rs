//! Classification metrics: thresholded confusion counts, precision-recall
//! sweeps, precision at a target recall, multiclass confusion and grouped
//! breakdowns.
//!
//! A score at or above the threshold counts as a positive prediction.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::geometry::{gaze_span, project_window, GazeRepr};
use crate::model::{ModalitySet, Model, ModelInput};
use crate::sim::{LabeledClip, Task};
use crate::tensor::Scalar;

/// A binary score with its ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub score: f64,
    pub positive: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub scenario: String,
    pub mode: String,
    pub medium: String,
    pub direction: String,
}

/// One scored clip: class probabilities, label and grouping metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub probs: Vec<f64>,
    pub label: usize,
    pub meta: ExampleMeta,
    /// Horizontal gaze extent in degrees, when gaze was recorded.
    pub gaze_span: Option<f64>,
}

impl ScoredExample {
    /// Binary view: P(class 1) against label 1. For multiclass heads this
    /// is "any class but 0", scored by 1 - P(class 0).
    pub fn binary(&self) -> Scored {
        let score = if self.probs.len() == 2 {
            self.probs[1]
        } else {
            1.0 - self.probs[0]
        };
        Scored {
            score,
            positive: self.label != 0,
        }
    }

    pub fn predicted(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// 0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// 0 when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// True when precision + recall = 0, in which case F1 is reported as 0.
    pub fn f1_undefined(&self) -> bool {
        self.precision() + self.recall() == 0.0
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn check_scores(scored: &[Scored]) -> Result<()> {
    match scored.iter().find(|s| !s.score.is_finite()) {
        Some(s) => Err(Error::Data(format!("non-finite score {}", s.score))),
        None => Ok(()),
    }
}

pub fn confusion(scored: &[Scored], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for s in scored {
        match (s.score >= threshold, s.positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Precision and recall at every distinct score, thresholds descending.
/// The last point (lowest threshold) predicts everything positive, so its
/// recall is 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Confusion counts at each threshold.
    pub counts: Vec<Confusion>,
}

pub fn pr_curve(scored: &[Scored]) -> Result<PrCurve> {
    check_scores(scored)?;
    let positives = scored.iter().filter(|s| s.positive).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric(
            "precision-recall curve needs a positive example".into(),
        ));
    }
    let mut sorted: Vec<Scored> = scored.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut curve = PrCurve {
        thresholds: Vec::new(),
        precision: Vec::new(),
        recall: Vec::new(),
        counts: Vec::new(),
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        while i < sorted.len() && sorted[i].score == t {
            if sorted[i].positive {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let c = Confusion {
            tp,
            fp,
            tn: scored.len() - positives - fp,
            fn_: positives - tp,
        };
        curve.thresholds.push(t);
        curve.precision.push(c.precision());
        curve.recall.push(c.recall());
        curve.counts.push(c);
    }
    Ok(curve)
}

impl PrCurve {
    /// Area by the trapezoid rule over recall, anchored at recall 0 with
    /// the precision of the highest threshold.
    pub fn auc(&self) -> f64 {
        let mut area = 0.0;
        let (mut r0, mut p0) = (0.0, self.precision[0]);
        for (&r, &p) in self.recall.iter().zip(&self.precision) {
            area += (r - r0) * (p + p0) / 2.0;
            r0 = r;
            p0 = p;
        }
        area
    }

    /// Writes `threshold,precision,recall` rows with a header.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "threshold,precision,recall")?;
        for i in 0..self.thresholds.len() {
            writeln!(w, "{},{},{}", self.thresholds[i], self.precision[i], self.recall[i])?;
        }
        Ok(())
    }
}

pub fn auc(scored: &[Scored]) -> Result<f64> {
    Ok(pr_curve(scored)?.auc())
}

/// Precision at the highest threshold whose recall reaches `r`, with that
/// threshold.
pub fn precision_at_recall(scored: &[Scored], r: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&r) {
        return config_err(format!("target recall {r} outside [0, 1]"));
    }
    let c = pr_curve(scored)?;
    let i = c.recall.iter().position(|&x| x >= r).expect("last point has recall 1");
    Ok((c.precision[i], c.thresholds[i]))
}

/// Best precision over all thresholds whose recall reaches `r`. Unlike
/// [`precision_at_recall`] this never increases with `r`.
pub fn interpolated_precision_at_recall(scored: &[Scored], r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return config_err(format!("target recall {r} outside [0, 1]"));
    }
    let c = pr_curve(scored)?;
    Ok(c.recall
        .iter()
        .zip(&c.precision)
        .filter(|(&x, _)| x >= r)
        .map(|(_, &p)| p)
        .fold(0.0, f64::max))
}

/// `k x k` counts with rows as ground truth and columns as argmax
/// predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassConfusion {
    pub counts: Vec<Vec<usize>>,
}

impl MulticlassConfusion {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    /// Each non-empty row divided by its total; empty rows stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                row.iter().map(|&c| ratio(c, n)).collect()
            })
            .collect()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: usize = (0..self.classes()).map(|i| self.counts[i][i]).sum();
        ratio(diag, self.counts.iter().flatten().sum())
    }

    /// Mean per-class recall over classes that occur.
    pub fn balanced_accuracy(&self) -> f64 {
        let norm = self.normalized();
        let rows: Vec<f64> = (0..self.classes())
            .filter(|&i| self.counts[i].iter().sum::<usize>() > 0)
            .map(|i| norm[i][i])
            .collect();
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().sum::<f64>() / rows.len() as f64
        }
    }
}

pub fn multiclass_confusion(examples: &[ScoredExample], k: usize) -> Result<MulticlassConfusion> {
    let mut counts = vec![vec![0; k]; k];
    for e in examples {
        if e.probs.len() != k || e.label >= k {
            return Err(Error::Data(format!(
                "example with {} scores and label {} in a {k}-class confusion",
                e.probs.len(),
                e.label
            )));
        }
        counts[e.label][e.predicted()] += 1;
    }
    Ok(MulticlassConfusion { counts })
}

/// Thresholded and threshold-free binary metrics of one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub n: usize,
    pub threshold: f64,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_undefined: bool,
    /// Absent when the group has no positives.
    pub auc: Option<f64>,
    pub precision_at_recall_90: Option<f64>,
    pub threshold_at_recall_90: Option<f64>,
    /// Accuracy at the recall-0.9 threshold.
    pub accuracy_at_recall_90: Option<f64>,
}

pub fn binary_metrics(scored: &[Scored], threshold: f64) -> Result<BinaryMetrics> {
    check_scores(scored)?;
    let c = confusion(scored, threshold);
    let (auc, p90) = if scored.iter().any(|s| s.positive) {
        (Some(auc(scored)?), Some(precision_at_recall(scored, 0.9)?))
    } else {
        (None, None)
    };
    Ok(BinaryMetrics {
        n: scored.len(),
        threshold,
        confusion: c,
        accuracy: c.accuracy(),
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        f1_undefined: c.f1_undefined(),
        auc,
        precision_at_recall_90: p90.map(|p| p.0),
        threshold_at_recall_90: p90.map(|p| p.1),
        accuracy_at_recall_90: p90.map(|p| confusion(scored, p.1).accuracy()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakdownKey {
    Scenario,
    Medium,
    Mode,
    GazeSpan,
}

impl BreakdownKey {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scenario" => Ok(BreakdownKey::Scenario),
            "medium" => Ok(BreakdownKey::Medium),
            "mode" => Ok(BreakdownKey::Mode),
            "gaze_span" | "span" => Ok(BreakdownKey::GazeSpan),
            _ => config_err(format!(
                "unknown breakdown key '{s}' (scenario, medium, mode, gaze_span)"
            )),
        }
    }

    pub fn group_of(self, e: &ScoredExample) -> String {
        match self {
            BreakdownKey::Scenario => e.meta.scenario.clone(),
            BreakdownKey::Medium => e.meta.medium.clone(),
            BreakdownKey::Mode => e.meta.mode.clone(),
            BreakdownKey::GazeSpan => span_bucket(e.gaze_span).to_string(),
        }
    }
}

/// Gaze-span buckets with edges at 5 and 20 degrees.
pub fn span_bucket(span: Option<f64>) -> &'static str {
    match span {
        None => "unknown",
        Some(s) if s < 5.0 => "[0,5)",
        Some(s) if s < 20.0 => "[5,20)",
        Some(_) => "[20,inf)",
    }
}

/// Binary metrics per group, keyed by group name.
pub fn breakdown(
    examples: &[ScoredExample],
    key: BreakdownKey,
    threshold: f64,
) -> Result<BTreeMap<String, BinaryMetrics>> {
    let mut groups: BTreeMap<String, Vec<Scored>> = BTreeMap::new();
    for e in examples {
        groups.entry(key.group_of(e)).or_default().push(e.binary());
    }
    groups
        .into_iter()
        .map(|(k, v)| Ok((k, binary_metrics(&v, threshold)?)))
        .collect()
}

/// Runs `model` over `clips` using only the modalities in `keep`.
pub fn score_clips<T: Scalar>(
    model: &Model<T>,
    clips: &[LabeledClip],
    task: Task,
    keep: ModalitySet,
) -> Result<Vec<ScoredExample>> {
    let cfg = model.config();
    clips
        .iter()
        .map(|c| {
            let input = ModelInput::<T>::from_clip(cfg, c)?.restrict(keep);
            let pred = model.predict(&input)?;
            let span = match &c.gaze {
                Some(w) if w.repr() == GazeRepr::Point3d => {
                    Some(gaze_span(&project_window(w, &cfg.camera)?, &cfg.camera)?)
                }
                Some(w) if w.repr() == GazeRepr::Projection2d => Some(gaze_span(w, &cfg.camera)?),
                _ => None,
            };
            Ok(ScoredExample {
                probs: pred.probs,
                label: c.label(task),
                meta: ExampleMeta {
                    scenario: c.spec.scenario_tag(),
                    mode: c.spec.mode.name().into(),
                    medium: c.spec.medium.name().into(),
                    direction: c.spec.direction.name().into(),
                },
                gaze_span: span,
            })
        })
        .collect()
}

/// Full evaluation summary of a scored set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub modalities: String,
    pub binary: BinaryMetrics,
    pub confusion_matrix: Vec<Vec<f64>>,
    pub confusion_counts: Vec<Vec<usize>>,
    pub balanced_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<BTreeMap<String, BinaryMetrics>>,
}

pub fn report(
    examples: &[ScoredExample],
    task: Task,
    keep: ModalitySet,
    key: Option<BreakdownKey>,
) -> Result<EvalReport> {
    let scored: Vec<Scored> = examples.iter().map(ScoredExample::binary).collect();
    let mc = multiclass_confusion(examples, task.num_classes())?;
    Ok(EvalReport {
        task,
        modalities: keep.to_string(),
        binary: binary_metrics(&scored, 0.5)?,
        confusion_matrix: mc.normalized(),
        balanced_accuracy: mc.balanced_accuracy(),
        confusion_counts: mc.counts,
        breakdown: key.map(|k| breakdown(examples, k, 0.5)).transpose()?,
    })
}
