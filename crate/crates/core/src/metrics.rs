//! Segmentation scores, precision-recall curves, the efficiency ratio and the
//! coefficient of variation.
//!
//! Pixels whose ground truth is unlabeled (class 0) are left out of every
//! count, and means run over the two task classes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{LabelImage, LABEL_ANOMALY, LABEL_DRIVABLE, LABEL_UNLABELED};

pub const EVAL_CLASSES: [u8; 2] = [LABEL_DRIVABLE, LABEL_ANOMALY];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction is {pred:?}, ground truth is {gt:?}")]
    SizeMismatch { pred: (usize, usize), gt: (usize, usize) },
    #[error("no labeled ground-truth pixels to evaluate")]
    EmptyEvaluation,
    #[error("class {0} never occurs in the ground truth, AP is undefined")]
    ClassAbsent(u8),
    #[error("score {0} outside [0, 1]")]
    ScoreRange(f64),
    #[error("{0} is undefined for equal runtimes")]
    EqualRuntime(&'static str),
    #[error("coefficient of variation undefined: {0}")]
    CvUndefined(&'static str),
    #[error("unknown class name {0:?}")]
    UnknownClass(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn class_name(class: u8) -> &'static str {
    match class {
        LABEL_UNLABELED => "unlabeled",
        LABEL_DRIVABLE => "drivable",
        LABEL_ANOMALY => "anomaly",
        _ => "unknown",
    }
}

pub fn class_from_name(name: &str) -> Option<u8> {
    match name {
        "unlabeled" => Some(LABEL_UNLABELED),
        "drivable" => Some(LABEL_DRIVABLE),
        "anomaly" => Some(LABEL_ANOMALY),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// One-vs-rest counts for each evaluated class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub classes: Vec<(u8, ClassCounts)>,
}

impl ConfusionCounts {
    pub fn get(&self, class: u8) -> Option<&ClassCounts> {
        self.classes.iter().find(|(c, _)| *c == class).map(|(_, k)| k)
    }

    /// Adds another image's counts.
    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (class, k) in &other.classes {
            match self.classes.iter_mut().find(|(c, _)| c == class) {
                Some((_, mine)) => {
                    mine.tp += k.tp;
                    mine.fp += k.fp;
                    mine.fn_ += k.fn_;
                    mine.tn += k.tn;
                }
                None => self.classes.push((*class, *k)),
            }
        }
    }
}

pub fn confusion(pred: &LabelImage, gt: &LabelImage) -> Result<ConfusionCounts, MetricsError> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(MetricsError::SizeMismatch {
            pred: (pred.width(), pred.height()),
            gt: (gt.width(), gt.height()),
        });
    }
    confusion_slices(pred.labels(), gt.labels())
}

/// [`confusion`] over raw label buffers of equal length.
pub fn confusion_slices(pred: &[u8], gt: &[u8]) -> Result<ConfusionCounts, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::SizeMismatch {
            pred: (pred.len(), 1),
            gt: (gt.len(), 1),
        });
    }
    let mut classes: Vec<(u8, ClassCounts)> = EVAL_CLASSES.iter().map(|&c| (c, ClassCounts::default())).collect();
    let mut evaluated = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        if g == LABEL_UNLABELED {
            continue;
        }
        evaluated += 1;
        for (class, k) in classes.iter_mut() {
            match (p == *class, g == *class) {
                (true, true) => k.tp += 1,
                (true, false) => k.fp += 1,
                (false, true) => k.fn_ += 1,
                (false, false) => k.tn += 1,
            }
        }
    }
    if evaluated == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    Ok(ConfusionCounts { classes })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub fsc: f64,
    pub iou: f64,
    /// Set when a denominator was zero and the affected score was reported
    /// as 0.
    pub undefined: bool,
}

fn ratio(num: u64, den: u64, undefined: &mut bool) -> f64 {
    if den == 0 {
        *undefined = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn fsc_iou(k: &ClassCounts) -> ClassScores {
    let mut undefined = false;
    let precision = ratio(k.tp, k.tp + k.fp, &mut undefined);
    let recall = ratio(k.tp, k.tp + k.fn_, &mut undefined);
    let iou = ratio(k.tp, k.tp + k.fp + k.fn_, &mut undefined);
    let fsc = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        undefined = true;
        0.0
    };
    ClassScores {
        precision,
        recall,
        fsc,
        iou,
        undefined,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    /// Ordered by decreasing threshold.
    pub points: Vec<PrPoint>,
    pub ap: f64,
}

/// Area under the precision envelope of points ordered by increasing recall.
pub fn envelope_area(points: &[PrPoint]) -> f64 {
    let mut envelope = vec![0.0; points.len()];
    let mut best = 0.0f64;
    for (i, p) in points.iter().enumerate().rev() {
        best = best.max(p.precision);
        envelope[i] = best;
    }
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (p, e) in points.iter().zip(envelope) {
        ap += (p.recall - prev_recall) * e;
        prev_recall = p.recall;
    }
    ap
}

/// Precision and recall of "score ≥ t" for every distinct score `t`, and the
/// all-points interpolated average precision.
pub fn pr_curve(scores: &[f64], gt: &[u8], class: u8) -> Result<PrCurve, MetricsError> {
    if scores.len() != gt.len() {
        return Err(MetricsError::SizeMismatch {
            pred: (scores.len(), 1),
            gt: (gt.len(), 1),
        });
    }
    let mut pairs = Vec::with_capacity(scores.len());
    for (&s, &g) in scores.iter().zip(gt) {
        if !(0.0..=1.0).contains(&s) {
            return Err(MetricsError::ScoreRange(s));
        }
        if g != LABEL_UNLABELED {
            pairs.push((s, g == class));
        }
    }
    let positives = pairs.iter().filter(|p| p.1).count();
    if positives == 0 {
        return Err(MetricsError::ClassAbsent(class));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < pairs.len() {
        let t = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == t {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    let ap = envelope_area(&points);
    Ok(PrCurve { points, ap })
}

/// Accuracy gain per unit of extra runtime: `(m_i − m_base) / (t_i − t_base)`.
pub fn eta(miou: f64, runtime: f64, miou_base: f64, runtime_base: f64) -> Result<f64, MetricsError> {
    let dt = runtime - runtime_base;
    if dt == 0.0 {
        return Err(MetricsError::EqualRuntime("eta"));
    }
    Ok((miou - miou_base) / dt)
}

/// `σ/μ` with the population standard deviation.
pub fn coeff_variation(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::CvUndefined("no values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(MetricsError::CvUndefined("zero mean"));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: u8,
    pub fsc: f64,
    pub iou: f64,
    pub ap: Option<f64>,
    pub undefined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    pub mfsc: f64,
    pub miou: f64,
    pub map: Option<f64>,
    /// Named η and c_v values attached by callers.
    pub extras: Vec<(String, f64)>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    class: String,
    fsc: Option<f64>,
    iou: Option<f64>,
    ap: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

impl EvalReport {
    /// Means over the given classes; `mAP` only when every class has AP.
    pub fn new(classes: Vec<ClassReport>) -> Self {
        let mfsc = mean(classes.iter().map(|c| c.fsc));
        let miou = mean(classes.iter().map(|c| c.iou));
        let map = classes
            .iter()
            .map(|c| c.ap)
            .collect::<Option<Vec<f64>>>()
            .map(|aps| mean(aps.into_iter()));
        Self {
            classes,
            mfsc,
            miou,
            map,
            extras: Vec::new(),
        }
    }

    /// Scores from confusion counts and, optionally, per-class AP.
    pub fn from_counts(counts: &ConfusionCounts, ap: Option<&[(u8, f64)]>) -> Self {
        let classes = counts
            .classes
            .iter()
            .map(|(class, k)| {
                let s = fsc_iou(k);
                ClassReport {
                    class: *class,
                    fsc: s.fsc,
                    iou: s.iou,
                    ap: ap.and_then(|a| a.iter().find(|(c, _)| c == class).map(|(_, v)| *v)),
                    undefined: s.undefined,
                }
            })
            .collect();
        Self::new(classes)
    }

    /// `class,fsc,iou,ap` rows, then `mFsc`, `mIoU` and `mAP` rows that hold
    /// the mean in the column it summarizes.
    pub fn to_csv(&self) -> Result<String, MetricsError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.classes {
            w.serialize(CsvRow {
                class: class_name(c.class).into(),
                fsc: Some(c.fsc),
                iou: Some(c.iou),
                ap: c.ap,
            })?;
        }
        let summary = [
            ("mFsc", Some(self.mfsc), None, None),
            ("mIoU", None, Some(self.miou), None),
            ("mAP", None, None, self.map),
        ];
        for (name, fsc, iou, ap) in summary {
            w.serialize(CsvRow {
                class: name.into(),
                fsc,
                iou,
                ap,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| MetricsError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut classes = Vec::new();
        for row in r.deserialize() {
            let row: CsvRow = row?;
            if matches!(row.class.as_str(), "mFsc" | "mIoU" | "mAP") {
                continue;
            }
            let class = class_from_name(&row.class).ok_or_else(|| MetricsError::UnknownClass(row.class.clone()))?;
            classes.push(ClassReport {
                class,
                fsc: row.fsc.unwrap_or(0.0),
                iou: row.iou.unwrap_or(0.0),
                ap: row.ap,
                undefined: false,
            });
        }
        Ok(Self::new(classes))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    /// `name,value` rows for the attached η and c_v values.
    pub fn extras_csv(&self) -> Result<String, MetricsError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "value"])?;
        for (name, value) in &self.extras {
            w.write_record([name.as_str(), &value.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| MetricsError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// `threshold,precision,recall` rows.
pub fn pr_csv(curve: &PrCurve) -> Result<String, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &curve.points {
        w.serialize(p)?;
    }
    let bytes = w.into_inner().map_err(|e| MetricsError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(labels: Vec<u8>) -> LabelImage {
        LabelImage::new(labels.len(), 1, labels).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let gt = image(vec![1, 2, 2, 1, 0]);
        let c = confusion(&gt, &gt).unwrap();
        for (_, k) in &c.classes {
            assert_eq!((k.fp, k.fn_), (0, 0));
            assert_eq!(k.total(), 4);
            let s = fsc_iou(k);
            assert_eq!((s.fsc, s.iou), (1.0, 1.0));
        }
    }

    #[test]
    fn all_drivable_prediction() {
        let c = confusion(&image(vec![1; 4]), &image(vec![1, 1, 2, 2])).unwrap();
        let s = fsc_iou(c.get(1).unwrap());
        assert_eq!((s.precision, s.recall), (0.5, 1.0));
        assert!((s.fsc - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.iou, 0.5);
        let a = fsc_iou(c.get(2).unwrap());
        assert_eq!((a.fsc, a.iou), (0.0, 0.0));
        assert!(a.undefined);
    }

    #[test]
    fn unlabeled_only_is_an_error() {
        assert!(matches!(
            confusion(&image(vec![1, 2]), &image(vec![0, 0])),
            Err(MetricsError::EmptyEvaluation)
        ));
    }

    #[test]
    fn one_hot_scores_give_unit_ap() {
        let gt = vec![1, 2, 2, 1, 2, 0];
        let scores: Vec<f64> = gt.iter().map(|&g| if g == 2 { 1.0 } else { 0.0 }).collect();
        assert_eq!(pr_curve(&scores, &gt, 2).unwrap().ap, 1.0);
        assert!(matches!(pr_curve(&scores, &[1; 6], 2), Err(MetricsError::ClassAbsent(2))));
    }

    #[test]
    fn eta_examples() {
        let r = |x: f64| (x * 100.0).round() / 100.0;
        assert_eq!(r(eta(92.6, 28.1, 89.3, 24.7).unwrap()), 0.97);
        assert_eq!(r(eta(91.3, 31.2, 89.3, 24.7).unwrap()), 0.31);
        assert_eq!(r(eta(88.6, 25.3, 89.3, 24.7).unwrap()), -1.17);
        assert!(eta(1.0, 2.0, 3.0, 2.0).is_err());
    }

    #[test]
    fn cv_examples() {
        assert_eq!(coeff_variation(&[4.0; 5]).unwrap(), 0.0);
        assert_eq!(coeff_variation(&[1.0, 3.0]).unwrap(), 0.5);
        assert!(coeff_variation(&[-1.0, 1.0]).is_err());
        assert!(coeff_variation(&[]).is_err());
    }

    #[test]
    fn report_means_and_csv() {
        let report = EvalReport::new(vec![
            ClassReport {
                class: 1,
                fsc: 1.0,
                iou: 1.0,
                ap: Some(1.0),
                undefined: false,
            },
            ClassReport {
                class: 2,
                fsc: 2.0 / 3.0,
                iou: 0.5,
                ap: Some(0.25),
                undefined: false,
            },
        ]);
        assert_eq!(report.miou, 0.75);
        assert_eq!(report.map, Some(0.625));
        let text = report.to_csv().unwrap();
        assert!(text.starts_with("class,fsc,iou,ap\ndrivable,"));
        assert!(text.contains("\nmIoU,,0.75,\n"));
        assert_eq!(EvalReport::from_csv(&text).unwrap(), report);
    }
}
