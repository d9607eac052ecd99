//! Evaluation metrics, all reported as percentages.
//!
//! Masks are binarized at 0.5. For the binary classification report
//! hemangioma is the positive class and HCC the negative class; samples
//! without a tumour are excluded from it.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, UalError};
use crate::grid::{BoxTuple, Grid};
use crate::phantom::{Sample, HCC, HEMANGIOMA, NO_TUMOR};

pub const EVAL_HEADER: &str = "sample_id,dsc,p_acc,iou,gt_cls,pred_cls";
pub const SUMMARY_HEADER: &str = "dsc,p_acc,iou,tpr,tnr,acc";

fn binary_counts(pred: &Grid, gt: &Grid) -> Result<(usize, usize, usize, usize)> {
    if !pred.same_shape(gt) {
        return Err(UalError::Dimension(format!(
            "masks differ in shape: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let (mut both, mut p_only, mut g_only, mut neither) = (0, 0, 0, 0);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p >= 0.5, g >= 0.5) {
            (true, true) => both += 1,
            (true, false) => p_only += 1,
            (false, true) => g_only += 1,
            (false, false) => neither += 1,
        }
    }
    Ok((both, p_only, g_only, neither))
}

/// Dice similarity; 100 when both masks are empty.
pub fn dsc(pred: &Grid, gt: &Grid) -> Result<f64> {
    let (both, p_only, g_only, _) = binary_counts(pred, gt)?;
    let denom = 2 * both + p_only + g_only;
    Ok(if denom == 0 { 100.0 } else { 200.0 * both as f64 / denom as f64 })
}

/// Intersection over union of two masks; 100 when both are empty.
pub fn mask_iou(pred: &Grid, gt: &Grid) -> Result<f64> {
    let (both, p_only, g_only, _) = binary_counts(pred, gt)?;
    let union = both + p_only + g_only;
    Ok(if union == 0 { 100.0 } else { 100.0 * both as f64 / union as f64 })
}

pub fn pixel_accuracy(pred: &Grid, gt: &Grid) -> Result<f64> {
    let (both, _, _, neither) = binary_counts(pred, gt)?;
    Ok(100.0 * (both + neither) as f64 / pred.data.len() as f64)
}

/// Intersection over union of two axis-aligned squares.
pub fn box_iou(pred: &BoxTuple, gt: &BoxTuple) -> f64 {
    let (ax0, ay0, ax1, ay1) = pred.extent();
    let (bx0, by0, bx1, by1) = gt.extent();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = pred.side * pred.side + gt.side * gt.side - inter;
    if union <= 0.0 {
        0.0
    } else {
        100.0 * inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    /// Samples without a tumour, left out of the binary report.
    pub excluded: usize,
    pub tpr: f64,
    pub tnr: f64,
    pub acc: f64,
}

/// Hemangioma-positive report. A tumour predicted as "no tumour" counts as a miss of its true class.
///
/// A rate with an empty denominator is reported as 100.
pub fn classification_report(preds: &[u8], gts: &[u8]) -> Result<ClassReport> {
    if preds.len() != gts.len() {
        return Err(UalError::Dimension(format!(
            "{} predictions for {} labels",
            preds.len(),
            gts.len()
        )));
    }
    let mut r = ClassReport::default();
    for (&p, &g) in preds.iter().zip(gts) {
        match g {
            HEMANGIOMA if p == HEMANGIOMA => r.tp += 1,
            HEMANGIOMA => r.fn_ += 1,
            HCC if p == HCC => r.tn += 1,
            HCC => r.fp += 1,
            NO_TUMOR => r.excluded += 1,
            other => return Err(UalError::Data(format!("class label {other} out of range"))),
        }
    }
    let pct = |num: usize, den: usize| if den == 0 { 100.0 } else { 100.0 * num as f64 / den as f64 };
    r.tpr = pct(r.tp, r.tp + r.fn_);
    r.tnr = pct(r.tn, r.tn + r.fp);
    r.acc = pct(r.tp + r.tn, r.tp + r.tn + r.fp + r.fn_);
    Ok(r)
}

/// Exact-match accuracy over all three classes.
pub fn accuracy3(preds: &[u8], gts: &[u8]) -> f64 {
    if gts.is_empty() {
        return 100.0;
    }
    100.0 * preds.iter().zip(gts).filter(|(p, g)| p == g).count() as f64 / gts.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub dsc: f64,
    pub p_acc: f64,
    /// Box IoU; absent for samples without a tumour.
    pub iou: Option<f64>,
    pub mask_iou: f64,
    pub gt_cls: u8,
    pub pred_cls: u8,
}

impl SampleRecord {
    pub fn new(sample_id: &str, probs: &Grid, gt_mask: &Grid, pred_box: &BoxTuple, gt_box: Option<&BoxTuple>, gt_cls: u8, pred_cls: u8) -> Result<Self> {
        Ok(SampleRecord {
            sample_id: sample_id.to_string(),
            dsc: dsc(probs, gt_mask)?,
            p_acc: pixel_accuracy(probs, gt_mask)?,
            iou: gt_box.map(|g| box_iou(pred_box, g)),
            mask_iou: mask_iou(probs, gt_mask)?,
            gt_cls,
            pred_cls,
        })
    }
}

/// Aggregate metrics: DSC and p-Acc averaged over all samples, IoU over tumour samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dsc: f64,
    pub p_acc: f64,
    pub iou: f64,
    pub mask_iou: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub acc: f64,
    /// Three-class accuracy including samples without a tumour.
    pub acc3: f64,
    pub counts: ClassReport,
    pub records: Vec<SampleRecord>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn from_records(records: Vec<SampleRecord>) -> Result<Self> {
        let preds: Vec<u8> = records.iter().map(|r| r.pred_cls).collect();
        let gts: Vec<u8> = records.iter().map(|r| r.gt_cls).collect();
        let counts = classification_report(&preds, &gts)?;
        Ok(EvalReport {
            dsc: mean(records.iter().map(|r| r.dsc)),
            p_acc: mean(records.iter().map(|r| r.p_acc)),
            iou: mean(records.iter().filter_map(|r| r.iou)),
            mask_iou: mean(records.iter().map(|r| r.mask_iou)),
            tpr: counts.tpr,
            tnr: counts.tnr,
            acc: counts.acc,
            acc3: accuracy3(&preds, &gts),
            counts,
            records,
        })
    }

    /// Ground truth scored against itself.
    pub fn oracle(samples: &[Sample]) -> Result<Self> {
        let none = BoxTuple { cx: 0.0, cy: 0.0, side: 0.0 };
        let records = samples
            .iter()
            .map(|s| SampleRecord::new(&s.sample_id, &s.mask, &s.mask, s.bbox.as_ref().unwrap_or(&none), s.bbox.as_ref(), s.cls, s.cls))
            .collect::<Result<_>>()?;
        EvalReport::from_records(records)
    }

    /// Summary values in the order of `SUMMARY_HEADER`.
    pub fn summary_values(&self) -> [f64; 6] {
        [self.dsc, self.p_acc, self.iou, self.tpr, self.tnr, self.acc]
    }

    pub fn summary_row(&self) -> String {
        self.summary_values().iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(",")
    }

    pub fn eval_csv(&self) -> String {
        let mut s = String::from(EVAL_HEADER);
        s.push('\n');
        for r in &self.records {
            let iou = r.iou.map_or("NA".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(s, "{},{:.4},{:.4},{},{},{}", r.sample_id, r.dsc, r.p_acc, iou, r.gt_cls, r.pred_cls);
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        format!("{SUMMARY_HEADER}\n{}\n", self.summary_row())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| UalError::io(dir, e))?;
        for (name, body) in [("eval.csv", self.eval_csv()), ("summary.csv", self.summary_csv())] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| UalError::io(&p, e))?;
        }
        Ok(())
    }
}
