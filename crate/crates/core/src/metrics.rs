//! Segmentation metrics: IoU, F1 (Dice) and pixel accuracy from binary
//! masks.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Pixel counts and the derived metrics (stored as fractions in [0, 1];
/// reports multiply by 100).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub iou: f64,
    pub f1: f64,
    pub acc: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl MetricsReport {
    /// JSON object with the stable key set; iou/f1/acc are reported x100.
    pub fn to_json(&self) -> String {
        format!(
            "{{\"iou\":{:.4},\"f1\":{:.4},\"acc\":{:.4},\"tp\":{},\"fp\":{},\"fn\":{},\"tn\":{}}}",
            self.iou * 100.0,
            self.f1 * 100.0,
            self.acc * 100.0,
            self.tp,
            self.fp,
            self.fn_,
            self.tn
        )
    }
}

fn check_binary<T: Real>(mask: &Tensor<T>, which: &str) -> Result<()> {
    if mask.data().iter().any(|&v| {
        let v = v.to_f64();
        v != 0.0 && v != 1.0
    }) {
        return Err(Error::Input(format!("{which} mask must be binary")));
    }
    Ok(())
}

/// Computes the report from two binary masks of equal extent.
///
/// Conventions: IoU = TP/(TP+FP+FN), F1 = 2TP/(2TP+FP+FN),
/// Acc = (TP+TN)/total; when both masks are empty IoU = F1 = 1.
pub fn metrics<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<MetricsReport> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape {
            op: "metrics",
            detail: format!("{:?} vs {:?}", pred.shape(), gt.shape()),
        });
    }
    check_binary(pred, "prediction")?;
    check_binary(gt, "ground truth")?;

    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &g) in pred.data().iter().zip(gt.data().iter()) {
        match (p.to_f64() > 0.5, g.to_f64() > 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(from_counts(tp, fp, fn_, tn))
}

pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> MetricsReport {
    let union = tp + fp + fn_;
    let (iou, f1) = if union == 0 {
        (1.0, 1.0) // empty-union-empty convention
    } else {
        (
            tp as f64 / union as f64,
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64,
        )
    };
    let total = tp + fp + fn_ + tn;
    let acc = if total == 0 {
        1.0
    } else {
        (tp + tn) as f64 / total as f64
    };
    MetricsReport {
        iou,
        f1,
        acc,
        tp,
        fp,
        fn_,
        tn,
    }
}

/// Macro-average of per-image reports: metric means plus summed counts.
pub fn mean_report(reports: &[MetricsReport]) -> MetricsReport {
    if reports.is_empty() {
        return from_counts(0, 0, 0, 0);
    }
    let n = reports.len() as f64;
    MetricsReport {
        iou: reports.iter().map(|r| r.iou).sum::<f64>() / n,
        f1: reports.iter().map(|r| r.f1).sum::<f64>() / n,
        acc: reports.iter().map(|r| r.acc).sum::<f64>() / n,
        tp: reports.iter().map(|r| r.tp).sum(),
        fp: reports.iter().map(|r| r.fp).sum(),
        fn_: reports.iter().map(|r| r.fn_).sum(),
        tn: reports.iter().map(|r| r.tn).sum(),
    }
}
