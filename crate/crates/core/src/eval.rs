//! Confusion-matrix evaluation: per-class IoU, mIoU and pseudo-label quality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::PseudoLabelBundle;
use crate::maps::{BinaryMap, LabelMap};

/// `counts[gt * C + pred]`; rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, counts: vec![0; num_classes * num_classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        self.accumulate_where(gt, pred, None)
    }

    /// Accumulates only pixels where `mask` is set.
    pub fn accumulate_masked(&mut self, gt: &LabelMap, pred: &LabelMap, mask: &BinaryMap) -> Result<()> {
        self.accumulate_where(gt, pred, Some(mask))
    }

    fn accumulate_where(&mut self, gt: &LabelMap, pred: &LabelMap, mask: Option<&BinaryMap>) -> Result<()> {
        gt.dims().ensure_same(pred.dims(), "ground truth vs prediction")?;
        if let Some(m) = mask {
            gt.dims().ensure_same(m.dims(), "ground truth vs evaluation mask")?;
        }
        let c = self.num_classes;
        // Validate first so a bad pixel leaves the matrix untouched.
        for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
            if gt.is_ignore(g) {
                continue;
            }
            for label in [g, p] {
                if label as usize >= c {
                    return Err(Error::LabelOutOfRange { label, num_classes: c });
                }
            }
        }
        for (idx, (&g, &p)) in gt.labels().iter().zip(pred.labels()).enumerate() {
            if gt.is_ignore(g) || mask.is_some_and(|m| !m.bits()[idx]) {
                continue;
            }
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::DimensionMismatch("confusion matrices differ in class count".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// `TP / (TP + FP + FN)` per class; `None` when the union is empty.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        let c = self.num_classes;
        (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let fn_: u64 = (0..c).map(|p| self.get(k, p)).sum::<u64>() - tp;
                let fp: u64 = (0..c).map(|g| self.get(g, k)).sum::<u64>() - tp;
                let union = tp + fp + fn_;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean over classes with a defined IoU.
    pub fn miou(&self) -> Result<f64> {
        miou_of(&self.iou_per_class())
    }

    pub fn report(&self) -> Result<EvalReport> {
        let per_class_iou = self.iou_per_class();
        Ok(EvalReport {
            num_classes: self.num_classes,
            miou: miou_of(&per_class_iou)?,
            per_class_iou,
            pixels: self.total(),
        })
    }
}

fn miou_of(ious: &[Option<f64>]) -> Result<f64> {
    let defined: Vec<f64> = ious.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::UndefinedMiou);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_classes: usize,
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub pixels: u64,
}

pub fn evaluate(gt: &LabelMap, pred: &LabelMap) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(gt.num_classes());
    cm.accumulate(gt, pred)?;
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoQualityReport {
    pub miou_pseudo: f64,
    pub miou_ta: f64,
    /// `miou_pseudo - miou_ta`.
    pub difference: f64,
    /// mIoU over confident pixels only; `None` when undefined.
    pub miou_confident: Option<f64>,
    pub confident_pixels: usize,
}

pub fn pseudo_quality_report(
    gt: &LabelMap,
    bundle: &PseudoLabelBundle,
    ta_argmax: &LabelMap,
) -> Result<PseudoQualityReport> {
    let miou_pseudo = evaluate(gt, &bundle.pseudo_map)?.miou()?;
    let miou_ta = evaluate(gt, ta_argmax)?.miou()?;
    let mut confident = ConfusionMatrix::new(gt.num_classes());
    confident.accumulate_masked(gt, &bundle.pseudo_map, &bundle.confidence)?;
    Ok(PseudoQualityReport {
        miou_pseudo,
        miou_ta,
        difference: miou_pseudo - miou_ta,
        miou_confident: confident.miou().ok(),
        confident_pixels: bundle.confidence.count_ones(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::ImageDims;

    fn map(h: usize, w: usize, c: usize, labels: Vec<u8>) -> LabelMap {
        LabelMap::new(ImageDims::new(h, w).unwrap(), c, 255, labels).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let gt = map(2, 2, 3, vec![2, 2, 2, 2]);
        let cm = evaluate(&gt, &gt).unwrap();
        assert_eq!(cm.get(2, 2), 4);
        assert_eq!(cm.iou_per_class(), vec![None, None, Some(1.0)]);
        assert_eq!(cm.miou().unwrap(), 1.0);
    }

    #[test]
    fn ignored_ground_truth_is_skipped() {
        let gt = map(1, 2, 3, vec![255, 255]);
        let pred = map(1, 2, 3, vec![0, 1]);
        let cm = evaluate(&gt, &pred).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(matches!(cm.miou(), Err(Error::UndefinedMiou)));
    }

    #[test]
    fn iou_formula() {
        // class 0: TP=2, FP=1, FN=1
        let gt = map(1, 5, 2, vec![0, 0, 0, 1, 1]);
        let pred = map(1, 5, 2, vec![0, 0, 1, 0, 1]);
        let ious = evaluate(&gt, &pred).unwrap().iou_per_class();
        assert_eq!(ious[0], Some(0.5));
    }

    #[test]
    fn prediction_overflow_is_rejected_without_side_effects() {
        let gt = map(1, 2, 2, vec![0, 1]);
        let pred = map(1, 2, 3, vec![0, 2]);
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.accumulate(&gt, &pred).is_err());
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn quality_report_endpoints() {
        let gt = map(1, 4, 2, vec![0, 0, 1, 1]);
        let ta = map(1, 4, 2, vec![0, 1, 1, 1]);
        let miou_ta = evaluate(&gt, &ta).unwrap().miou().unwrap();
        let d = gt.dims();

        let exact = PseudoLabelBundle { pseudo_map: gt.clone(), confidence: BinaryMap::ones(d), decisions: vec![] };
        let r = pseudo_quality_report(&gt, &exact, &ta).unwrap();
        assert_eq!(r.difference, 1.0 - miou_ta);
        assert_eq!(r.miou_confident, Some(1.0));

        let same = PseudoLabelBundle { pseudo_map: ta.clone(), confidence: BinaryMap::zeros(d), decisions: vec![] };
        let r = pseudo_quality_report(&gt, &same, &ta).unwrap();
        assert_eq!(r.difference, 0.0);
        assert_eq!(r.miou_confident, None);
    }

    #[test]
    fn report_serialises_undefined_as_null() {
        let gt = map(1, 1, 2, vec![1]);
        let json = serde_json::to_value(evaluate(&gt, &gt).unwrap().report().unwrap()).unwrap();
        assert_eq!(json["per_class_iou"], serde_json::json!([null, 1.0]));
    }
}
