//! Knowledge-adaptation loss family: whole-image cross-entropy against the
//! stitched TA prediction, confidence-weighted patch cross-entropy against
//! pseudo labels, and the student / TA totals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::PseudoLabelBundle;
use crate::maps::{LabelMap, LogitsMap};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Mean over valid pixels.
    #[default]
    Mean,
    /// Plain sum over valid pixels.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Extra weight on confident pixels.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// A reduced loss with the number of pixels that contributed to it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub value: f64,
    pub pixels: usize,
}

/// Negative log-softmax of `target` for one pixel, via log-sum-exp.
pub fn pixel_ce(logits: &[f32], target: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse: f64 = logits.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    lse - (logits[target] as f64 - max)
}

fn check_pair(pred: &LogitsMap, target: &LabelMap) -> Result<()> {
    pred.dims().ensure_same(target.dims(), "prediction vs target")?;
    if pred.num_classes() != target.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "prediction has {} classes, target {}",
            pred.num_classes(),
            target.num_classes()
        )));
    }
    Ok(())
}

fn reduce(sum: f64, pixels: usize, reduction: Reduction, what: &str) -> LossTerm {
    if pixels == 0 {
        log::warn!("{what}: no valid pixels, loss defined as 0");
        return LossTerm { value: 0.0, pixels: 0 };
    }
    let value = match reduction {
        Reduction::Mean => sum / pixels as f64,
        Reduction::Sum => sum,
    };
    LossTerm { value, pixels }
}

/// Weighted cross-entropy over non-ignore target pixels; `weight(idx)`
/// scales each pixel's term.
fn weighted_ce(
    pred: &LogitsMap,
    target: &LabelMap,
    reduction: Reduction,
    weight: impl Fn(usize) -> f64,
    what: &str,
) -> Result<LossTerm> {
    check_pair(pred, target)?;
    let mut sum = 0.0;
    let mut pixels = 0;
    for (idx, &label) in target.labels().iter().enumerate() {
        if target.is_ignore(label) {
            continue;
        }
        if label as usize >= pred.num_classes() {
            return Err(Error::LabelOutOfRange { label, num_classes: pred.num_classes() });
        }
        sum += weight(idx) * pixel_ce(pred.pixel(idx), label as usize);
        pixels += 1;
    }
    Ok(reduce(sum, pixels, reduction, what))
}

pub fn cross_entropy(pred: &LogitsMap, target: &LabelMap, reduction: Reduction) -> Result<LossTerm> {
    weighted_ce(pred, target, reduction, |_| 1.0, "cross-entropy")
}

/// `(1 + lambda * M(p)) * CE_p` against the pseudo map, i.e. the plain term
/// plus the confidence-masked term in one pass.
pub fn weighted_patch_ce(
    pred: &LogitsMap,
    bundle: &PseudoLabelBundle,
    weights: LossWeights,
    reduction: Reduction,
) -> Result<LossTerm> {
    weights.validate()?;
    bundle.confidence.dims().ensure_same(bundle.pseudo_map.dims(), "confidence vs pseudo map")?;
    let conf = bundle.confidence.bits();
    weighted_ce(
        pred,
        &bundle.pseudo_map,
        reduction,
        |idx| if conf[idx] { 1.0 + weights.lambda } else { 1.0 },
        "patch cross-entropy",
    )
}

pub fn student_total(ce_whole: f64, ce_patch: f64, bd: f64) -> f64 {
    ce_whole + ce_patch + bd
}

pub fn ta_total(ce_patch: f64, cc: f64, bd: f64) -> f64 {
    ce_patch + cc + bd
}

/// Every loss term of one pass, serialised as a flat JSON object.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce_whole: f64,
    pub ce_whole_pixels: usize,
    pub ce_patch_student: f64,
    pub ce_patch_student_pixels: usize,
    pub ce_patch_ta: f64,
    pub ce_patch_ta_pixels: usize,
    pub bd_student: f64,
    pub bd_student_pixels: usize,
    pub bd_ta: f64,
    pub bd_ta_pixels: usize,
    pub cc: f64,
    pub cc_pixels: usize,
    pub total_student: f64,
    pub total_ta: f64,
}

/// Loss terms before totals are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub ce_whole: LossTerm,
    pub ce_patch_student: LossTerm,
    pub ce_patch_ta: LossTerm,
    pub bd_student: LossTerm,
    pub bd_ta: LossTerm,
    pub cc: LossTerm,
}

impl LossReport {
    pub fn from_parts(p: LossParts) -> Self {
        Self {
            ce_whole: p.ce_whole.value,
            ce_whole_pixels: p.ce_whole.pixels,
            ce_patch_student: p.ce_patch_student.value,
            ce_patch_student_pixels: p.ce_patch_student.pixels,
            ce_patch_ta: p.ce_patch_ta.value,
            ce_patch_ta_pixels: p.ce_patch_ta.pixels,
            bd_student: p.bd_student.value,
            bd_student_pixels: p.bd_student.pixels,
            bd_ta: p.bd_ta.value,
            bd_ta_pixels: p.bd_ta.pixels,
            cc: p.cc.value,
            cc_pixels: p.cc.pixels,
            total_student: student_total(p.ce_whole.value, p.ce_patch_student.value, p.bd_student.value),
            total_ta: ta_total(p.ce_patch_ta.value, p.cc.value, p.bd_ta.value),
        }
    }
}
