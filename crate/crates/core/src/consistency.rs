//! Prediction consistency between the two windows covering an overlap.

use crate::error::{Error, Result};
use crate::maps::{argmax_index, LogitsMap, ProbMap};
use crate::window::OverlapRegion;

/// Both windows' predictions restricted to one overlap region.
#[derive(Clone, Debug)]
pub struct OverlapPrediction {
    pub region: OverlapRegion,
    pub probs_h: ProbMap,
    pub probs_v: ProbMap,
}

impl OverlapPrediction {
    pub fn new(region: OverlapRegion, probs_h: ProbMap, probs_v: ProbMap) -> Result<Self> {
        let dims = region.rect.dims();
        dims.ensure_same(probs_h.dims(), "horizontal-window probabilities")?;
        dims.ensure_same(probs_v.dims(), "vertical-window probabilities")?;
        if probs_h.num_classes() != probs_v.num_classes() {
            return Err(Error::DimensionMismatch(format!(
                "class counts differ: {} vs {}",
                probs_h.num_classes(),
                probs_v.num_classes()
            )));
        }
        Ok(Self { region, probs_h, probs_v })
    }
}

fn mse(a: impl ExactSizeIterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    let n = a.len();
    let sum: f64 = a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / n as f64
}

/// Mean squared difference over every pixel and channel.
pub fn cc_loss(op: &OverlapPrediction) -> f64 {
    mse(op.probs_h.values().iter().copied(), op.probs_v.values().iter().copied())
}

/// Raw-logit variant of [`cc_loss`].
pub fn cc_loss_logits(h: &LogitsMap, v: &LogitsMap) -> Result<f64> {
    h.dims().ensure_same(v.dims(), "logits consistency")?;
    if h.num_classes() != v.num_classes() {
        return Err(Error::DimensionMismatch("logits disagree on class count".into()));
    }
    Ok(mse(h.values().iter().map(|&x| x as f64), v.values().iter().map(|&x| x as f64)))
}

/// Fraction of pixels whose argmax differs between the two windows.
pub fn disagreement_rate(op: &OverlapPrediction) -> f64 {
    let pixels = op.region.rect.area();
    let differing =
        (0..pixels).filter(|&i| argmax_index(op.probs_h.pixel(i)) != argmax_index(op.probs_v.pixel(i))).count();
    differing as f64 / pixels as f64
}
