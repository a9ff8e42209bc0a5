//! Fusion of class-agnostic instance masks with teacher-assistant logits.
//!
//! Every mask receives one semantic label. Masks whose dominant TA label
//! covers at least the threshold of their size level take that label
//! directly and are marked confident; the rest pick, among their top three
//! TA labels, the one the TA is least uncertain about (lowest mean Shannon
//! entropy over the pixels voting for it).

mod kmeans;

pub use kmeans::{kmeans_area_levels, SizeLevel, SizeLevels};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{BinaryMap, LabelMap, LogitsMap, ProbMap};
use crate::rle::InstanceMaskSet;

/// Absolute slack when testing `lcr >= threshold`; thresholds are float
/// means of coverage rates and a mask sitting exactly on the mean must pass.
pub const LCR_EPS: f64 = 1e-12;

/// Mean entropies closer than this are treated as tied.
pub const ENTROPY_TIE_EPS: f64 = 1e-12;

/// Number of histogram labels considered on the entropy path.
pub const ENTROPY_CANDIDATES: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "theta")]
pub enum FusionVariant {
    /// Per-level thresholds from k-means size levels.
    #[default]
    Adaptive,
    /// One fixed threshold for every mask.
    FixedTheta(f64),
}

impl FusionVariant {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FusionVariant::FixedTheta(t) if !(t > 0.0 && t <= 1.0) => {
                Err(Error::Config(format!("fixed theta must lie in (0, 1], got {t}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionPath {
    DirectLcr,
    Entropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntropy {
    pub label: u8,
    pub count: usize,
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelDecision {
    pub mask_id: u32,
    pub label: u8,
    pub path: DecisionPath,
    pub level: SizeLevel,
    pub threshold: f64,
    pub lcr_top: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_values: Option<Vec<CandidateEntropy>>,
}

/// Fused pseudo semantic map plus the binary confidence map.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelBundle {
    pub pseudo_map: LabelMap,
    pub confidence: BinaryMap,
    pub decisions: Vec<LabelDecision>,
}

impl PseudoLabelBundle {
    /// Crops both rasters; decisions are kept whole.
    pub fn crop(&self, rect: crate::maps::Rect) -> Result<Self> {
        use crate::window::Raster;
        Ok(Self {
            pseudo_map: self.pseudo_map.crop(rect)?,
            confidence: self.confidence.crop(rect)?,
            decisions: self.decisions.clone(),
        })
    }
}

/// Label counts of `ta_argmax` under `mask`, ignore pixels excluded.
///
/// Sorted by count descending, then label ascending.
pub fn label_histogram(mask: &BinaryMap, ta_argmax: &LabelMap) -> Result<Vec<(u8, usize)>> {
    mask.dims().ensure_same(ta_argmax.dims(), "mask vs TA labels")?;
    let mut counts = [0usize; 256];
    for idx in mask.ones_indices() {
        let label = ta_argmax.labels()[idx];
        if !ta_argmax.is_ignore(label) {
            counts[label as usize] += 1;
        }
    }
    let mut hist: Vec<(u8, usize)> =
        counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(l, &c)| (l as u8, c)).collect();
    hist.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(hist)
}

/// Shannon entropy (natural log) of one distribution; `0 ln 0 = 0`.
pub fn pixel_entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum::<f64>()
}

/// Mean per-pixel entropy over the mask pixels whose TA argmax is `label`.
pub fn shannon_entropy_for_label(mask: &BinaryMap, label: u8, ta_probs: &ProbMap) -> Result<f64> {
    mask.dims().ensure_same(ta_probs.dims(), "mask vs TA probabilities")?;
    let mut total = 0.0;
    let mut n = 0usize;
    for idx in mask.ones_indices() {
        let px = ta_probs.pixel(idx);
        if crate::maps::argmax_index(px) == label as usize {
            total += pixel_entropy(px);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedEntropy(label));
    }
    Ok(total / n as f64)
}

/// Per-level thresholds: the mean top-label coverage rate of each level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelThresholds {
    pub large: Option<f64>,
    pub medium: Option<f64>,
    pub small: Option<f64>,
}

impl LevelThresholds {
    pub fn get(&self, level: SizeLevel) -> Option<f64> {
        match level {
            SizeLevel::Large => self.large,
            SizeLevel::Medium => self.medium,
            SizeLevel::Small => self.small,
        }
    }
}

/// Mean of `lcr_tops` per level. Masks without a level are ignored and
/// empty levels have no threshold.
pub fn level_thresholds(levels: &SizeLevels, lcr_tops: &[(u32, f64)]) -> LevelThresholds {
    let mut sums = [(0.0f64, 0usize); 3];
    for &(id, lcr) in lcr_tops {
        if let Some(level) = levels.level_of(id) {
            let slot = &mut sums[level as usize];
            slot.0 += lcr;
            slot.1 += 1;
        }
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    LevelThresholds { large: mean(sums[0]), medium: mean(sums[1]), small: mean(sums[2]) }
}

struct MaskEvidence {
    id: u32,
    area: usize,
    bitmap: BinaryMap,
    histogram: Vec<(u8, usize)>,
    lcr_top: f64,
}

/// Adaptive fusion with per-level thresholds.
pub fn fuse(masks: &InstanceMaskSet, ta_logits: &LogitsMap, ignore_label: u8) -> Result<PseudoLabelBundle> {
    fuse_with(masks, ta_logits, ignore_label, FusionVariant::Adaptive)
}

pub fn fuse_with(
    masks: &InstanceMaskSet,
    ta_logits: &LogitsMap,
    ignore_label: u8,
    variant: FusionVariant,
) -> Result<PseudoLabelBundle> {
    variant.validate()?;
    let dims = ta_logits.dims();
    masks.dims().ensure_same(dims, "instance masks vs TA logits")?;
    let classes = ta_logits.num_classes();
    if !(2..=255).contains(&classes) {
        return Err(Error::InvalidValue(format!("fusion needs 2..=255 classes, got {classes}")));
    }

    let ta_probs = ta_logits.softmax();
    let ta_argmax = ta_probs.argmax(ignore_label);

    let mut evidence = Vec::with_capacity(masks.len());
    for mask in masks.masks() {
        let bitmap = mask.decode(dims)?;
        let histogram = label_histogram(&bitmap, &ta_argmax)?;
        let Some(&(_, top)) = histogram.first() else {
            continue;
        };
        let total: usize = histogram.iter().map(|&(_, c)| c).sum();
        evidence.push(MaskEvidence {
            id: mask.id,
            area: mask.area,
            bitmap,
            histogram,
            lcr_top: top as f64 / total as f64,
        });
    }

    let mut decisions = Vec::with_capacity(evidence.len());
    if !evidence.is_empty() {
        let areas: Vec<(u32, usize)> = evidence.iter().map(|e| (e.id, e.area)).collect();
        let levels = kmeans_area_levels(&areas)?;
        let lcrs: Vec<(u32, f64)> = evidence.iter().map(|e| (e.id, e.lcr_top)).collect();
        let thresholds = level_thresholds(&levels, &lcrs);

        for ev in &evidence {
            let level = levels.level_of(ev.id).expect("every mask is clustered");
            let threshold = match variant {
                FusionVariant::Adaptive => thresholds.get(level).expect("level has members"),
                FusionVariant::FixedTheta(t) => t,
            };
            decisions.push(decide(ev, level, threshold, &ta_probs)?);
        }
    }

    // Larger masks first so nested smaller masks overwrite them.
    let mut order: Vec<usize> = (0..evidence.len()).collect();
    order.sort_by(|&a, &b| evidence[b].area.cmp(&evidence[a].area).then(evidence[a].id.cmp(&evidence[b].id)));

    let mut labels = ta_argmax.labels().to_vec();
    let mut confident = vec![false; dims.pixels()];
    for &i in &order {
        let decision = &decisions[i];
        let direct = decision.path == DecisionPath::DirectLcr;
        for idx in evidence[i].bitmap.ones_indices() {
            labels[idx] = decision.label;
            confident[idx] = direct;
        }
    }

    Ok(PseudoLabelBundle {
        pseudo_map: LabelMap::new(dims, classes, ignore_label, labels)?,
        confidence: BinaryMap::new(dims, confident)?,
        decisions,
    })
}

fn decide(ev: &MaskEvidence, level: SizeLevel, threshold: f64, ta_probs: &ProbMap) -> Result<LabelDecision> {
    let (top_label, _) = ev.histogram[0];
    if ev.lcr_top >= threshold - LCR_EPS {
        return Ok(LabelDecision {
            mask_id: ev.id,
            label: top_label,
            path: DecisionPath::DirectLcr,
            level,
            threshold,
            lcr_top: ev.lcr_top,
            entropy_values: None,
        });
    }

    let candidates = ev
        .histogram
        .iter()
        .take(ENTROPY_CANDIDATES)
        .map(|&(label, count)| {
            Ok(CandidateEntropy { label, count, entropy: shannon_entropy_for_label(&ev.bitmap, label, ta_probs)? })
        })
        .collect::<Result<Vec<_>>>()?;

    // Candidates arrive in (count desc, label asc) order, which is the tie-break.
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if c.entropy < best.entropy - ENTROPY_TIE_EPS {
            best = *c;
        }
    }

    Ok(LabelDecision {
        mask_id: ev.id,
        label: best.label,
        path: DecisionPath::Entropy,
        level,
        threshold,
        lcr_top: ev.lcr_top,
        entropy_values: Some(candidates),
    })
}
