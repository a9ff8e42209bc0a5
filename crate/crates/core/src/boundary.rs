//! Boundary extraction, refinement of boundaries inside window overlaps, and
//! the boundary-alignment losses.
//!
//! Refinement (v2) works in two stages over an overlap region:
//!
//! 1. Each pixel of the high-confidence pseudo-label boundary is accepted
//!    when either TA view also marks it as boundary; otherwise it is demoted
//!    to the candidate set.
//! 2. Each candidate (low-confidence SAM boundary plus demotions) snaps to the
//!    nearest SAM boundary pixel in its column within `snap_radius`. The
//!    snapped pixel is accepted when either TA view is ambiguous there
//!    (top-2 probability gap below `alpha`) and discarded otherwise.
//!
//! The v1 procedure is kept for comparison: it walks the horizontal TA
//! boundary instead, requires agreement of the other TA view and SAM, and
//! keeps the TA pixel when the SAM evidence is not accepted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::PseudoLabelBundle;
use crate::maps::{BinaryMap, BoundaryMap, ImageDims, LabelMap, ProbMap};
use crate::rle::InstanceMaskSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineVariant {
    V1,
    #[default]
    V2,
}

impl std::str::FromStr for RefineVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" | "bev1" => Ok(RefineVariant::V1),
            "v2" | "bev2" => Ok(RefineVariant::V2),
            other => Err(Error::Config(format!("unknown boundary variant {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    pub alpha: f64,
    pub snap_radius: usize,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self { alpha: 0.3, snap_radius: 5 }
    }
}

impl BoundaryConfig {
    /// `alpha = 0` is accepted: it disables SAM snapping entirely.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn neighbours(dims: ImageDims, row: usize, col: usize) -> impl Iterator<Item = Option<(usize, usize)>> {
    NEIGHBOURS.iter().map(move |&(dr, dc)| {
        let r = row.checked_add_signed(dr)?;
        let c = col.checked_add_signed(dc)?;
        (r < dims.height && c < dims.width).then_some((r, c))
    })
}

/// A pixel is boundary iff a 4-neighbour carries a different non-ignore
/// label. Ignore pixels are never boundary.
pub fn boundary_from_labels(map: &LabelMap) -> BoundaryMap {
    let dims = map.dims();
    let mut out = BinaryMap::zeros(dims);
    for row in 0..dims.height {
        for col in 0..dims.width {
            let label = map.get(row, col);
            if map.is_ignore(label) {
                continue;
            }
            let edge = neighbours(dims, row, col).flatten().any(|(r, c)| {
                let other = map.get(r, c);
                !map.is_ignore(other) && other != label
            });
            if edge {
                out.set(row, col, true);
            }
        }
    }
    out
}

/// Contour pixels of a binary mask: set pixels with a 4-neighbour that is
/// unset or outside the image.
pub fn mask_contour(mask: &BinaryMap) -> BinaryMap {
    let dims = mask.dims();
    let mut out = BinaryMap::zeros(dims);
    for row in 0..dims.height {
        for col in 0..dims.width {
            if mask.get(row, col) && neighbours(dims, row, col).any(|n| n.is_none_or(|(r, c)| !mask.get(r, c))) {
                out.set(row, col, true);
            }
        }
    }
    out
}

/// Union of every mask's contour.
pub fn boundary_from_masks(masks: &InstanceMaskSet) -> Result<BoundaryMap> {
    let mut out = BinaryMap::zeros(masks.dims());
    for bitmap in masks.decode_all()? {
        for idx in mask_contour(&bitmap).ones_indices() {
            out.bits[idx] = true;
        }
    }
    Ok(out)
}

/// Gap between the largest and second-largest probability at flat index `idx`.
pub fn top2_gap(probs: &ProbMap, idx: usize) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &p in probs.pixel(idx) {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    if second == f64::NEG_INFINITY {
        // single channel: no competitor
        return 1.0;
    }
    first - second
}

/// Splits boundary evidence by fusion confidence: the pseudo-label boundary
/// on confident pixels, and the SAM boundary on unconfident ones.
pub fn split_confidence_boundaries(
    bundle: &PseudoLabelBundle,
    b_sam: &BoundaryMap,
) -> Result<(BoundaryMap, BoundaryMap)> {
    bundle.confidence.dims().ensure_same(b_sam.dims(), "confidence vs SAM boundary")?;
    let high = boundary_from_labels(&bundle.pseudo_map).and(&bundle.confidence)?;
    let low = b_sam.and_not(&bundle.confidence)?;
    Ok((high, low))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Confirmed by a TA boundary at the same position.
    TaAgreement,
    /// Snapped SAM boundary pixel accepted by the ambiguity test.
    SamSnapAccepted,
    /// TA pixel kept by the v1 fallback.
    TaRetained,
    /// Considered and rejected.
    Discarded,
}

impl Provenance {
    pub fn accepted(self) -> bool {
        !matches!(self, Provenance::Discarded)
    }
}

/// Per-pixel record of how the refined map was assembled. Pixels never
/// considered carry `None`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefinementTrace {
    pub dims: ImageDims,
    pub provenance: Vec<Option<Provenance>>,
}

#[derive(Serialize)]
struct TraceEntry {
    row: usize,
    col: usize,
    provenance: Provenance,
}

impl RefinementTrace {
    fn new(dims: ImageDims) -> Self {
        Self { dims, provenance: vec![None; dims.pixels()] }
    }

    /// Accepting provenances are never overwritten; a discard only lands on
    /// untouched pixels.
    fn mark(&mut self, idx: usize, p: Provenance) {
        let slot = &mut self.provenance[idx];
        match (*slot, p) {
            (Some(prev), _) if prev.accepted() => {}
            (Some(Provenance::Discarded), Provenance::Discarded) => {}
            _ => *slot = Some(p),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Option<Provenance> {
        self.provenance[self.dims.index(row, col)]
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&x| x == Some(p)).count()
    }

    /// Binary map of pixels with the given provenance.
    pub fn select(&self, p: Provenance) -> BinaryMap {
        BinaryMap { dims: self.dims, bits: self.provenance.iter().map(|&x| x == Some(p)).collect() }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let entries: Vec<TraceEntry> = self
            .provenance
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                p.map(|provenance| TraceEntry { row: i / self.dims.width, col: i % self.dims.width, provenance })
            })
            .collect();
        serde_json::json!({
            "height": self.dims.height,
            "width": self.dims.width,
            "counts": {
                "ta_agreement": self.count(Provenance::TaAgreement),
                "sam_snap_accepted": self.count(Provenance::SamSnapAccepted),
                "ta_retained": self.count(Provenance::TaRetained),
                "discarded": self.count(Provenance::Discarded),
            },
            "pixels": entries,
        })
    }
}

/// Everything refinement reads, all restricted to one overlap region.
#[derive(Clone, Copy, Debug)]
pub struct RefineInputs<'a> {
    /// High-confidence pseudo-label boundary (v2 only).
    pub high_conf: &'a BoundaryMap,
    /// SAM boundary on low-confidence pixels (v2 only).
    pub low_conf_sam: &'a BoundaryMap,
    pub ta_i: &'a BoundaryMap,
    pub ta_j: &'a BoundaryMap,
    pub probs_i: &'a ProbMap,
    pub probs_j: &'a ProbMap,
    pub sam: &'a BoundaryMap,
}

impl RefineInputs<'_> {
    fn check(&self) -> Result<ImageDims> {
        let dims = self.sam.dims();
        dims.ensure_same(self.high_conf.dims(), "high-confidence boundary")?;
        dims.ensure_same(self.low_conf_sam.dims(), "low-confidence boundary")?;
        dims.ensure_same(self.ta_i.dims(), "TA boundary i")?;
        dims.ensure_same(self.ta_j.dims(), "TA boundary j")?;
        dims.ensure_same(self.probs_i.dims(), "TA probabilities i")?;
        dims.ensure_same(self.probs_j.dims(), "TA probabilities j")?;
        if self.probs_i.num_classes() != self.probs_j.num_classes() {
            return Err(Error::DimensionMismatch("TA views disagree on class count".into()));
        }
        Ok(dims)
    }
}

/// Nearest SAM boundary pixel in the same column within `radius`, preferring
/// the upper pixel on equal distance.
fn snap(sam: &BoundaryMap, row: usize, col: usize, radius: usize) -> Option<usize> {
    let dims = sam.dims();
    for d in 0..=radius.min(dims.height) {
        if let Some(up) = row.checked_sub(d) {
            if sam.get(up, col) {
                return Some(dims.index(up, col));
            }
        }
        let down = row + d;
        if d > 0 && down < dims.height && sam.get(down, col) {
            return Some(dims.index(down, col));
        }
    }
    None
}

fn ambiguous(inputs: &RefineInputs<'_>, idx: usize, alpha: f64) -> bool {
    top2_gap(inputs.probs_i, idx).min(top2_gap(inputs.probs_j, idx)) < alpha
}

pub fn refine(
    inputs: &RefineInputs<'_>,
    cfg: &BoundaryConfig,
    variant: RefineVariant,
) -> Result<(BoundaryMap, RefinementTrace)> {
    match variant {
        RefineVariant::V1 => refine_bev1(inputs, cfg),
        RefineVariant::V2 => refine_bev2(inputs, cfg),
    }
}

pub fn refine_bev2(inputs: &RefineInputs<'_>, cfg: &BoundaryConfig) -> Result<(BoundaryMap, RefinementTrace)> {
    cfg.validate()?;
    let dims = inputs.check()?;
    let mut trace = RefinementTrace::new(dims);

    let mut demoted = Vec::new();
    for idx in inputs.high_conf.ones_indices() {
        if inputs.ta_i.bits[idx] || inputs.ta_j.bits[idx] {
            trace.mark(idx, Provenance::TaAgreement);
        } else {
            demoted.push(idx);
        }
    }

    let candidates = inputs.low_conf_sam.ones_indices().chain(demoted);
    for idx in candidates {
        let (row, col) = (idx / dims.width, idx % dims.width);
        match snap(inputs.sam, row, col, cfg.snap_radius) {
            Some(q) if ambiguous(inputs, q, cfg.alpha) => trace.mark(q, Provenance::SamSnapAccepted),
            Some(q) => {
                trace.mark(idx, Provenance::Discarded);
                trace.mark(q, Provenance::Discarded);
            }
            None => trace.mark(idx, Provenance::Discarded),
        }
    }

    Ok((trace_to_map(&trace), trace))
}

pub fn refine_bev1(inputs: &RefineInputs<'_>, cfg: &BoundaryConfig) -> Result<(BoundaryMap, RefinementTrace)> {
    cfg.validate()?;
    let dims = inputs.check()?;
    let mut trace = RefinementTrace::new(dims);

    for idx in inputs.ta_i.ones_indices() {
        if inputs.ta_j.bits[idx] && inputs.sam.bits[idx] {
            trace.mark(idx, Provenance::TaAgreement);
            continue;
        }
        let (row, col) = (idx / dims.width, idx % dims.width);
        match snap(inputs.sam, row, col, cfg.snap_radius) {
            Some(q) if ambiguous(inputs, q, cfg.alpha) => trace.mark(q, Provenance::SamSnapAccepted),
            _ => trace.mark(idx, Provenance::TaRetained),
        }
    }

    Ok((trace_to_map(&trace), trace))
}

fn trace_to_map(trace: &RefinementTrace) -> BoundaryMap {
    BinaryMap { dims: trace.dims, bits: trace.provenance.iter().map(|p| p.is_some_and(Provenance::accepted)).collect() }
}

/// A boundary loss value with the reference pixel count it was normalised by.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLoss {
    pub value: f64,
    /// `C_o`: number of pixels in the refined map.
    pub reference_pixels: usize,
}

impl BoundaryLoss {
    /// True when the refined map was empty and the loss was defined as 0.
    pub fn degenerate(&self) -> bool {
        self.reference_pixels == 0
    }
}

fn normalised(hamming: usize, b_ref: &BoundaryMap, what: &str) -> BoundaryLoss {
    let c_o = b_ref.count_ones();
    if c_o == 0 {
        log::warn!("{what}: refined boundary map is empty, loss defined as 0");
        return BoundaryLoss { value: 0.0, reference_pixels: 0 };
    }
    BoundaryLoss { value: hamming as f64 / c_o as f64, reference_pixels: c_o }
}

/// TA boundary loss: Hamming distance of both TA views to the refined map,
/// over the refined map's pixel count.
pub fn boundary_loss_ta(b_ref: &BoundaryMap, b_ta_i: &BoundaryMap, b_ta_j: &BoundaryMap) -> Result<BoundaryLoss> {
    let h = b_ref.hamming(b_ta_i)? + b_ref.hamming(b_ta_j)?;
    Ok(normalised(h, b_ref, "TA boundary loss"))
}

pub fn boundary_loss_student(b_ref: &BoundaryMap, b_s: &BoundaryMap) -> Result<BoundaryLoss> {
    let h = b_ref.hamming(b_s)?;
    Ok(normalised(h, b_ref, "student boundary loss"))
}
