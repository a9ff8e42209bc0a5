//! One full pass: plan windows, fuse per horizontal window, refine
//! boundaries per overlap region, compute losses and evaluate.
//!
//! Per-window and per-region work runs on a bounded rayon pool; results are
//! collected in plan order so the output does not depend on thread count.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::{
    boundary_from_labels, boundary_from_masks, boundary_loss_student, boundary_loss_ta, refine,
    split_confidence_boundaries, Provenance, RefineInputs,
};
use crate::config::PipelineConfig;
use crate::consistency::{cc_loss, cc_loss_logits, disagreement_rate, OverlapPrediction};
use crate::error::{Error, Result};
use crate::eval::{pseudo_quality_report, PseudoQualityReport};
use crate::fusion::{fuse_with, LabelDecision, PseudoLabelBundle};
use crate::io;
use crate::losses::{cross_entropy, weighted_patch_ce, LossParts, LossReport, LossTerm, Reduction};
use crate::maps::{BinaryMap, LabelMap, LogitsMap, Rect};
use crate::rle::InstanceMaskSet;
use crate::window::{overlap_regions, plan_windows, OverlapRegion, Raster, Window, WindowPlan};

pub const THREADS_ENV: &str = "PANOFUSE_THREADS";

#[derive(Clone, Debug)]
pub struct PipelineInputs {
    pub masks: InstanceMaskSet,
    pub ta_logits: LogitsMap,
    /// Second TA view for the vertical windows; defaults to `ta_logits`.
    pub ta_logits_v: Option<LogitsMap>,
    pub student_logits: LogitsMap,
    pub gt: Option<LabelMap>,
}

#[derive(Clone, Debug, Serialize)]
pub struct WindowDecisions {
    pub window_id: usize,
    pub decisions: Vec<LabelDecision>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionReport {
    pub horiz_id: usize,
    pub vert_id: usize,
    pub rect: Rect,
    pub cc: f64,
    pub disagreement: f64,
    pub bd_ta: f64,
    pub bd_student: f64,
    pub refined_pixels: usize,
    pub ta_agreement: usize,
    pub sam_snap_accepted: usize,
    pub ta_retained: usize,
    pub discarded: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub ctcf_variant: String,
    pub be_variant: String,
    pub windows: usize,
    pub overlap_regions: usize,
    pub confident_pixels: usize,
    pub refined_boundary_pixels: usize,
    pub cc_mean: f64,
    pub cc_per_region: Vec<f64>,
    pub quality: Option<PseudoQualityReport>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub plan: WindowPlan,
    pub overlaps: Vec<OverlapRegion>,
    pub bundle: PseudoLabelBundle,
    pub b_ref: BinaryMap,
    pub decisions: Vec<WindowDecisions>,
    pub regions: Vec<RegionReport>,
    pub losses: LossReport,
    pub report: PipelineReport,
}

/// Worker count from `PANOFUSE_THREADS`, defaulting to the machine's.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `f` on a rayon pool of `threads` workers.
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn local(rect: Rect, window: &Window) -> Rect {
    Rect::new(rect.row - window.rect.row, rect.col - window.rect.col, rect.height, rect.width)
}

/// Sums per-part terms computed in `Sum` mode and reduces them once.
fn pool_terms(terms: impl Iterator<Item = LossTerm>, reduction: Reduction) -> LossTerm {
    let (sum, pixels) = terms.fold((0.0, 0), |(s, n), t| (s + t.value, n + t.pixels));
    let value = match reduction {
        Reduction::Mean if pixels > 0 => sum / pixels as f64,
        Reduction::Mean => 0.0,
        Reduction::Sum => sum,
    };
    LossTerm { value, pixels }
}

fn check_inputs(inputs: &PipelineInputs, config: &PipelineConfig) -> Result<()> {
    let dims = inputs.ta_logits.dims();
    let classes = inputs.ta_logits.num_classes();
    inputs.masks.dims().ensure_same(dims, "instance masks vs TA logits")?;
    inputs.student_logits.dims().ensure_same(dims, "student logits vs TA logits")?;
    let mut channel_counts = vec![inputs.student_logits.num_classes()];
    if let Some(v) = &inputs.ta_logits_v {
        v.dims().ensure_same(dims, "vertical TA logits")?;
        channel_counts.push(v.num_classes());
    }
    if let Some(gt) = &inputs.gt {
        gt.dims().ensure_same(dims, "ground truth")?;
        channel_counts.push(gt.num_classes());
    }
    if channel_counts.iter().any(|&c| c != classes) {
        return Err(Error::DimensionMismatch("inputs disagree on class count".into()));
    }
    config.check_classes(classes)
}

pub fn run(inputs: &PipelineInputs, config: &PipelineConfig, threads: usize) -> Result<PipelineOutput> {
    config.validate()?;
    check_inputs(inputs, config)?;
    with_pool(threads, || run_inner(inputs, config))?
}

struct WindowResult {
    window: Window,
    bundle: PseudoLabelBundle,
    ce_student: LossTerm,
    ce_ta: LossTerm,
}

fn run_inner(inputs: &PipelineInputs, config: &PipelineConfig) -> Result<PipelineOutput> {
    let dims = inputs.ta_logits.dims();
    let ignore = config.ignore_label;
    let plan = plan_windows(dims, config.h_window, config.v_window)?;
    let overlaps = overlap_regions(&plan);

    let ta_h = &inputs.ta_logits;
    let ta_v = inputs.ta_logits_v.as_ref().unwrap_or(ta_h);
    let student = &inputs.student_logits;

    let windows: Vec<WindowResult> = plan
        .horizontal
        .par_iter()
        .map(|w| {
            let logits = ta_h.crop(w.rect)?;
            let bundle = fuse_with(&inputs.masks.crop(w.rect)?, &logits, ignore, config.ctcf_variant)?;
            let ce_student = weighted_patch_ce(&student.crop(w.rect)?, &bundle, config.weights(), Reduction::Sum)?;
            let ce_ta = weighted_patch_ce(&logits, &bundle, config.weights(), Reduction::Sum)?;
            Ok(WindowResult { window: *w, bundle, ce_student, ce_ta })
        })
        .collect::<Result<_>>()?;

    let pseudo_map = LabelMap::stitch(
        &windows.iter().map(|r| (r.window.rect, r.bundle.pseudo_map.clone())).collect::<Vec<_>>(),
        dims,
    )?;
    let confidence = BinaryMap::stitch(
        &windows.iter().map(|r| (r.window.rect, r.bundle.confidence.clone())).collect::<Vec<_>>(),
        dims,
    )?;

    // Whole-image boundaries, cropped per region so region edges do not
    // show up as mask contours.
    let b_sam = boundary_from_masks(&inputs.masks)?;
    let b_ta_h = boundary_from_labels(&ta_h.argmax(ignore));
    let b_ta_v = boundary_from_labels(&ta_v.argmax(ignore));
    let b_student = boundary_from_labels(&student.argmax(ignore));
    let probs_h = ta_h.softmax();
    let probs_v = ta_v.softmax();

    let region_results: Vec<(RegionReport, BinaryMap, Option<LossTerm>, Option<LossTerm>)> = overlaps
        .par_iter()
        .map(|region| {
            let rect = region.rect;
            let owner = &windows[region.horiz_id];
            debug_assert_eq!(owner.window.id, region.horiz_id);
            let bundle = owner.bundle.crop(local(rect, &owner.window))?;
            let sam = b_sam.crop(rect)?;
            let ta_i = b_ta_h.crop(rect)?;
            let ta_j = b_ta_v.crop(rect)?;
            let p_i = probs_h.crop(rect)?;
            let p_j = probs_v.crop(rect)?;
            let (high, low) = split_confidence_boundaries(&bundle, &sam)?;
            let refine_inputs = RefineInputs {
                high_conf: &high,
                low_conf_sam: &low,
                ta_i: &ta_i,
                ta_j: &ta_j,
                probs_i: &p_i,
                probs_j: &p_j,
                sam: &sam,
            };
            let (b_ref, trace) = refine(&refine_inputs, &config.boundary(), config.be_variant)?;
            let bd_ta = boundary_loss_ta(&b_ref, &ta_i, &ta_j)?;
            let bd_student = boundary_loss_student(&b_ref, &b_student.crop(rect)?)?;

            let cc = if config.cc_on_logits {
                cc_loss_logits(&ta_h.crop(rect)?, &ta_v.crop(rect)?)?
            } else {
                cc_loss(&OverlapPrediction::new(*region, p_i.clone(), p_j.clone())?)
            };
            let disagreement = disagreement_rate(&OverlapPrediction::new(*region, p_i, p_j)?);

            let report = RegionReport {
                horiz_id: region.horiz_id,
                vert_id: region.vert_id,
                rect,
                cc,
                disagreement,
                bd_ta: bd_ta.value,
                bd_student: bd_student.value,
                refined_pixels: b_ref.count_ones(),
                ta_agreement: trace.count(Provenance::TaAgreement),
                sam_snap_accepted: trace.count(Provenance::SamSnapAccepted),
                ta_retained: trace.count(Provenance::TaRetained),
                discarded: trace.count(Provenance::Discarded),
            };
            let term = |l: crate::boundary::BoundaryLoss| {
                (!l.degenerate()).then_some(LossTerm { value: l.value, pixels: l.reference_pixels })
            };
            Ok((report, b_ref, term(bd_ta), term(bd_student)))
        })
        .collect::<Result<_>>()?;

    let b_ref =
        BinaryMap::stitch(&region_results.iter().map(|(r, b, _, _)| (r.rect, b.clone())).collect::<Vec<_>>(), dims)?;

    let mean_of = |terms: Vec<LossTerm>| {
        let n = terms.len();
        LossTerm {
            value: if n == 0 { 0.0 } else { terms.iter().map(|t| t.value).sum::<f64>() / n as f64 },
            pixels: terms.iter().map(|t| t.pixels).sum(),
        }
    };
    let bd_ta = mean_of(region_results.iter().filter_map(|r| r.2).collect());
    let bd_student = mean_of(region_results.iter().filter_map(|r| r.3).collect());
    let cc_per_region: Vec<f64> = region_results.iter().map(|r| r.0.cc).collect();
    let cc = LossTerm {
        value: cc_per_region.iter().sum::<f64>() / cc_per_region.len() as f64,
        pixels: overlaps.iter().map(|o| o.rect.area()).sum(),
    };

    // Whole-image TA prediction assembled from the horizontal windows.
    let ta_whole = LogitsMap::stitch(
        &plan.horizontal.iter().map(|w| Ok((w.rect, ta_h.crop(w.rect)?))).collect::<Result<Vec<_>>>()?,
        dims,
    )?;
    let ce_whole = cross_entropy(student, &ta_whole.argmax(ignore), config.reduction())?;

    let losses = LossReport::from_parts(LossParts {
        ce_whole,
        ce_patch_student: pool_terms(windows.iter().map(|w| w.ce_student), config.reduction()),
        ce_patch_ta: pool_terms(windows.iter().map(|w| w.ce_ta), config.reduction()),
        bd_student,
        bd_ta,
        cc,
    });

    let decisions = windows
        .iter()
        .map(|w| WindowDecisions { window_id: w.window.id, decisions: w.bundle.decisions.clone() })
        .collect();
    let bundle = PseudoLabelBundle { pseudo_map, confidence, decisions: Vec::new() };

    let quality = match &inputs.gt {
        Some(gt) => Some(pseudo_quality_report(gt, &bundle, &ta_h.argmax(ignore))?),
        None => None,
    };

    let report = PipelineReport {
        ctcf_variant: variant_tag(config),
        be_variant: format!("{:?}", config.be_variant).to_lowercase(),
        windows: plan.horizontal.len() + plan.vertical.len(),
        overlap_regions: overlaps.len(),
        confident_pixels: bundle.confidence.count_ones(),
        refined_boundary_pixels: b_ref.count_ones(),
        cc_mean: cc.value,
        cc_per_region,
        quality,
    };

    Ok(PipelineOutput {
        plan,
        overlaps,
        bundle,
        b_ref,
        decisions,
        regions: region_results.into_iter().map(|r| r.0).collect(),
        losses,
        report,
    })
}

fn variant_tag(config: &PipelineConfig) -> String {
    match config.ctcf_variant {
        crate::fusion::FusionVariant::Adaptive => "ctcfv2".into(),
        crate::fusion::FusionVariant::FixedTheta(t) => format!("ctcf_fixed_theta({t})"),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

impl PipelineOutput {
    /// Writes every artifact into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::save_label(dir.join("pseudo.plbl"), &self.bundle.pseudo_map)?;
        io::save_binary(dir.join("confidence.plbd"), &self.bundle.confidence)?;
        io::save_binary(dir.join("b_ref.plbd"), &self.b_ref)?;
        write_json(
            &dir.join("plan.json"),
            &serde_json::json!({
                "plan": self.plan,
                "overlaps": self.overlaps,
            }),
        )?;
        write_json(&dir.join("decisions.json"), &self.decisions)?;
        write_json(&dir.join("regions.json"), &self.regions)?;
        write_json(&dir.join("losses.json"), &self.losses)?;
        write_json(&dir.join("report.json"), &self.report)?;
        Ok(())
    }
}
