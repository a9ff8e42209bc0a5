use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use panofuse::boundary::{
    boundary_from_labels, boundary_from_masks, refine, split_confidence_boundaries, RefineInputs, RefineVariant,
};
use panofuse::config::PipelineConfig;
use panofuse::eval::ConfusionMatrix;
use panofuse::fusion::{fuse_with, FusionVariant, PseudoLabelBundle};
use panofuse::io;
use panofuse::pipeline::{self, PipelineInputs};
use panofuse::synth::{self, SynthSpec};
use panofuse::window::{overlap_regions, plan_windows, WindowSize};
use panofuse::{Error, ImageDims, Result};

#[derive(Parser, Debug)]
#[command(name = "panofuse", version, about = "Pseudo-label fusion and refinement for panoramic segmentation")]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalOpts {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "HxW")]
    h_window: Option<WindowSize>,
    #[arg(long, global = true, value_name = "HxW")]
    v_window: Option<WindowSize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    snap_radius: Option<usize>,
    #[arg(long, global = true)]
    classes: Option<usize>,
    #[arg(long, global = true)]
    ignore: Option<u8>,
    /// Boundary refinement variant: v1 or v2.
    #[arg(long, global = true)]
    be: Option<RefineVariant>,
    /// Fusion variant: v2 or fixed:THETA.
    #[arg(long, global = true)]
    ctcf: Option<FusionVariant>,
    #[arg(long, global = true)]
    sum_mode: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print machine-readable JSON to stdout.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List sliding windows and their overlap regions.
    Plan {
        #[arg(long, value_name = "HxW")]
        dims: WindowSize,
    },
    /// Fuse instance masks with TA logits into a pseudo-label map.
    Fuse {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        ta: PathBuf,
    },
    /// Refine boundaries over a whole image treated as one overlap region.
    Refine {
        #[arg(long)]
        pseudo: PathBuf,
        #[arg(long)]
        confidence: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        /// TA logits seen through the horizontal window.
        #[arg(long)]
        ta: PathBuf,
        /// TA logits seen through the vertical window; defaults to --ta.
        #[arg(long)]
        ta_v: Option<PathBuf>,
    },
    /// Compute every loss term of one pass.
    Losses {
        #[command(flatten)]
        inputs: PassInputs,
    },
    /// Accumulate a confusion matrix over gt/pred pairs and report IoU.
    Eval {
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
    },
    /// Generate a seeded synthetic scene.
    Synth {
        #[command(flatten)]
        spec: SynthArgs,
    },
    /// Run the full pass and write every artifact.
    Pipeline {
        #[command(flatten)]
        inputs: PassInputs,
    },
}

#[derive(Args, Debug)]
struct PassInputs {
    #[arg(long, required_unless_present = "synth")]
    masks: Option<PathBuf>,
    #[arg(long, required_unless_present = "synth")]
    ta: Option<PathBuf>,
    #[arg(long)]
    ta_v: Option<PathBuf>,
    #[arg(long, required_unless_present = "synth")]
    student: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Generate inputs in memory from a synthetic-scene JSON spec instead.
    #[arg(long, conflicts_with_all = ["masks", "ta", "ta_v", "student", "gt"])]
    synth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON scene spec; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_name = "HxW")]
    dims: Option<WindowSize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    fidelity: Option<f64>,
    #[arg(long)]
    min_shapes: Option<usize>,
    #[arg(long)]
    max_shapes: Option<usize>,
}

fn build_config(g: &GlobalOpts) -> Result<PipelineConfig> {
    let mut c = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = g.h_window {
        c.h_window = v;
    }
    if let Some(v) = g.v_window {
        c.v_window = v;
    }
    if let Some(v) = g.alpha {
        c.alpha = v;
    }
    if let Some(v) = g.lambda {
        c.lambda = v;
    }
    if let Some(v) = g.snap_radius {
        c.snap_radius = v;
    }
    if let Some(v) = g.classes {
        c.num_classes = Some(v);
    }
    if let Some(v) = g.ignore {
        c.ignore_label = v;
    }
    if let Some(v) = g.be {
        c.be_variant = v;
    }
    if let Some(v) = g.ctcf {
        c.ctcf_variant = v;
    }
    if g.sum_mode {
        c.sum_mode = true;
    }
    c.validate()?;
    Ok(c)
}

fn out_dir(g: &GlobalOpts) -> Result<&Path> {
    g.out.as_deref().ok_or_else(|| Error::Config("--out DIR is required for this command".into()))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn synth_spec(args: &SynthArgs, seed: Option<u64>) -> Result<SynthSpec> {
    let mut spec = match &args.spec {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("synth spec: {e}")))?,
        None => SynthSpec::default(),
    };
    if let Some(d) = args.dims {
        spec.height = d.height;
        spec.width = d.width;
    }
    if let Some(v) = args.noise {
        spec.noise_rate = v;
    }
    if let Some(v) = args.temperature {
        spec.temperature = v;
    }
    if let Some(v) = args.fidelity {
        spec.fidelity = v;
    }
    if let Some(v) = args.min_shapes {
        spec.min_shapes = v;
    }
    if let Some(v) = args.max_shapes {
        spec.max_shapes = v;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn load_pass_inputs(p: &PassInputs, g: &GlobalOpts, config: &PipelineConfig) -> Result<PipelineInputs> {
    if let Some(path) = &p.synth {
        let mut spec: SynthSpec = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("synth spec: {e}")))?;
        if let Some(s) = g.seed {
            spec.seed = s;
        }
        if let Some(c) = config.num_classes {
            spec.num_classes = c;
        }
        let scene = synth::generate(&spec)?;
        return Ok(PipelineInputs {
            masks: scene.masks,
            ta_logits: scene.ta_logits,
            ta_logits_v: Some(scene.ta_logits_v),
            student_logits: scene.student_logits,
            gt: Some(scene.gt),
        });
    }
    let required =
        |v: &Option<PathBuf>, name: &str| v.clone().ok_or_else(|| Error::Config(format!("--{name} is required")));
    Ok(PipelineInputs {
        masks: io::load_masks(required(&p.masks, "masks")?)?,
        ta_logits: io::load_logits(required(&p.ta, "ta")?)?,
        ta_logits_v: p.ta_v.as_ref().map(io::load_logits).transpose()?,
        student_logits: io::load_logits(required(&p.student, "student")?)?,
        gt: p.gt.as_ref().map(io::load_label).transpose()?,
    })
}

fn cmd_plan(dims: WindowSize, config: &PipelineConfig, json: bool) -> Result<()> {
    let dims = ImageDims::new(dims.height, dims.width)?;
    let plan = plan_windows(dims, config.h_window, config.v_window)?;
    let overlaps = overlap_regions(&plan);
    if json {
        return print_json(&serde_json::json!({ "plan": plan, "overlaps": overlaps }));
    }
    println!(
        "image {dims}: {} horizontal, {} vertical, {} overlaps",
        plan.horizontal.len(),
        plan.vertical.len(),
        overlaps.len()
    );
    for w in plan.horizontal.iter().chain(&plan.vertical) {
        let r = w.rect;
        println!("window {:>3} {:?} at ({}, {}) size {}x{}", w.id, w.orientation, r.row, r.col, r.height, r.width);
    }
    for o in &overlaps {
        let r = o.rect;
        println!("overlap h{} v{} at ({}, {}) size {}x{}", o.horiz_id, o.vert_id, r.row, r.col, r.height, r.width);
    }
    Ok(())
}

fn cmd_fuse(masks: &Path, ta: &Path, config: &PipelineConfig, g: &GlobalOpts) -> Result<()> {
    let out = out_dir(g)?;
    let masks = io::load_masks(masks)?;
    let ta = io::load_logits(ta)?;
    config.check_classes(ta.num_classes())?;
    let bundle = fuse_with(&masks, &ta, config.ignore_label, config.ctcf_variant)?;
    std::fs::create_dir_all(out)?;
    io::save_label(out.join("pseudo.plbl"), &bundle.pseudo_map)?;
    io::save_binary(out.join("confidence.plbd"), &bundle.confidence)?;
    write_json(&out.join("decisions.json"), &bundle.decisions)?;
    if g.json {
        print_json(&bundle.decisions)?;
    }
    Ok(())
}

fn cmd_refine(
    pseudo: &Path,
    confidence: &Path,
    masks: &Path,
    ta: &Path,
    ta_v: Option<&Path>,
    config: &PipelineConfig,
    g: &GlobalOpts,
) -> Result<()> {
    let out = out_dir(g)?;
    let pseudo_map = io::load_label(pseudo)?;
    let confidence = io::load_binary(confidence)?;
    let masks = io::load_masks(masks)?;
    let ta_i = io::load_logits(ta)?;
    let ta_j = ta_v.map(io::load_logits).transpose()?.unwrap_or_else(|| ta_i.clone());
    config.check_classes(ta_i.num_classes())?;

    let dims = pseudo_map.dims();
    dims.ensure_same(confidence.dims(), "confidence map")?;
    dims.ensure_same(masks.dims(), "instance masks")?;
    dims.ensure_same(ta_i.dims(), "TA logits")?;
    dims.ensure_same(ta_j.dims(), "vertical TA logits")?;

    let bundle = PseudoLabelBundle { pseudo_map, confidence, decisions: Vec::new() };
    let sam = boundary_from_masks(&masks)?;
    let (high, low) = split_confidence_boundaries(&bundle, &sam)?;
    let b_i = boundary_from_labels(&ta_i.argmax(config.ignore_label));
    let b_j = boundary_from_labels(&ta_j.argmax(config.ignore_label));
    let (p_i, p_j) = (ta_i.softmax(), ta_j.softmax());
    let inputs = RefineInputs {
        high_conf: &high,
        low_conf_sam: &low,
        ta_i: &b_i,
        ta_j: &b_j,
        probs_i: &p_i,
        probs_j: &p_j,
        sam: &sam,
    };
    let (b_ref, trace) = refine(&inputs, &config.boundary(), config.be_variant)?;
    std::fs::create_dir_all(out)?;
    io::save_binary(out.join("b_ref.plbd"), &b_ref)?;
    let trace = trace.to_json();
    write_json(&out.join("trace.json"), &trace)?;
    if g.json {
        print_json(&trace["counts"])?;
    }
    Ok(())
}

fn cmd_eval(gt: &[PathBuf], pred: &[PathBuf], g: &GlobalOpts) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::Config(format!("{} --gt files but {} --pred files", gt.len(), pred.len())));
    }
    let pairs =
        gt.iter().zip(pred).map(|(g, p)| Ok((io::load_label(g)?, io::load_label(p)?))).collect::<Result<Vec<_>>>()?;
    let mut cm = ConfusionMatrix::new(pairs[0].0.num_classes());
    for (g, p) in &pairs {
        cm.accumulate(g, p)?;
    }
    let report = cm.report()?;
    if let Some(out) = &g.out {
        std::fs::create_dir_all(out)?;
        write_json(&out.join("eval.json"), &report)?;
    }
    if g.json {
        print_json(&report)
    } else {
        println!("mIoU {:.6} over {} pixels", report.miou, report.pixels);
        for (c, iou) in report.per_class_iou.iter().enumerate() {
            match iou {
                Some(v) => println!("class {c:>3}: {v:.6}"),
                None => println!("class {c:>3}: -"),
            }
        }
        Ok(())
    }
}

fn cmd_synth(args: &SynthArgs, config: &PipelineConfig, g: &GlobalOpts) -> Result<()> {
    let out = out_dir(g)?;
    let mut spec = synth_spec(args, g.seed)?;
    if let Some(c) = config.num_classes {
        spec.num_classes = c;
    }
    let scene = synth::generate(&spec)?;
    std::fs::create_dir_all(out)?;
    io::save_label(out.join("gt.plbl"), &scene.gt)?;
    io::save_logits(out.join("ta_logits.plgt"), &scene.ta_logits)?;
    io::save_logits(out.join("ta_logits_v.plgt"), &scene.ta_logits_v)?;
    io::save_logits(out.join("student_logits.plgt"), &scene.student_logits)?;
    io::save_masks(out.join("masks.json"), &scene.masks)?;
    write_json(&out.join("spec.json"), &spec)?;
    if g.json {
        print_json(&spec)?;
    }
    Ok(())
}

fn cmd_pass(inputs: &PassInputs, config: &PipelineConfig, g: &GlobalOpts, full: bool) -> Result<()> {
    let out = if full { Some(out_dir(g)?) } else { g.out.as_deref() };
    let loaded = load_pass_inputs(inputs, g, config)?;
    let threads = pipeline::threads_from_env()?;
    let result = pipeline::run(&loaded, config, threads)?;
    if full {
        result.write(out.expect("checked above"))?;
        if g.json {
            print_json(&result.report)?;
        }
    } else {
        if let Some(out) = out {
            std::fs::create_dir_all(out)?;
            write_json(&out.join("losses.json"), &result.losses)?;
        }
        print_json(&result.losses)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.opts;
    let config = build_config(g)?;
    match &cli.command {
        Command::Plan { dims } => cmd_plan(*dims, &config, g.json),
        Command::Fuse { masks, ta } => cmd_fuse(masks, ta, &config, g),
        Command::Refine { pseudo, confidence, masks, ta, ta_v } => {
            cmd_refine(pseudo, confidence, masks, ta, ta_v.as_deref(), &config, g)
        }
        Command::Losses { inputs } => cmd_pass(inputs, &config, g, false),
        Command::Eval { gt, pred } => cmd_eval(gt, pred, g),
        Command::Synth { spec } => cmd_synth(spec, &config, g),
        Command::Pipeline { inputs } => cmd_pass(inputs, &config, g, true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("panofuse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
