//! `s2m`: score maps to OoD masks, from the command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use s2m::bench::{
    emit_curves, load_items, report_json, run_items, score_histogram, write_visualization,
    ExternalInputs, PipelineConfig, PromptSource,
};
use s2m::io::{read_logits, read_scoremap, write_binary_mask, write_scoremap};
use s2m::metrics::MetricReport;
use s2m::prompts::{perturb_scores, read_prompts, write_prompts, NoiseSpec, PromptSet};
use s2m::scoring::{energy_score, entropy_score, scale_scores, EnergyForm, Temperature};
use s2m::segmenter::{binarize_confidence, fuse_masks, read_mask_dir, segment_all};
use s2m::synth::{read_inlier_dir, read_object_dir, synthesize, write_sample, SynthConfig};
use s2m::{Aggregation, Connectivity, PromptGenConfig, ScoreRaster, SegmenterConfig, SweepConfig, SweepRange};

const PAIRING_HELP: &str = "Files are paired across directories by stem after dropping one role \
prefix (img_, gt_, scores_, score_, pred_, conf_, boxes_, masks_, mask_): img_000123.npy pairs \
with gt_000123.png.";

#[derive(Parser)]
#[command(name = "s2m", version, about = "Anomaly scores to OoD segmentation masks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-pixel anomaly scores from a (C, H, W) logit stack.
    Score(ScoreArgs),
    /// Outlier-exposure composites from inlier images and object crops.
    Synth(SynthArgs),
    /// Box prompts from a score map.
    Prompts(PromptArgs),
    /// Fused confidence map from boxes (or external masks).
    Segment(SegmentArgs),
    /// Threshold sweep and ranking metrics for a directory of maps.
    #[command(after_help = PAIRING_HELP)]
    Eval(EvalArgs),
    /// Prompts, segmentation, fusion and metrics over a dataset.
    #[command(after_help = PAIRING_HELP)]
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Entropy,
    Energy,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    logits: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    /// Energy temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Energy without the logarithm.
    #[arg(long)]
    literal_energy: bool,
    /// Multiply every score by this factor.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// RGB PNG inlier frames.
    #[arg(long)]
    inlier_dir: PathBuf,
    /// `<name>.png` crops with `<name>_mask.png` masks.
    #[arg(long)]
    object_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    objects_per_image: usize,
    #[arg(long, default_value_t = 0.5)]
    scale_min: f64,
    #[arg(long, default_value_t = 2.0)]
    scale_max: f64,
}

#[derive(Args)]
struct PromptArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    quantile: f64,
    #[arg(long, default_value_t = 16)]
    min_area: usize,
    #[arg(long, default_value_t = 0.5)]
    merge_iou: f64,
    /// 4 or 8.
    #[arg(long, default_value_t = 8)]
    connectivity: u32,
    /// Multiplicative score noise amplitude in [0, 1).
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    /// Score map; required with --boxes.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, conflicts_with = "external_masks")]
    boxes: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    margin: f64,
    /// Directory of mask PNGs, used instead of the reference segmenter.
    #[arg(long, requires = "confidences")]
    external_masks: Option<PathBuf>,
    /// JSON list of mask confidences, index-aligned with the sorted masks.
    #[arg(long)]
    confidences: Option<PathBuf>,
    /// Fused confidence map (NPY).
    #[arg(long)]
    out: PathBuf,
    /// Binary `> 0` mask of the fused map.
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RangeArg {
    Dataset,
    Image,
    Unit,
}

impl From<RangeArg> for SweepRange {
    fn from(r: RangeArg) -> Self {
        match r {
            RangeArg::Dataset => SweepRange::Dataset,
            RangeArg::Image => SweepRange::Image,
            RangeArg::Unit => SweepRange::Unit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Pool,
    Mean,
}

impl From<AggArg> for Aggregation {
    fn from(a: AggArg) -> Self {
        match a {
            AggArg::Pool => Aggregation::Pool,
            AggArg::Mean => Aggregation::Mean,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Score or confidence maps (NPY).
    #[arg(long)]
    pred_dir: PathBuf,
    /// Label masks (PNG/PGM; 0 = ID, 1 = OoD, 255 = ignore).
    #[arg(long)]
    gt_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, value_enum, default_value = "dataset")]
    range: RangeArg,
    #[arg(long, value_enum, default_value = "pool")]
    agg: AggArg,
    #[arg(long)]
    report: PathBuf,
    /// Per-image metrics as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Directory for curves.csv and histogram.csv.
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    scores_dir: PathBuf,
    #[arg(long)]
    gt_dir: PathBuf,
    /// One prompt JSON per image; selects external prompts.
    #[arg(long, conflicts_with = "masks_dir")]
    boxes_dir: Option<PathBuf>,
    /// One subdirectory of mask PNGs plus confidences.json per image;
    /// selects external masks.
    #[arg(long)]
    masks_dir: Option<PathBuf>,
    /// Flat TOML document of pipeline settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Grayscale renderings of the fused confidence maps.
    #[arg(long)]
    viz_dir: Option<PathBuf>,
    #[arg(long)]
    curves_dir: Option<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn score(a: ScoreArgs) -> Result<()> {
    let logits = read_logits(&a.logits)?;
    let map = match a.method {
        Method::Entropy => {
            if a.temperature.is_some() || a.literal_energy {
                bail!("--temperature and --literal-energy only apply to --method energy");
            }
            entropy_score(&logits)
        }
        Method::Energy => {
            let t = Temperature::new(a.temperature.unwrap_or(1.0))?;
            let form = if a.literal_energy {
                EnergyForm::Literal
            } else {
                EnergyForm::LogSumExp
            };
            energy_score(&logits, t, form)?
        }
    };
    let map = match a.scale {
        Some(k) => scale_scores(&map, k)?,
        None => map,
    };
    write_scoremap(&map, &a.out)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        objects_per_image: a.objects_per_image,
        scale_min: a.scale_min,
        scale_max: a.scale_max,
        seed: a.seed,
    };
    cfg.validate()?;
    let inliers = read_inlier_dir(&a.inlier_dir)?;
    let objects = read_object_dir(&a.object_dir)?;
    create_dir(&a.out)?;
    for i in 0..a.count as u64 {
        let sample = synthesize(&inliers, &objects, &cfg, i)?;
        write_sample(&sample, &a.out, i)?;
    }
    Ok(())
}

fn prompts(a: PromptArgs) -> Result<()> {
    let cfg = PromptGenConfig {
        quantile: a.quantile,
        min_area: a.min_area,
        merge_iou: a.merge_iou,
        connectivity: Connectivity::from_count(a.connectivity)?,
    };
    let map = read_scoremap(&a.scores)?;
    let map = match a.noise {
        Some(p) => perturb_scores(&map, &NoiseSpec::new(p, a.seed)?)?,
        None => map,
    };
    let boxes = s2m::generate_prompts(&map, &cfg)?;
    let set = PromptSet {
        width: map.width(),
        height: map.height(),
        boxes,
    };
    write_prompts(&set, &a.out)?;
    Ok(())
}

fn segment(a: SegmentArgs) -> Result<()> {
    let scores = a.scores.as_deref().map(read_scoremap).transpose()?;
    let dims = scores.as_ref().map(|m| m.dims());
    let masks = match (&a.external_masks, &a.boxes) {
        (Some(dir), _) => {
            let conf = a.confidences.as_deref().expect("clap enforces --confidences");
            read_mask_dir(dir, conf, dims)?
        }
        (None, Some(boxes)) => {
            let Some(scores) = &scores else {
                bail!("--boxes needs --scores");
            };
            let set = read_prompts(boxes)?;
            if (set.width, set.height) != scores.dims() {
                bail!(
                    "{}: prompts are for a {}x{} frame, scores are {}x{}",
                    boxes.display(),
                    set.width,
                    set.height,
                    scores.width(),
                    scores.height()
                );
            }
            let cfg = SegmenterConfig {
                alpha: a.alpha,
                margin: a.margin,
            };
            segment_all(scores, &set.boxes, &cfg)?
        }
        (None, None) => bail!("one of --boxes or --external-masks is required"),
    };
    let Some((w, h)) = dims.or_else(|| masks.first().map(|m| m.mask.dims())) else {
        bail!("no masks and no --scores to size the output");
    };
    let fused = fuse_masks(&masks, w, h)?;
    write_scoremap(&fused.to_score_map(), &a.out)?;
    if let Some(path) = &a.mask_out {
        write_binary_mask(&binarize_confidence(&fused), path)?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn per_image_csv(report: &MetricReport) -> String {
    let mut out = String::from("name,best_iou,best_threshold,auiou,mean_f1,auprc,fpr95\n");
    for r in &report.per_image {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.name,
            r.best_iou,
            r.best_threshold,
            r.auiou,
            r.mean_f1,
            fmt_opt(r.auprc),
            fmt_opt(r.fpr95)
        )
        .unwrap();
    }
    out
}

fn eval(a: EvalArgs) -> Result<()> {
    let sweep = SweepConfig {
        steps: a.steps,
        range: a.range.into(),
    };
    let (report, rasters) = s2m::bench::evaluate_dirs(&a.pred_dir, &a.gt_dir, &sweep, a.agg.into())?;
    write_text(&a.report, &report_json(&report))?;
    if let Some(path) = &a.csv {
        write_text(path, &per_image_csv(&report))?;
    }
    if let Some(dir) = &a.curves {
        let pairs: Vec<_> = rasters.iter().map(|(m, g)| (m, g)).collect();
        emit_curves(&report, Some(&score_histogram(&pairs, 100)?), dir)?;
    }
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if a.boxes_dir.is_some() {
        cfg.source = PromptSource::ExternalPrompts;
    } else if a.masks_dir.is_some() {
        cfg.source = PromptSource::ExternalMasks;
    } else if cfg.source != PromptSource::Reference {
        bail!("config selects external inputs; pass --boxes-dir or --masks-dir");
    }
    let external = ExternalInputs {
        boxes_dir: a.boxes_dir.clone(),
        masks_dir: a.masks_dir.clone(),
    };
    let items = load_items(&a.scores_dir, &a.gt_dir, &external)?;
    let run = run_items(&items, &cfg)?;
    write_text(&a.report, &report_json(&run.report))?;
    let manifest = serde_json::to_string_pretty(&run.manifest)? + "\n";
    write_text(&a.manifest, &manifest)?;

    if let Some(dir) = &a.viz_dir {
        create_dir(dir)?;
        for o in &run.outcomes {
            write_visualization(&o.confidence, dir.join(format!("conf_{}.png", o.name)))?;
        }
    }
    if let Some(dir) = &a.curves_dir {
        let pairs: Vec<_> = run
            .outcomes
            .iter()
            .zip(&items)
            .map(|(o, item)| (&o.confidence, &item.gt))
            .collect();
        emit_curves(&run.report, Some(&score_histogram(&pairs, 100)?), dir)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Score(a) => score(a),
        Command::Synth(a) => synth(a),
        Command::Prompts(a) => prompts(a),
        Command::Segment(a) => segment(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
