//! Command-line surface for the detection pipeline.
//!
//! Subcommands cover the whole loop: `synth` generates a dataset, `assign`
//! dumps training targets, `train` fits the heads, `infer` decodes
//! detections, `eval` scores them, `sweep` batches infer+eval over a
//! parameter grid, and `gradcheck` verifies gradients. Every command is
//! deterministic given its inputs and flags, writes files atomically, and
//! exits nonzero on any failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use tadet::assign::LocationTargets;
use tadet::config::AppConfig;
use tadet::decode::{decode_sequence, FusionMode, Proposal};
use tadet::eval::{evaluate, EvalOptions, EvalReport, DEFAULT_THRESHOLDS};
use tadet::formats::{
    self, read_annotations, read_checkpoint, read_detections, write_checkpoint, write_detections,
    DetectionsFile, LoadedSequence,
};
use tadet::heads::{HeadConfig, Heads};
use tadet::losses::{gradient_check, train, GradCheckConfig, TrainSequence};
use tadet::rng::Stream;
use tadet::synth::generate_dataset;
use tadet::timeline::{pyramid_locations, PyramidConfig, TemporalInterval};

#[derive(Parser)]
#[command(
    name = "tadet",
    version,
    about = "One-stage temporal action detection with boundary-confidence refinement"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (annotations + feature pyramids).
    Synth {
        /// TOML config; missing fields use built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (annotations.json + features/*.fpy).
        #[arg(long)]
        out: PathBuf,
        /// Override the dataset seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dump per-location training targets for inspection.
    Assign {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the prediction heads on a dataset directory.
    Train {
        /// Dataset directory produced by `synth` (or matching its layout).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output checkpoint file.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-step loss table (CSV).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Optional loss-curve plot (SVG).
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Decode detections from a trained checkpoint.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Output detections file (JSON, seconds).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score-fusion mode (cls_sqrt_se, boundary_only, cls_only, cls_s,
        /// cls_e, mean3, product3).
        #[arg(long)]
        fusion: Option<String>,
        /// Confidence-scaling width.
        #[arg(long)]
        sigma: Option<f64>,
        /// Verbs per location entering multi-task pairing.
        #[arg(long)]
        topv: Option<usize>,
        /// Nouns per location entering multi-task pairing.
        #[arg(long)]
        topn: Option<usize>,
    },
    /// Score detections against annotations.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// tIoU thresholds, comma-separated (default 0.1,0.2,0.3,0.4,0.5).
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Output report (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also compute boundary-error curves and write them as SVG next to
        /// the report.
        #[arg(long)]
        curves: bool,
        /// Also compute mAP stratified by action length.
        #[arg(long)]
        length_groups: bool,
    },
    /// Batch infer+eval over a parameter grid; emits a combined CSV.
    Sweep {
        /// Which knob to sweep.
        #[arg(long)]
        param: SweepParam,
        /// Grid points, comma-separated (sigma: numbers; fusion: mode names;
        /// topvn: v:n pairs). Defaults to a built-in grid.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite and print the worst error.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of random instances.
        #[arg(long, default_value_t = 10)]
        instances: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    Sigma,
    Fusion,
    Topvn,
}

fn main() -> ExitCode {
    // Rust ignores SIGPIPE by default, turning `tadet ... | head` into a
    // "failed printing to stdout" panic; restore the conventional behavior.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<(), String> {
    match cmd {
        Command::Synth { config, out, seed } => run_synth(config.as_deref(), &out, seed),
        Command::Assign { annotations, config, out } => {
            run_assign(&annotations, config.as_deref(), &out)
        }
        Command::Train { data, config, out, trace, plot } => {
            run_train(&data, config.as_deref(), &out, trace.as_deref(), plot.as_deref())
        }
        Command::Infer { data, ckpt, out, config, fusion, sigma, topv, topn } => {
            let mut app = AppConfig::load(config.as_deref())?;
            apply_infer_overrides(&mut app, fusion.as_deref(), sigma, topv, topn)?;
            let detections = infer_detections(&data, &ckpt, &app)?;
            write_detections(&out, &detections).map_err(|e| e.to_string())?;
            let total: usize = detections.videos.iter().map(|v| v.detections.len()).sum();
            println!(
                "wrote {} detections across {} videos to {}",
                total,
                detections.videos.len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval { detections, annotations, thresholds, out, curves, length_groups } => {
            run_eval(&detections, &annotations, thresholds, &out, curves, length_groups)
        }
        Command::Sweep { param, values, data, ckpt, config, thresholds, out } => {
            run_sweep(param, values.as_deref(), &data, &ckpt, config.as_deref(), thresholds, &out)
        }
        Command::Gradcheck { seed, config, instances } => {
            run_gradcheck(seed, config.as_deref(), instances)
        }
    }
}

/// Dataset loaded from a `synth`-layout directory.
struct Dataset {
    annotations: formats::AnnotationFile,
    sequences: Vec<LoadedSequence>,
}

fn load_dataset(dir: &Path) -> Result<Dataset, String> {
    let annotations =
        read_annotations(&dir.join("annotations.json")).map_err(|e| e.to_string())?;
    let sequences =
        formats::load_sequences(&annotations, &dir.join("features")).map_err(|e| e.to_string())?;
    Ok(Dataset { annotations, sequences })
}

/// Per-video pyramid geometry: the configured level/scale structure on this
/// video's length and frame rate.
/// Pyramid geometry for one loaded sequence. The feature file is
/// self-describing, so its level count and base length win over the
/// configured defaults; the config contributes the scale factor.
fn video_pyramid(app: &AppConfig, seq: &LoadedSequence) -> PyramidConfig {
    PyramidConfig {
        frame_rate: seq.frame_rate,
        num_levels: seq.features.levels.len(),
        ..app.pyramid
    }
    .with_base_length(seq.features.base_length())
}

fn run_synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), String> {
    let mut app = AppConfig::load(config)?;
    if let Some(s) = seed {
        app.synth.seed = s;
    }
    let ds = generate_dataset(&app.synth)?;
    formats::write_synth_dataset(out, &ds).map_err(|e| e.to_string())?;
    let actions: usize = ds.sequences.iter().map(|s| s.segments.len()).sum();
    println!(
        "wrote {} sequences ({} actions, {} classes, seed {}) to {}",
        ds.sequences.len(),
        actions,
        app.synth.num_classes,
        app.synth.seed,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct LocationDump {
    level: usize,
    index: usize,
    /// Position on the level-0 grid, in frames.
    t: f64,
    positive: bool,
    cls_omit: bool,
    /// Target channels set to 1 (one for single-label, two for verb-noun).
    active_channels: Vec<usize>,
    r_start: f64,
    r_end: f64,
    p_start: f64,
    p_end: f64,
    assigned: Option<TemporalInterval>,
}

#[derive(Serialize)]
struct VideoAssignDump {
    id: String,
    num_locations: usize,
    num_positive: usize,
    locations: Vec<LocationDump>,
}

fn run_assign(annotations: &Path, config: Option<&Path>, out: &Path) -> Result<(), String> {
    let app = AppConfig::load(config)?;
    let ann = read_annotations(annotations).map_err(|e| e.to_string())?;
    let mut videos = Vec::with_capacity(ann.videos.len());
    for video in &ann.videos {
        let pc = PyramidConfig { frame_rate: video.frame_rate, ..app.pyramid }
            .with_base_length(video.num_frames());
        pc.validate().map_err(|e| format!("video '{}': {e}", video.id))?;
        let locations = pyramid_locations(&pc);
        let targets = LocationTargets::assign(
            &pc,
            &locations,
            &ann.ground_truth_frames(video),
            &ann.vocab,
            app.assign.center_alpha,
        )
        .map_err(|e| format!("video '{}': {e}", video.id))?;
        let w = targets.class_width;
        videos.push(VideoAssignDump {
            id: video.id.clone(),
            num_locations: targets.num_locations,
            num_positive: targets.num_positive(),
            locations: locations
                .iter()
                .enumerate()
                .map(|(i, loc)| LocationDump {
                    level: loc.level,
                    index: loc.index,
                    t: loc.t,
                    positive: targets.is_positive[i],
                    cls_omit: targets.cls_omit[i],
                    active_channels: (0..w)
                        .filter(|c| targets.class_targets[i * w + c] == 1.0)
                        .collect(),
                    r_start: targets.r_start[i],
                    r_end: targets.r_end[i],
                    p_start: targets.p_start[i],
                    p_end: targets.p_end[i],
                    assigned: targets.assigned[i],
                })
                .collect(),
        });
    }
    let positives: usize = videos.iter().map(|v| v.num_positive).sum();
    let mut json = serde_json::to_string_pretty(&videos).map_err(|e| e.to_string())?;
    json.push('\n');
    formats::write_atomic(out, json.as_bytes()).map_err(|e| e.to_string())?;
    println!(
        "wrote targets for {} videos ({} positive locations) to {}",
        videos.len(),
        positives,
        out.display()
    );
    Ok(())
}

fn prepare_sequences(app: &AppConfig, ds: &Dataset) -> Result<Vec<TrainSequence>, String> {
    ds.sequences
        .iter()
        .map(|seq| {
            TrainSequence::prepare(
                &video_pyramid(app, seq),
                seq.features.clone(),
                &seq.segments,
                &ds.annotations.vocab,
                app.assign.center_alpha,
            )
            .map_err(|e| format!("sequence '{}': {e}", seq.id))
        })
        .collect()
}

fn run_train(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    trace_path: Option<&Path>,
    plot_path: Option<&Path>,
) -> Result<(), String> {
    let app = AppConfig::load(config)?;
    let ds = load_dataset(data)?;
    if ds.sequences.is_empty() {
        return Err(format!("{}: dataset has no sequences", data.display()));
    }
    let seqs = prepare_sequences(&app, &ds)?;
    let head_cfg = HeadConfig {
        feature_dim: ds.sequences[0].features.dim(),
        hidden_width: app.heads.hidden_width,
        vocab: ds.annotations.vocab,
        confidence_scaling: app.heads.confidence_scaling,
    };
    let mut heads = Heads::init(head_cfg, app.heads.init_seed);
    let steps = app.train.steps;
    let trace = train(&mut heads, &seqs, &app.loss, &app.train, |step, loss| {
        if step % 50 == 0 || step + 1 == steps {
            eprintln!("step {step}: total loss {:.6}", loss.total(&app.loss));
        }
    })
    .map_err(|e| e.to_string())?;
    write_checkpoint(out, &heads).map_err(|e| e.to_string())?;
    if let Some(p) = trace_path {
        formats::write_loss_trace_csv(p, &trace, &app.loss).map_err(|e| e.to_string())?;
    }
    if let Some(p) = plot_path {
        let provenance = format!(
            "tadet train data={} steps={} lr={} momentum={}",
            data.display(),
            app.train.steps,
            app.train.lr,
            app.train.momentum
        );
        formats::write_loss_curve_svg(p, &trace, &app.loss, &provenance)
            .map_err(|e| e.to_string())?;
    }
    let first = trace.first().map(|b| b.total(&app.loss)).unwrap_or(0.0);
    let last = trace.last().map(|b| b.total(&app.loss)).unwrap_or(0.0);
    println!(
        "trained {} steps on {} sequences; total loss {first:.6} -> {last:.6}; checkpoint {}",
        trace.len(),
        seqs.len(),
        out.display()
    );
    Ok(())
}

fn apply_infer_overrides(
    app: &mut AppConfig,
    fusion: Option<&str>,
    sigma: Option<f64>,
    topv: Option<usize>,
    topn: Option<usize>,
) -> Result<(), String> {
    if let Some(name) = fusion {
        app.decode.fusion = FusionMode::from_str(name)?;
    }
    if let Some(s) = sigma {
        app.loss.sigma = s;
    }
    if let Some(v) = topv {
        app.decode.top_verbs = v;
    }
    if let Some(n) = topn {
        app.decode.top_nouns = n;
    }
    app.validate()
}

/// Run the trained model over a dataset directory and decode detections
/// (per-video work in parallel, output order fixed).
fn infer_detections(data: &Path, ckpt: &Path, app: &AppConfig) -> Result<DetectionsFile, String> {
    let heads = read_checkpoint(ckpt).map_err(|e| e.to_string())?;
    let ds = load_dataset(data)?;
    if heads.cfg.vocab != ds.annotations.vocab {
        return Err(format!(
            "checkpoint vocabulary {:?} does not match dataset vocabulary {:?}",
            heads.cfg.vocab, ds.annotations.vocab
        ));
    }
    let videos: Vec<(String, Vec<Proposal>)> = ds
        .sequences
        .par_iter()
        .map(|seq| {
            let pc = video_pyramid(app, seq);
            pc.validate().map_err(|e| format!("sequence '{}': {e}", seq.id))?;
            seq.features
                .check_against(&pc)
                .map_err(|e| format!("sequence '{}': {e}", seq.id))?;
            if seq.features.dim() != heads.cfg.feature_dim {
                return Err(format!(
                    "sequence '{}': feature dim {} does not match checkpoint dim {}",
                    seq.id,
                    seq.features.dim(),
                    heads.cfg.feature_dim
                ));
            }
            let (outputs, _) = heads.forward(&pc, &seq.features, app.loss.sigma);
            let proposals = decode_sequence(&pc, &outputs, &heads.cfg.vocab, &app.decode);
            Ok((seq.id.clone(), proposals))
        })
        .collect::<Result<_, String>>()?;
    Ok(DetectionsFile::from_proposals(videos))
}

fn resolve_thresholds(flag: Option<Vec<f64>>) -> Vec<f64> {
    flag.unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec())
}

fn print_report_summary(report: &EvalReport) {
    for (t, m) in report.thresholds.iter().zip(&report.map_per_threshold) {
        println!("mAP@{t}: {m:.4}");
    }
    println!("average mAP: {:.4}", report.average_map);
}

fn run_eval(
    detections: &Path,
    annotations: &Path,
    thresholds: Option<Vec<f64>>,
    out: &Path,
    curves: bool,
    length_groups: bool,
) -> Result<(), String> {
    let ann = read_annotations(annotations).map_err(|e| e.to_string())?;
    let dets = read_detections(detections).map_err(|e| e.to_string())?;
    let videos = formats::pair_for_eval(&ann, &dets)?;
    let thresholds = resolve_thresholds(thresholds);
    let opts = EvalOptions {
        boundary_curve: curves,
        length_stratified: length_groups,
        ..EvalOptions::default()
    };
    let report = evaluate(&videos, &thresholds, &opts)?;
    formats::write_eval_report_json(out, &report).map_err(|e| e.to_string())?;
    if curves {
        let svg_path = out.with_extension("curves.svg");
        let curves_data = report
            .boundary_errors
            .as_ref()
            .ok_or("boundary curves requested but not computed")?;
        let provenance = format!(
            "tadet eval detections={} annotations={}",
            detections.display(),
            annotations.display()
        );
        formats::write_boundary_curves_svg(&svg_path, curves_data, &provenance)
            .map_err(|e| e.to_string())?;
    }
    print_report_summary(&report);
    println!("report written to {}", out.display());
    Ok(())
}

/// One grid point of a sweep: the override to apply and its CSV cell value.
enum SweepPoint {
    Sigma(f64),
    Fusion(FusionMode),
    TopVn(usize, usize),
}

impl SweepPoint {
    fn apply(&self, app: &mut AppConfig) {
        match *self {
            SweepPoint::Sigma(s) => app.loss.sigma = s,
            SweepPoint::Fusion(m) => app.decode.fusion = m,
            SweepPoint::TopVn(v, n) => {
                app.decode.top_verbs = v;
                app.decode.top_nouns = n;
            }
        }
    }

    fn value_cell(&self) -> String {
        match *self {
            SweepPoint::Sigma(s) => s.to_string(),
            SweepPoint::Fusion(m) => m.name().to_string(),
            SweepPoint::TopVn(v, n) => format!("{v}:{n}"),
        }
    }
}

fn parse_sweep_grid(param: SweepParam, values: Option<&str>) -> Result<Vec<SweepPoint>, String> {
    match param {
        SweepParam::Sigma => {
            let raw = values.unwrap_or("1.0,2.0,4.0,5.5,8.0,16.0");
            raw.split(',')
                .map(|s| {
                    let v: f64 = s
                        .trim()
                        .parse()
                        .map_err(|_| format!("bad sigma value '{s}' in sweep grid"))?;
                    if !(v.is_finite() && v > 0.0) {
                        return Err(format!("sigma must be positive, got {v}"));
                    }
                    Ok(SweepPoint::Sigma(v))
                })
                .collect()
        }
        SweepParam::Fusion => match values {
            None => Ok(FusionMode::ALL.iter().map(|m| SweepPoint::Fusion(*m)).collect()),
            Some(raw) => raw
                .split(',')
                .map(|s| FusionMode::from_str(s.trim()).map(SweepPoint::Fusion))
                .collect(),
        },
        SweepParam::Topvn => {
            let raw = values.unwrap_or("1:1,5:15,10:30,20:60");
            raw.split(',')
                .map(|s| {
                    let (v, n) = s
                        .trim()
                        .split_once(':')
                        .ok_or_else(|| format!("bad topvn value '{s}' (expected v:n)"))?;
                    let v: usize =
                        v.parse().map_err(|_| format!("bad verb count '{v}' in '{s}'"))?;
                    let n: usize =
                        n.parse().map_err(|_| format!("bad noun count '{n}' in '{s}'"))?;
                    if v == 0 || n == 0 {
                        return Err(format!("topvn counts must be positive in '{s}'"));
                    }
                    Ok(SweepPoint::TopVn(v, n))
                })
                .collect()
        }
    }
}

fn run_sweep(
    param: SweepParam,
    values: Option<&str>,
    data: &Path,
    ckpt: &Path,
    config: Option<&Path>,
    thresholds: Option<Vec<f64>>,
    out: &Path,
) -> Result<(), String> {
    let base = AppConfig::load(config)?;
    let grid = parse_sweep_grid(param, values)?;
    let thresholds = resolve_thresholds(thresholds);
    let ann = read_annotations(&data.join("annotations.json")).map_err(|e| e.to_string())?;
    let param_name = match param {
        SweepParam::Sigma => "sigma",
        SweepParam::Fusion => "fusion",
        SweepParam::Topvn => "topvn",
    };

    let mut csv = format!("{param_name}");
    for t in &thresholds {
        csv.push_str(&format!(",map@{t}"));
    }
    csv.push_str(",avg_map\n");

    for point in &grid {
        let mut app = base.clone();
        point.apply(&mut app);
        app.validate()?;
        let dets = infer_detections(data, ckpt, &app)?;
        let videos = formats::pair_for_eval(&ann, &dets)?;
        let opts =
            EvalOptions { boundary_curve: false, length_stratified: false, ..Default::default() };
        let report = evaluate(&videos, &thresholds, &opts)?;
        csv.push_str(&point.value_cell());
        for m in &report.map_per_threshold {
            csv.push_str(&format!(",{m}"));
        }
        csv.push_str(&format!(",{}\n", report.average_map));
        println!("{param_name}={}: average mAP {:.4}", point.value_cell(), report.average_map);
    }
    formats::write_atomic(out, csv.as_bytes()).map_err(|e| e.to_string())?;
    println!("sweep table written to {}", out.display());
    Ok(())
}

/// Build a small random training instance for gradient checking: 1-2 pyramid
/// levels, short sequences, few classes.
fn gradcheck_instance(
    app: &AppConfig,
    seed: u64,
    index: u64,
) -> Result<(TrainSequence, tadet::assign::ClassVocab), String> {
    use tadet::assign::{ClassVocab, GroundTruthSegment};
    use tadet::features::{FeatureMap, FeaturePyramid};

    let mut rng = Stream::new(seed, 0x6764_6b00 + index);
    let num_levels = 1 + rng.below(2) as usize;
    let base_length = 16 + rng.below(17) as usize; // 16..=32
    let dim = 3 + rng.below(4) as usize;
    let num_classes = 1 + rng.below(4) as usize;
    let mut level0 = FeatureMap::zeros(dim, base_length);
    for v in level0.data.iter_mut() {
        *v = rng.normal();
    }
    let features = FeaturePyramid::from_level0(level0, num_levels);
    let num_segs = 1 + rng.below(2) as usize;
    let mut segments = Vec::with_capacity(num_segs);
    for _ in 0..num_segs {
        let len = rng.uniform(2.0, base_length as f64 / 2.0);
        let start = rng.uniform(0.0, base_length as f64 - len);
        segments.push(GroundTruthSegment {
            interval: TemporalInterval::new(start, start + len),
            label: tadet::assign::ActionLabel::Single(rng.below(num_classes) as u32),
        });
    }
    let vocab = ClassVocab::Single { num_classes };
    let base = PyramidConfig { num_levels, ..app.pyramid };
    let seq =
        TrainSequence::prepare(&base, features, &segments, &vocab, app.assign.center_alpha)?;
    Ok((seq, vocab))
}

fn run_gradcheck(seed: u64, config: Option<&Path>, instances: usize) -> Result<(), String> {
    let app = AppConfig::load(config)?;
    if instances == 0 {
        return Err("need at least one gradcheck instance".into());
    }
    let gcfg = GradCheckConfig { seed, ..GradCheckConfig::default() };
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let mut failures = 0usize;
    for i in 0..instances {
        let (seq, vocab) = gradcheck_instance(&app, seed, i as u64)?;
        let head_cfg = HeadConfig {
            feature_dim: seq.features.dim(),
            hidden_width: 4 + (i % 3) * 2,
            vocab,
            confidence_scaling: app.heads.confidence_scaling,
        };
        let mut heads = Heads::init(head_cfg, seed.wrapping_add(i as u64));
        let report = gradient_check(&mut heads, &seq, &app.loss, &gcfg)?;
        checked += report.checked;
        worst = worst.max(report.max_rel_err);
        if !report.pass {
            failures += 1;
            eprintln!(
                "instance {i}: FAIL (max relative error {:.3e} at parameter {})",
                report.max_rel_err, report.worst_param
            );
        }
    }
    println!(
        "checked {checked} parameters across {instances} instances; worst relative error {worst:.3e}"
    );
    if failures > 0 {
        return Err(format!("{failures} of {instances} instances exceeded tolerance"));
    }
    Ok(())
}
