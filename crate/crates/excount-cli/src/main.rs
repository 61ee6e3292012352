//! Command-line front end: count one image, evaluate a dataset, or generate
//! synthetic scenes with exact ground truth.

mod overlay;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use excount_core::backend::{
    load_label_map_png, save_label_map_png, write_grid_file, EmbeddingFileBackend, MockBackend,
    SegmentationBackend,
};
use excount_core::counter::{
    iterate_count_traced, BgSign, CountResult, CountingConfig, Fusion, RoundTrace,
};
use excount_core::eval::{load_annotations, run_eval, EvalReport, DEFAULT_DENSITY_EDGES};
use excount_core::grid::BoundingBox;
use excount_core::synth::{generate_scene, SceneParams};
use excount_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "excount", version, about = "Training-free exemplar-guided object counting")]
struct Cli {
    #[command(flatten)]
    backend: BackendArgs,

    #[command(flatten)]
    counting: CountingArgs,

    /// Output directory for result files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Worker threads for dataset evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    /// Seed for synthetic scene generation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Mock,
    ModelFile,
    EmbeddingFile,
}

#[derive(Args)]
struct BackendArgs {
    /// Segmentation backend.
    #[arg(long, global = true, value_enum, default_value_t = BackendKind::Mock)]
    backend: BackendKind,

    /// Sidecar JSON for the model-file backend.
    #[arg(long, global = true)]
    model_sidecar: Option<PathBuf>,

    /// Flat-binary embedding file for the embedding-file backend.
    #[arg(long, global = true)]
    embedding: Option<PathBuf>,

    /// Feature channels of the mock backend.
    #[arg(long, global = true, default_value_t = 16)]
    mock_channels: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FusionArg {
    Mean,
    Max,
}

#[derive(Args)]
struct CountingArgs {
    /// Background similarity weight.
    #[arg(long, global = true, default_value_t = 0.5)]
    lambda: f64,

    /// Background binarization threshold on the mean foreground map.
    #[arg(long, global = true, default_value_t = 0.35)]
    t1: f64,

    /// Foreground binarization threshold on the composite map.
    #[arg(long, global = true, default_value_t = 0.55)]
    t2: f64,

    /// Foreground fusion mode.
    #[arg(long, global = true, value_enum, default_value_t = FusionArg::Mean)]
    fusion: FusionArg,

    /// Sign of the background term: + or -.
    #[arg(long, global = true, default_value = "+", allow_hyphen_values = true)]
    bg_sign: String,

    /// Iteration cap for multi-round counting.
    #[arg(long, global = true, default_value_t = 3)]
    rounds: u32,

    /// Box IoU below which a discovered box counts as new.
    #[arg(long, global = true, default_value_t = 0.5)]
    novelty_iou: f64,

    /// Mask IoU at which two masks are duplicates.
    #[arg(long, global = true, default_value_t = 0.8)]
    dedup_iou: f64,

    /// Matrix point lattice stride, in embedding cells.
    #[arg(long, global = true, default_value_t = 1)]
    stride: usize,

    /// Point prompts per decode call.
    #[arg(long, global = true, default_value_t = 64)]
    batch: usize,

    /// Component toggles, e.g. --ablate background=off,residual=off.
    #[arg(long, global = true, value_delimiter = ',')]
    ablate: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Count objects in one image given exemplar boxes.
    Count {
        /// Query image (16-bit label-map PNG or RGB PNG).
        #[arg(long)]
        image: PathBuf,

        /// Exemplar box as x1,y1,x2,y2; repeatable.
        #[arg(long = "box", value_name = "X1,Y1,X2,Y2")]
        boxes: Vec<String>,

        /// JSON file with exemplar boxes: [[x1,y1,x2,y2], ...].
        #[arg(long)]
        boxes_json: Option<PathBuf>,

        /// Also write an overlay PNG.
        #[arg(long)]
        overlay: bool,

        /// Write per-round composite maps and a decision trace.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Evaluate a dataset from an annotation file.
    Eval {
        /// Annotation JSON file.
        #[arg(long)]
        annotations: PathBuf,

        /// Run one evaluation per lambda value.
        #[arg(long, value_delimiter = ',')]
        sweep_lambda: Vec<f64>,
    },
    /// Generate synthetic label-map scenes with ground-truth annotations.
    GenSynthetic {
        /// Number of scenes.
        #[arg(long, default_value_t = 20)]
        n_scenes: usize,

        /// Object count range, e.g. 1..30.
        #[arg(long, default_value = "1..30")]
        count_range: String,

        /// Object side-length range, e.g. 2..5.
        #[arg(long, default_value = "2..5")]
        size_range: String,

        /// Canvas size, e.g. 64x64.
        #[arg(long, default_value = "64x64")]
        canvas: String,
    },
}

struct CliError {
    kind: &'static str,
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { kind: "usage", code: 2, message: message.into() }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let (kind, code) = match &e {
            CoreError::Io(_) | CoreError::Image(_) => ("io", 2),
            CoreError::Parse { .. } | CoreError::Config(_) | CoreError::Json(_) => ("usage", 2),
            _ => ("pipeline", 1),
        };
        Self { kind, code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { kind: "io", code: 2, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = serde_json::json!({
                "error": { "kind": e.kind, "message": e.message }
            });
            println!("{payload}");
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = build_config(&cli.counting)?;
    std::fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Count { image, boxes, boxes_json, overlay, diagnostics } => {
            let backend = build_backend(&cli.backend)?;
            cmd_count(&cli, &cfg, backend.as_ref(), image, boxes, boxes_json.as_deref(), *overlay, *diagnostics)
        }
        Command::Eval { annotations, sweep_lambda } => {
            let backend = build_backend(&cli.backend)?;
            cmd_eval(&cli, &cfg, backend.as_ref(), annotations, sweep_lambda)
        }
        Command::GenSynthetic { n_scenes, count_range, size_range, canvas } => {
            cmd_gen_synthetic(&cli, *n_scenes, count_range, size_range, canvas)
        }
    }
}

fn build_config(args: &CountingArgs) -> Result<CountingConfig, CliError> {
    let bg_sign = match args.bg_sign.as_str() {
        "+" => BgSign::Plus,
        "-" => BgSign::Minus,
        other => return Err(CliError::usage(format!("--bg-sign must be + or -, got {other}"))),
    };
    let mut cfg = CountingConfig {
        lambda: args.lambda,
        bg_sign,
        fusion: match args.fusion {
            FusionArg::Mean => Fusion::Mean,
            FusionArg::Max => Fusion::Max,
        },
        t1: args.t1,
        t2: args.t2,
        rounds_cap: args.rounds,
        novelty_iou: args.novelty_iou,
        dedup_iou: args.dedup_iou,
        matrix_stride: args.stride,
        batch_size: args.batch,
        ..Default::default()
    };
    for item in &args.ablate {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--ablate expects key=value, got {item}")))?;
        let enabled = match value {
            "on" | "true" | "1" => true,
            "off" | "false" | "0" => false,
            other => return Err(CliError::usage(format!("--ablate value must be on or off, got {other}"))),
        };
        match key {
            "background" => cfg.enable_background = enabled,
            "multiround" => cfg.enable_multiround = enabled,
            "residual" => cfg.enable_residual = enabled,
            other => return Err(CliError::usage(format!("unknown --ablate component {other}"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_box(text: &str) -> Result<BoundingBox, CliError> {
    let parts: Vec<u32> = text
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::usage(format!("bad box '{text}': {e}")))?;
    match parts.as_slice() {
        [x1, y1, x2, y2] => Ok(BoundingBox::new(*x1, *y1, *x2, *y2)?),
        _ => Err(CliError::usage(format!("box '{text}' must have 4 coordinates"))),
    }
}

fn collect_boxes(flags: &[String], json: Option<&Path>) -> Result<Vec<BoundingBox>, CliError> {
    let mut boxes = Vec::new();
    for b in flags {
        boxes.push(parse_box(b)?);
    }
    if let Some(path) = json {
        let text = std::fs::read_to_string(path)?;
        let raw: Vec<[u32; 4]> =
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("bad boxes JSON: {e}")))?;
        for [x1, y1, x2, y2] in raw {
            boxes.push(BoundingBox::new(x1, y1, x2, y2)?);
        }
    }
    if boxes.is_empty() {
        return Err(CliError::usage("supply at least one exemplar box via --box or --boxes-json"));
    }
    Ok(boxes)
}

#[derive(Serialize)]
struct ObjectSummary {
    origin: excount_core::backend::MaskOrigin,
    round: u32,
    bbox: [u32; 4],
    area: usize,
}

#[derive(Serialize)]
struct CountOutput<'a> {
    image: String,
    count: usize,
    rounds_run: u32,
    per_round_added: &'a [usize],
    dropped_background_points: usize,
    exemplar_boxes: Vec<[u32; 4]>,
    prompt_boxes: Vec<PromptBoxOut>,
    objects: Vec<ObjectSummary>,
    config: &'a CountingConfig,
}

#[derive(Serialize)]
struct PromptBoxOut {
    bbox: [u32; 4],
    round: u32,
}

fn bbox_array(b: &BoundingBox) -> [u32; 4] {
    [b.x1, b.y1, b.x2, b.y2]
}

fn count_output<'a>(
    image_id: &str,
    result: &'a CountResult,
    exemplars: &[BoundingBox],
    cfg: &'a CountingConfig,
) -> Result<CountOutput<'a>, CliError> {
    let mut objects = Vec::with_capacity(result.records.len());
    for rec in &result.records {
        let bbox = rec.mask.min_bounding_box()?;
        objects.push(ObjectSummary {
            origin: rec.origin,
            round: rec.round,
            bbox: bbox_array(&bbox),
            area: rec.mask.count_ones(),
        });
    }
    Ok(CountOutput {
        image: image_id.to_string(),
        count: result.count,
        rounds_run: result.rounds_run,
        per_round_added: &result.per_round_added,
        dropped_background_points: result.dropped_background_points,
        exemplar_boxes: exemplars.iter().map(bbox_array).collect(),
        prompt_boxes: result
            .prompt_boxes
            .entries()
            .iter()
            .map(|(b, r)| PromptBoxOut { bbox: bbox_array(b), round: *r })
            .collect(),
        objects,
        config: cfg,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError { kind: "pipeline", code: 1, message: e.to_string() })?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct TraceOut {
    round: u32,
    matrix_points: usize,
    residual_points: usize,
    background_empty: bool,
    pre_dedup_stack: usize,
    prompt_stack: usize,
    new_boxes: Vec<[u32; 4]>,
    csim_file: String,
}

fn write_diagnostics(out: &Path, traces: &[RoundTrace]) -> Result<(), CliError> {
    let mut entries = Vec::with_capacity(traces.len());
    for t in traces {
        let csim_file = format!("csim_round_{}.bin", t.round);
        write_grid_file(&out.join(&csim_file), &t.csim)?;
        entries.push(TraceOut {
            round: t.round,
            matrix_points: t.matrix_points,
            residual_points: t.residual_points,
            background_empty: t.background_empty,
            pre_dedup_stack: t.pre_dedup_stack,
            prompt_stack: t.prompt_stack,
            new_boxes: t.new_boxes.iter().map(|b| bbox_array(b)).collect(),
            csim_file,
        });
    }
    write_json(&out.join("trace.json"), &entries)
}

#[allow(clippy::too_many_arguments)]
fn cmd_count(
    cli: &Cli,
    cfg: &CountingConfig,
    backend: &dyn SegmentationBackend,
    image_path: &Path,
    box_flags: &[String],
    boxes_json: Option<&Path>,
    overlay: bool,
    diagnostics: bool,
) -> Result<(), CliError> {
    let boxes = collect_boxes(box_flags, boxes_json)?;
    let image = load_label_map_png(image_path)?;
    let (result, traces) = iterate_count_traced(&image, &boxes, cfg, backend)?;
    let output = count_output(&image.id, &result, &boxes, cfg)?;
    let result_path = cli.out.join("result.json");
    write_json(&result_path, &output)?;
    if diagnostics {
        write_diagnostics(&cli.out, &traces)?;
    }
    if overlay {
        let rendered = overlay::render(&image, &result, &boxes);
        rendered
            .save(cli.out.join("overlay.png"))
            .map_err(|e| CliError { kind: "io", code: 2, message: e.to_string() })?;
    }
    println!(
        "{}",
        serde_json::json!({
            "count": result.count,
            "rounds_run": result.rounds_run,
            "result": result_path,
        })
    );
    Ok(())
}

fn write_csv(path: &Path, report: &EvalReport) -> Result<(), CliError> {
    let mut text = String::from("id,gt,pred,abs_err\n");
    for r in &report.per_image {
        let abs = (r.gt as i64 - r.pred as i64).unsigned_abs();
        text.push_str(&format!("{},{},{},{}\n", r.id, r.gt, r.pred, abs));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_eval(
    cli: &Cli,
    cfg: &CountingConfig,
    backend: &dyn SegmentationBackend,
    annotations: &Path,
    sweep_lambda: &[f64],
) -> Result<(), CliError> {
    let records = load_annotations(annotations)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| CliError { kind: "pipeline", code: 1, message: e.to_string() })?;
    let lambdas: Vec<f64> = if sweep_lambda.is_empty() {
        vec![cfg.lambda]
    } else {
        sweep_lambda.to_vec()
    };
    let mut written = Vec::new();
    for &lambda in &lambdas {
        let swept = CountingConfig { lambda, ..cfg.clone() };
        let report =
            pool.install(|| run_eval(&records, &swept, backend, &DEFAULT_DENSITY_EDGES))?;
        let (json_name, csv_name) = if sweep_lambda.is_empty() {
            ("report.json".to_string(), "per_image.csv".to_string())
        } else {
            (
                format!("report_lambda_{lambda:.2}.json"),
                format!("per_image_lambda_{lambda:.2}.csv"),
            )
        };
        let json_path = cli.out.join(&json_name);
        write_json(&json_path, &report)?;
        write_csv(&cli.out.join(&csv_name), &report)?;
        written.push(serde_json::json!({
            "lambda": lambda,
            "n": report.n,
            "mae": report.mae,
            "rmse": report.rmse,
            "report": json_path,
        }));
    }
    println!("{}", serde_json::json!({ "reports": written }));
    Ok(())
}

fn parse_range(text: &str, flag: &str) -> Result<(usize, usize), CliError> {
    let (lo, hi) = text
        .split_once("..")
        .ok_or_else(|| CliError::usage(format!("{flag} expects LO..HI, got {text}")))?;
    let lo = lo.trim().parse::<usize>().map_err(|e| CliError::usage(format!("{flag}: {e}")))?;
    let hi = hi.trim().parse::<usize>().map_err(|e| CliError::usage(format!("{flag}: {e}")))?;
    Ok((lo, hi))
}

#[derive(Serialize)]
struct SceneAnnotationOut {
    image: String,
    exemplar_boxes: Vec<[u32; 4]>,
    points: Vec<[u32; 2]>,
}

fn cmd_gen_synthetic(
    cli: &Cli,
    n_scenes: usize,
    count_range: &str,
    size_range: &str,
    canvas: &str,
) -> Result<(), CliError> {
    let (ch, cw) = canvas
        .split_once('x')
        .ok_or_else(|| CliError::usage(format!("--canvas expects HxW, got {canvas}")))
        .and_then(|(h, w)| {
            Ok((
                h.parse::<usize>().map_err(|e| CliError::usage(format!("--canvas: {e}")))?,
                w.parse::<usize>().map_err(|e| CliError::usage(format!("--canvas: {e}")))?,
            ))
        })?;
    let params = SceneParams {
        height: ch,
        width: cw,
        count_range: parse_range(count_range, "--count-range")?,
        size_range: parse_range(size_range, "--size-range")?,
        ..Default::default()
    };
    let mut annotations = Vec::with_capacity(n_scenes);
    for i in 0..n_scenes {
        let name = format!("scene_{i:03}");
        let scene = generate_scene(&params, cli.seed.wrapping_add(i as u64), name.clone())?;
        let file = format!("{name}.png");
        save_label_map_png(&cli.out.join(&file), &scene.image)?;
        annotations.push(SceneAnnotationOut {
            image: file,
            exemplar_boxes: scene.exemplar_boxes.iter().map(bbox_array).collect(),
            points: scene.gt_points.iter().map(|&(x, y)| [x, y]).collect(),
        });
    }
    write_json(&cli.out.join("annotations.json"), &annotations)?;
    println!(
        "{}",
        serde_json::json!({
            "scenes": n_scenes,
            "annotations": cli.out.join("annotations.json"),
        })
    );
    Ok(())
}

fn build_backend(args: &BackendArgs) -> Result<Box<dyn SegmentationBackend>, CliError> {
    match args.backend {
        BackendKind::Mock => Ok(Box::new(MockBackend::new(args.mock_channels))),
        BackendKind::EmbeddingFile => {
            let path = args
                .embedding
                .as_deref()
                .ok_or_else(|| CliError::usage("--embedding is required for the embedding-file backend"))?;
            Ok(Box::new(EmbeddingFileBackend::load(path)?))
        }
        BackendKind::ModelFile => {
            #[cfg(feature = "onnx")]
            {
                let path = args
                    .model_sidecar
                    .as_deref()
                    .ok_or_else(|| CliError::usage("--model-sidecar is required for the model-file backend"))?;
                Ok(Box::new(excount_core::backend::OnnxBackend::load(path)?))
            }
            #[cfg(not(feature = "onnx"))]
            {
                Err(CliError::usage(
                    "this build has no ONNX support; rebuild with --features onnx",
                ))
            }
        }
    }
}
