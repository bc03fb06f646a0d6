//! `valvenet` command-line entry point.
//!
//! Every subcommand reads an optional JSON or TOML config file
//! (`--config`), applies flag overrides on top, and writes the effective
//! settings to `run_config.json` in its output directory.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use valvenet::checkpoint::load_checkpoint;
use valvenet::dataset::resolve_split;
use valvenet::metrics::{
    clinical_summary, pixel_errors_lenient, render_comparison, summarize_errors, ErrorTable,
    CLINICAL_CSV_HEADER,
};
use valvenet::predict::{predict_sequence, PRESENCE_THRESHOLD_PX};
use valvenet::synth::{generate_dataset, DatasetOptions};
use valvenet::tracker::{lk_track, TrackConfig};
use valvenet::train::{train, LrSchedule, ModelPreset, TrainConfig, FINAL_CHECKPOINT};
use valvenet::{load_sequence, save_sequence, Error, LandmarkSet, LandmarkSource, SequenceRecord};

const RUN_CONFIG: &str = "run_config.json";

#[derive(Parser)]
#[command(
    name = "valvenet",
    version,
    about = "Cardiac valve landmark regression toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with a train/val manifest.
    Synth(SynthArgs),
    /// Train a landmark regressor.
    Train(TrainArgs),
    /// Per-landmark pixel error tables.
    Eval(EvalArgs),
    /// Run a trained model on every frame of a sequence.
    Predict(PredictArgs),
    /// Long-axis strain and MAPSE/TAPSE as CSV.
    Metrics(MetricsArgs),
    /// Track landmarks through a sequence with pyramidal Lucas-Kanade.
    Track(TrackArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Config file (JSON or TOML); its `synth` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of subjects; three views each [default: 40].
    #[arg(long)]
    subjects: Option<usize>,
    /// Dataset seed [default: 7].
    #[arg(long)]
    seed: Option<u64>,
    /// Share of subjects held out for validation [default: 0.2].
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Output directory.
    #[arg(long, env = "VALVENET_DATA")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file (JSON or TOML); its `train` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory with a manifest, or one sequence file [default: data].
    #[arg(long, env = "VALVENET_DATA")]
    data: Option<PathBuf>,
    /// Validation data; defaults to the val split of --data.
    #[arg(long)]
    val_data: Option<PathBuf>,
    /// Run directory for logs and checkpoints [default: runs/desk].
    #[arg(long, env = "VALVENET_OUT")]
    out: Option<PathBuf>,
    /// [default: 2000]
    #[arg(long)]
    iterations: Option<u64>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// [default: 1e-4]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// [default: constant]
    #[arg(long, value_enum)]
    lr_schedule: Option<ScheduleArg>,
    /// [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: desk]
    #[arg(long, value_enum)]
    model: Option<PresetArg>,
    /// Side of the square network input [default: 64].
    #[arg(long)]
    input_size: Option<usize>,
    /// Disable error-proportional sampling.
    #[arg(long)]
    no_curriculum: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Full,
    Desk,
    Tiny,
}

#[derive(Args)]
struct EvalArgs {
    /// Config file (JSON or TOML); `predict` and `track` sections are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reference annotations: sequence file or dataset directory.
    #[arg(long, env = "VALVENET_DATA")]
    gt: PathBuf,
    /// Annotations to score against --gt (file or directory).
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pred: Option<PathBuf>,
    /// Checkpoint to run on --gt instead of reading --pred.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Split to use when --gt/--pred are dataset directories.
    #[arg(long, default_value = "val")]
    split: String,
    /// Label the table as an inter-observer comparison.
    #[arg(long, conflicts_with = "model")]
    inter_observer: bool,
    /// Column label for the scored annotations.
    #[arg(long, default_value = "network")]
    method: String,
    /// Add a tracker column, initialised from the reference at frame 0.
    #[arg(long)]
    with_tracker: bool,
    /// Prediction presence threshold in network pixels [default: 5].
    #[arg(long)]
    presence_threshold: Option<f64>,
    /// Directory for CSV tables and run_config.json.
    #[arg(long, env = "VALVENET_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Config file (JSON or TOML); its `predict` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint file.
    #[arg(long)]
    model: PathBuf,
    /// Sequence file.
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long, env = "VALVENET_OUT")]
    out: PathBuf,
    /// [default: 5]
    #[arg(long)]
    presence_threshold: Option<f64>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Sequence file (ground truth, predicted or tracked).
    #[arg(long)]
    input: PathBuf,
    /// Also report MAPSE/TAPSE (4CH sequences only).
    #[arg(long)]
    mapse: bool,
    /// Output directory; CSV goes to stdout when omitted.
    #[arg(long, env = "VALVENET_OUT")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum InitSource {
    /// Landmarks stored in the input record at frame 0.
    Gt,
    /// Network prediction on frame 0 (needs --model).
    Predicted,
}

#[derive(Args)]
struct TrackArgs {
    /// Config file (JSON or TOML); its `track` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sequence file.
    #[arg(long)]
    input: PathBuf,
    /// Where the frame-0 landmarks come from.
    #[arg(long, value_enum)]
    init: InitSource,
    /// Checkpoint for --init predicted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "VALVENET_OUT")]
    out: PathBuf,
    /// Window side in pixels (odd) [default: 15].
    #[arg(long)]
    window: Option<usize>,
    /// Pyramid levels [default: 3].
    #[arg(long)]
    levels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PredictSection {
    presence_threshold: f64,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection {
            presence_threshold: PRESENCE_THRESHOLD_PX,
        }
    }
}

/// One config file, one section per subcommand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    synth: DatasetOptions,
    train: TrainConfig,
    predict: PredictSection,
    track: TrackConfig,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(format!("config error: {m}")),
            Error::Spec(m) => Failure::Usage(format!("invalid model spec: {m}")),
            e => Failure::Runtime(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn load_run_config(path: Option<&Path>) -> std::result::Result<RunConfig, Failure> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
}

fn write_provenance<T: Serialize>(dir: &Path, command: &str, section: &T) -> CmdResult {
    #[derive(Serialize)]
    struct Provenance<'a, T> {
        command: &'a str,
        version: &'a str,
        config: &'a T,
    }
    fs::create_dir_all(dir)?;
    let doc = Provenance {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: section,
    };
    fs::write(
        dir.join(RUN_CONFIG),
        serde_json::to_string_pretty(&doc)? + "\n",
    )?;
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "sequence".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let mut opts = load_run_config(args.config.as_deref())?.synth;
    if let Some(n) = args.subjects {
        opts.n_subjects = n;
    }
    if let Some(s) = args.seed {
        opts.seed = s;
    }
    if let Some(f) = args.val_fraction {
        opts.val_fraction = f;
    }
    let manifest = generate_dataset(&args.out, &opts)?;
    write_provenance(&args.out, "synth", &opts)?;
    println!(
        "wrote {} sequences ({} train / {} val subjects) to {}",
        manifest.sequences.len(),
        manifest.split.train.len(),
        manifest.split.val.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let mut cfg = load_run_config(args.config.as_deref())?.train;
    if let Some(d) = args.data {
        cfg.train_data = d;
    }
    if let Some(d) = args.val_data {
        cfg.val_data = Some(d);
    }
    if let Some(o) = args.out {
        cfg.out_dir = o;
    }
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.lr_schedule {
        cfg.lr_schedule = match v {
            ScheduleArg::Constant => LrSchedule::Constant,
            ScheduleArg::Cosine => LrSchedule::Cosine,
        };
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.model {
        cfg.model = match v {
            PresetArg::Full => ModelPreset::Full,
            PresetArg::Desk => ModelPreset::Desk,
            PresetArg::Tiny => ModelPreset::Tiny,
        };
    }
    if let Some(v) = args.input_size {
        cfg.input_size = v;
    }
    if args.no_curriculum {
        cfg.curriculum = false;
    }
    cfg.validate()?;
    write_provenance(&cfg.out_dir, "train", &cfg)?;
    let outcome = train(&cfg)?;
    if let Some(last) = outcome.epochs.last() {
        println!(
            "final validation mean error {:.3} px (iteration {})",
            last.mean_error(),
            last.iteration
        );
    }
    println!(
        "checkpoint {}",
        cfg.out_dir.join(FINAL_CHECKPOINT).display()
    );
    Ok(())
}

/// Pairs sequence files of two annotation sources. Directories are matched
/// by file name within `split`.
fn paired_files(
    gt: &Path,
    pred: &Path,
    split: &str,
) -> std::result::Result<Vec<(PathBuf, PathBuf)>, Failure> {
    match (gt.is_dir(), pred.is_dir()) {
        (false, false) => Ok(vec![(gt.to_path_buf(), pred.to_path_buf())]),
        (true, true) => {
            let files = resolve_split(gt, split)?;
            Ok(files
                .into_iter()
                .map(|g| {
                    let p = pred.join(g.file_name().unwrap_or_default());
                    (g, p)
                })
                .collect())
        }
        _ => Err(Failure::Usage(
            "--gt and --pred must both be files or both be directories".into(),
        )),
    }
}

fn check_frames(a: &SequenceRecord, b: &SequenceRecord) -> std::result::Result<(), Failure> {
    if a.len() != b.len() {
        return Err(Failure::Runtime(Error::Shape(format!(
            "{}: {} frames vs {} frames",
            a.subject_id,
            a.len(),
            b.len()
        ))));
    }
    Ok(())
}

fn table_from(
    method: &str,
    pred: &[LandmarkSet],
    gt: &[LandmarkSet],
) -> std::result::Result<ErrorTable, Failure> {
    let (samples, excluded) = pixel_errors_lenient(pred, gt)?;
    let mut table = summarize_errors(&samples, method);
    table.excluded = excluded;
    Ok(table)
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let run = load_run_config(args.config.as_deref())?;
    let mut predict = run.predict;
    if let Some(t) = args.presence_threshold {
        predict.presence_threshold = t;
    }
    let track_cfg = run.track;
    track_cfg.validate()?;
    let method = if args.inter_observer {
        "inter-observer".to_string()
    } else {
        args.method.clone()
    };

    let mut gt_all = Vec::new();
    let mut pred_all = Vec::new();
    let mut tracked_all = Vec::new();
    let add_tracker = |gt: &SequenceRecord, tracked_all: &mut Vec<LandmarkSet>| -> CmdResult {
        if args.with_tracker {
            tracked_all.extend(lk_track(&gt.frames, &gt.landmarks[0], &track_cfg)?);
        }
        Ok(())
    };

    if let Some(model_path) = &args.model {
        let (model, _, _) = load_checkpoint(model_path)?;
        let files = resolve_split(&args.gt, &args.split)?;
        for f in files {
            let gt = load_sequence(&f)?;
            let pred = predict_sequence(&model, &gt, predict.presence_threshold)?;
            add_tracker(&gt, &mut tracked_all)?;
            pred_all.extend(pred.landmarks);
            gt_all.extend(gt.landmarks);
        }
    } else {
        let pred_path = args
            .pred
            .as_deref()
            .expect("clap requires --pred without --model");
        for (g, p) in paired_files(&args.gt, pred_path, &args.split)? {
            let gt = load_sequence(&g)?;
            let pred = load_sequence(&p)?;
            check_frames(&gt, &pred)?;
            add_tracker(&gt, &mut tracked_all)?;
            pred_all.extend(pred.landmarks);
            gt_all.extend(gt.landmarks);
        }
    }

    let mut tables = vec![table_from(&method, &pred_all, &gt_all)?];
    if args.with_tracker {
        tables.push(table_from("tracker", &tracked_all, &gt_all)?);
    }
    print!("{}", render_comparison(&tables));
    for t in &tables {
        println!(
            "{}: mean of landmark means {:.3} px",
            t.method,
            t.mean_of_means()
        );
    }
    if let Some(out) = &args.out {
        #[derive(Serialize)]
        struct EvalProvenance<'a> {
            gt: &'a Path,
            pred: Option<&'a Path>,
            model: Option<&'a Path>,
            split: &'a str,
            method: &'a str,
            with_tracker: bool,
            predict: &'a PredictSection,
            track: &'a TrackConfig,
        }
        let prov = EvalProvenance {
            gt: &args.gt,
            pred: args.pred.as_deref(),
            model: args.model.as_deref(),
            split: &args.split,
            method: &method,
            with_tracker: args.with_tracker,
            predict: &predict,
            track: &track_cfg,
        };
        write_provenance(out, "eval", &prov)?;
        let mut csv = String::new();
        for (i, t) in tables.iter().enumerate() {
            let body = t.to_csv();
            csv.push_str(if i == 0 {
                &body
            } else {
                body.split_once('\n').map_or("", |(_, rest)| rest)
            });
        }
        fs::write(out.join("errors.csv"), csv)?;
        fs::write(out.join("errors.txt"), render_comparison(&tables))?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> CmdResult {
    let mut section = load_run_config(args.config.as_deref())?.predict;
    if let Some(t) = args.presence_threshold {
        section.presence_threshold = t;
    }
    if section.presence_threshold.is_nan() || section.presence_threshold < 0.0 {
        return Err(Failure::Usage("presence_threshold must be >= 0".into()));
    }
    let (model, _, _) = load_checkpoint(&args.model)?;
    let seq = load_sequence(&args.input)?;
    let pred = predict_sequence(&model, &seq, section.presence_threshold)?;
    write_provenance(&args.out, "predict", &section)?;
    let path = args
        .out
        .join(format!("{}_pred.json", file_stem(&args.input)));
    save_sequence(&pred, &path)?;
    let present: Vec<String> = pred.landmarks[0]
        .present_ids()
        .map(|id| id.to_string())
        .collect();
    println!(
        "wrote {} (frame 0 present: {})",
        path.display(),
        present.join(",")
    );
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> CmdResult {
    let seq = load_sequence(&args.input)?;
    let summary = clinical_summary(&seq, &seq.landmarks, args.mapse)?;
    let csv = format!("{CLINICAL_CSV_HEADER}\n{}", summary.csv_rows());
    let mut report = String::new();
    for (valve, value, frame) in &summary.peaks {
        let _ = writeln!(
            report,
            "peak {} strain {value:.4} at frame {frame}",
            valve.name()
        );
    }
    if let Some((m, t)) = summary.mapse_tapse_mm {
        let _ = writeln!(report, "MAPSE {m:.2} mm, TAPSE {t:.2} mm");
    }
    match &args.out {
        Some(out) => {
            #[derive(Serialize)]
            struct MetricsProvenance<'a> {
                input: &'a Path,
                mapse: bool,
            }
            write_provenance(
                out,
                "metrics",
                &MetricsProvenance {
                    input: &args.input,
                    mapse: args.mapse,
                },
            )?;
            let stem = file_stem(&args.input);
            fs::write(out.join(format!("{stem}_clinical.csv")), &csv)?;
            fs::write(
                out.join(format!("{stem}_summary.json")),
                serde_json::to_string_pretty(&summary)? + "\n",
            )?;
            print!("{report}");
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_track(args: TrackArgs) -> CmdResult {
    let mut cfg = load_run_config(args.config.as_deref())?.track;
    if let Some(w) = args.window {
        cfg.window = w;
    }
    if let Some(l) = args.levels {
        cfg.pyramid_levels = l;
    }
    cfg.validate()?;
    let seq = load_sequence(&args.input)?;
    let init = match args.init {
        InitSource::Gt => seq.landmarks[0],
        InitSource::Predicted => {
            let path = args
                .model
                .as_deref()
                .ok_or_else(|| Failure::Usage("--init predicted requires --model".into()))?;
            let (model, _, _) = load_checkpoint(path)?;
            let threshold = load_run_config(args.config.as_deref())?
                .predict
                .presence_threshold;
            valvenet::predict::predict_frame(&model, &seq.frames[0], threshold)?
        }
    };
    let tracked = lk_track(&seq.frames, &init, &cfg)?;

    #[derive(Serialize)]
    struct TrackProvenance<'a> {
        input: &'a Path,
        init: InitSource,
        model: Option<&'a Path>,
        track: &'a TrackConfig,
    }
    write_provenance(
        &args.out,
        "track",
        &TrackProvenance {
            input: &args.input,
            init: args.init,
            model: args.model.as_deref(),
            track: &cfg,
        },
    )?;
    let out_seq = seq.with_landmarks(tracked.clone(), LandmarkSource::Tracked);
    let path = args
        .out
        .join(format!("{}_tracked.json", file_stem(&args.input)));
    save_sequence(&out_seq, &path)?;

    let table = table_from("tracker", &tracked, &seq.landmarks)?;
    fs::write(args.out.join("tracking_errors.csv"), table.to_csv())?;
    print!("{}", table.render_text());
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Track(a) => cmd_track(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
