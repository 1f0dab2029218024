//! `teachtext` command-line front-end.
//!
//! Training settings resolve in this order, later wins: built-in defaults,
//! the `--config` JSON file (keys are `TrainConfig` field names), then flags.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use teachtext::data::{synth_corpus, AmbiguityLedger, FeatureStore, Split, SynthConfig, LEDGER_FILE};
use teachtext::denoise::{apply_caption_list, detection_score, filter_captions, score_caption_ranks, FilteredCaption};
use teachtext::gradcheck::{run_gradcheck, GradCheckConfig, DEFAULT_TRIALS};
use teachtext::io::{load_model, read_json, read_jsonl, save_model, write_json};
use teachtext::metrics::{evaluate, Task};
use teachtext::trainer::{
    train_student, train_student_teachvideo, train_teacher, Aggregation, DistillVariant, TeacherPool, TrainConfig,
    TrainOutput,
};
use teachtext::{Error, ErrorKind};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "teachtext",
    version,
    about = "Multi-teacher similarity distillation for text-video retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature store.
    Synth(SynthArgs),
    /// Train a teacher on one text encoder with the ranking loss.
    TrainTeacher(TeacherArgs),
    /// Train a student against frozen teachers.
    TrainStudent(StudentArgs),
    /// Evaluate a model on one split.
    Eval(EvalArgs),
    /// Drop training captions the teachers rank poorly.
    Denoise(DenoiseArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON file with generator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    captions_per_video: Option<usize>,
    #[arg(long)]
    modalities: Option<usize>,
    #[arg(long)]
    text_encoders: Option<usize>,
    /// Comma-separated per-text-encoder noise levels.
    #[arg(long, value_delimiter = ',')]
    noise_profile: Option<Vec<f64>>,
    #[arg(long)]
    ambiguous_fraction: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Flag overrides for `TrainConfig` keys.
#[derive(Args)]
struct TrainFlags {
    /// Flat JSON file whose keys are training config field names.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    shared_dim: Option<usize>,
    /// JSON-lines list of kept training captions (from `denoise`).
    #[arg(long)]
    captions: Option<PathBuf>,
}

#[derive(Args)]
struct TeacherArgs {
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    text_encoder: String,
    /// Comma-separated video modalities; all when omitted.
    #[arg(long, value_delimiter = ',')]
    modalities: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Teachtext,
    Teachvideo,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistillFlag {
    Huber,
    L1,
    L2,
    #[value(name = "rank-k", alias = "rank_k")]
    RankK,
    Pdist,
    Relational,
    #[value(name = "embed-regress", alias = "embed_regress")]
    EmbedRegress,
    None,
}

impl From<DistillFlag> for DistillVariant {
    fn from(d: DistillFlag) -> Self {
        match d {
            DistillFlag::Huber => DistillVariant::Huber,
            DistillFlag::L1 => DistillVariant::L1,
            DistillFlag::L2 => DistillVariant::L2,
            DistillFlag::RankK => DistillVariant::RankK,
            DistillFlag::Pdist => DistillVariant::Pdist,
            DistillFlag::Relational => DistillVariant::Relational,
            DistillFlag::EmbedRegress => DistillVariant::EmbedRegress,
            DistillFlag::None => DistillVariant::None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationFlag {
    Mean,
    Min,
    Max,
}

#[derive(Args)]
struct StudentArgs {
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated teacher model files.
    #[arg(long, value_delimiter = ',')]
    teachers: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "teachtext")]
    mode: Mode,
    #[arg(long, value_enum)]
    distill: Option<DistillFlag>,
    #[arg(long, value_enum)]
    aggregation: Option<AggregationFlag>,
    #[arg(long)]
    distill_weight: Option<f64>,
    #[arg(long)]
    rank_k: Option<usize>,
    /// Student text encoder id.
    #[arg(long)]
    text_encoder: Option<String>,
    /// Comma-separated student video modalities; all when omitted.
    #[arg(long, value_delimiter = ',')]
    modalities: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "t2v")]
    task: String,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Comma-separated teacher model files.
    #[arg(long, value_delimiter = ',', required = true)]
    teachers: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    rank_threshold: usize,
    /// Output directory for the kept-caption list and summary.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Scales analytic gradients to exercise the failure path.
    #[arg(long, hide = true)]
    inject_fault: Option<f64>,
}

enum Failure {
    Error(Error),
    /// A check ran to completion and did not pass.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numerical => EXIT_NUMERICAL,
    }
}

fn log_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".log.json");
    PathBuf::from(name)
}

fn base_config(flags: &TrainFlags) -> Result<TrainConfig, Error> {
    let mut cfg = match &flags.config {
        Some(path) => read_json::<TrainConfig>(path).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = flags.$field.clone() {
                cfg.$field = v;
            }
        )*};
    }
    set!(
        seed,
        epochs,
        batch_size,
        learning_rate,
        weight_decay,
        margin,
        shared_dim
    );
    cfg.validate()?;
    Ok(cfg)
}

fn load_store(data: &Path, captions: Option<&Path>) -> Result<FeatureStore, Error> {
    let store = FeatureStore::load(data)?;
    match captions {
        Some(path) => {
            let kept: Vec<FilteredCaption> = read_jsonl(path)?;
            apply_caption_list(&store, &kept, Split::Train)
        }
        None => Ok(store),
    }
}

fn write_outputs(out: &Path, result: &TrainOutput) -> Result<(), Error> {
    save_model(out, &result.model)?;
    write_json(&log_path(out), &result.log)
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let mut cfg = match &args.config {
        Some(path) => read_json::<SynthConfig>(path)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.videos {
        cfg.n_videos = v;
    }
    if let Some(v) = args.captions_per_video {
        cfg.captions_per_video = v;
    }
    if let Some(v) = args.modalities {
        cfg.n_modalities = v;
    }
    if let Some(v) = args.text_encoders {
        cfg.n_text_encoders = v;
    }
    if let Some(v) = args.noise_profile {
        cfg.noise_profile = v;
    }
    if let Some(v) = args.ambiguous_fraction {
        cfg.ambiguous_fraction = v;
    }
    let corpus = synth_corpus(&cfg)?;
    corpus.write(&args.out)?;
    println!(
        "wrote {} videos, {} captions to {}",
        corpus.store.num_videos(),
        corpus.store.num_captions(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train_teacher(args: TeacherArgs) -> CmdResult {
    let mut cfg = base_config(&args.train)?;
    if let Some(m) = args.modalities {
        cfg.teacher_modalities = m;
    }
    let store = load_store(&args.data, args.train.captions.as_deref())?;
    let result = train_teacher(&store, &cfg, &args.text_encoder)?;
    write_outputs(&args.out, &result)?;
    println!(
        "teacher on `{}`: best epoch {}, val geomean {}",
        args.text_encoder,
        result.log.best_epoch,
        result
            .log
            .best_val_geomean
            .map_or("n/a".to_string(), |g| format!("{g:.2}"))
    );
    Ok(())
}

fn cmd_train_student(args: StudentArgs) -> CmdResult {
    let mut cfg = base_config(&args.train)?;
    if let Some(d) = args.distill {
        cfg.distill_variant = d.into();
    }
    if let Some(a) = args.aggregation {
        cfg.aggregation = match a {
            AggregationFlag::Mean => Aggregation::Mean,
            AggregationFlag::Min => Aggregation::Min,
            AggregationFlag::Max => Aggregation::Max,
        };
    }
    if let Some(v) = args.distill_weight {
        cfg.distill_weight = v;
    }
    if let Some(v) = args.rank_k {
        cfg.rank_k = v;
    }
    if let Some(v) = args.text_encoder {
        cfg.student_text_encoder_id = v;
    }
    if let Some(v) = args.modalities {
        cfg.student_modalities = v;
    }
    if args.mode == Mode::None {
        cfg.distill_variant = DistillVariant::None;
    }
    cfg.validate()?;
    if cfg.student_text_encoder_id.is_empty() {
        return Err(
            Error::Config("student text encoder not set (--text-encoder or student_text_encoder_id)".into()).into(),
        );
    }
    let store = load_store(&args.data, args.train.captions.as_deref())?;

    let result = if cfg.distill_variant == DistillVariant::None {
        if !args.teachers.is_empty() {
            eprintln!(
                "warning: distillation disabled; ignoring {} teacher(s)",
                args.teachers.len()
            );
        }
        train_student(&store, &cfg, &TeacherPool::new(vec![])?)?
    } else {
        if args.teachers.is_empty() {
            return Err(Error::Config("--teachers is required unless distillation is disabled".into()).into());
        }
        let teachers = args
            .teachers
            .iter()
            .map(|p| load_model(p))
            .collect::<Result<Vec<_>, _>>()?;
        if !cfg.teacher_text_encoder_ids.is_empty() {
            let loaded: Vec<&str> = teachers.iter().map(|t| t.text_encoder_id()).collect();
            if loaded != cfg.teacher_text_encoder_ids {
                return Err(Error::Config(format!(
                    "teacher_text_encoder_ids {:?} do not match loaded teachers {loaded:?}",
                    cfg.teacher_text_encoder_ids
                ))
                .into());
            }
        }
        match args.mode {
            Mode::Teachtext => train_student(&store, &cfg, &TeacherPool::new(teachers)?)?,
            Mode::Teachvideo => {
                if teachers.len() != 1 {
                    return Err(Error::Config("teachvideo takes exactly one teacher".into()).into());
                }
                train_student_teachvideo(&store, &cfg, &teachers[0])?
            }
            Mode::None => unreachable!("mode none disables distillation"),
        }
    };
    write_outputs(&args.out, &result)?;
    println!(
        "student on `{}` ({}): best epoch {}, val geomean {}",
        cfg.student_text_encoder_id,
        cfg.distill_variant,
        result.log.best_epoch,
        result
            .log
            .best_val_geomean
            .map_or("n/a".to_string(), |g| format!("{g:.2}"))
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let split: Split = args.split.parse()?;
    let task: Task = args.task.parse()?;
    let model = load_model(&args.model)?;
    let store = FeatureStore::load(&args.data)?;
    let report = evaluate(&model, &store, split, task)?;
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    Ok(())
}

fn cmd_denoise(args: DenoiseArgs) -> CmdResult {
    if args.rank_threshold == 0 {
        return Err(Error::Config("--rank-threshold must be >= 1".into()).into());
    }
    let store = FeatureStore::load(&args.data)?;
    let teachers = args
        .teachers
        .iter()
        .map(|p| load_model(p))
        .collect::<Result<Vec<_>, _>>()?;
    let table = score_caption_ranks(&TeacherPool::new(teachers)?, &store, Split::Train)?;
    let mut result = filter_captions(&table, args.rank_threshold)?;
    let ledger_path = args.data.join(LEDGER_FILE);
    if ledger_path.exists() {
        let ledger = AmbiguityLedger::load(&ledger_path)?;
        let score = detection_score(&table, &result, &ledger);
        println!(
            "ambiguity detection: precision {:.3}, recall {:.3} ({} of {} flagged are ledgered)",
            score.precision, score.recall, score.true_positives, score.flagged
        );
        result.summary.detection = Some(score);
    }
    result.write(&args.out)?;
    println!(
        "threshold {}: kept {}, dropped {} ({:.1}%)",
        result.summary.threshold,
        result.summary.kept,
        result.summary.dropped,
        100.0 * result.summary.drop_fraction
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> CmdResult {
    let report = run_gradcheck(&GradCheckConfig {
        seed: args.seed,
        trials: args.trials,
        fault_scale: args.inject_fault.unwrap_or(1.0),
    })?;
    for case in &report.cases {
        println!(
            "{:<32} n={:<4} max_rel_err={:.3e}",
            case.name, case.instances, case.max_rel_error
        );
    }
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    let verdict = format!(
        "max relative error {:.3e} (tolerance {:.0e})",
        report.max_rel_error, report.tolerance
    );
    if report.passed {
        println!("PASS {verdict}");
        Ok(())
    } else {
        Err(Failure::Check(format!("FAIL {verdict}")))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::TrainTeacher(a) => cmd_train_teacher(a),
        Command::TrainStudent(a) => cmd_train_student(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
