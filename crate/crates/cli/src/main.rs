mod config;

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use physio_forge::metrics::{ProtocolResult, Split};
use physio_forge::models::{Fusion, HeadConfig, Modality};
use physio_forge::protocol::{run_protocol, EvalSet, ProtocolModels};
use physio_forge::synthbench::{gen_dataset, load_dataset, split_manifest};
use physio_forge::task::Task;
use physio_forge::trainer::{sidecar, train_to, ExtraDataFilter, Strategy, TrainMode, TrainingSets};
use physio_forge::{verify, Error};

use config::{RunConfig, RESOLVED_NAME, SEED_ENV};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "physio-forge",
    version,
    about = "Joint face spoofing and forgery detection experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark.
    GenData(GenArgs),
    /// Train a joint or single-task model.
    Train(TrainArgs),
    /// Evaluate checkpoints on intra and cross test sets.
    Eval(EvalArgs),
    /// Run the gradient, wavelet and metric oracle suites.
    Verify(VerifyArgs),
    /// Print evaluation tables side by side.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Samples per (domain, class).
    #[arg(long)]
    per_class: Option<usize>,
}

fn parse<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Benchmark directory written by `gen-data`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse::<TrainMode>)]
    mode: Option<TrainMode>,
    /// Task trained in separate mode, kept whole under an extra-data filter.
    #[arg(long, value_parser = parse::<Task>)]
    task: Option<Task>,
    #[arg(long, value_parser = parse::<Strategy>)]
    sampling: Option<Strategy>,
    #[arg(long, value_parser = parse::<HeadConfig>)]
    heads: Option<HeadConfig>,
    #[arg(long)]
    n_shared: Option<usize>,
    #[arg(long, value_parser = parse::<Fusion>)]
    fusion: Option<Fusion>,
    /// Branch kept when fusion is `none`.
    #[arg(long, value_parser = parse::<Modality>)]
    modality: Option<Modality>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, value_parser = parse::<ExtraDataFilter>)]
    extra_data: Option<ExtraDataFilter>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Joint-model checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    spoof_checkpoint: Option<PathBuf>,
    #[arg(long)]
    forgery_checkpoint: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Corrupt one analytic gradient to demonstrate the check failing.
    #[arg(long)]
    inject_grad_bug: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// `results.tsv` files written by `eval`.
    #[arg(required = true)]
    tables: Vec<PathBuf>,
}

enum Failure {
    Usage(String),
    Core(Error),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Numeric(_) => EXIT_NUMERIC,
            Failure::Core(e) => match e {
                Error::Config(_) | Error::Parameter(_) => EXIT_USAGE,
                Error::NonFinite { .. } | Error::DegenerateBatch(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            },
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Numeric(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type Outcome = Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn required(value: &Option<PathBuf>, key: &str) -> Result<PathBuf, Failure> {
    value.clone().ok_or_else(|| {
        Failure::Usage(format!(
            "missing '{key}' (flag --{} or config key)",
            key.replace('_', "-")
        ))
    })
}

fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    let env = std::env::var(SEED_ENV).ok();
    let mut cfg = RunConfig::load(common.config.as_deref(), env.as_deref())?;
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn gen_data(args: GenArgs) -> Outcome {
    let mut cfg = resolve(&args.common)?;
    cfg.out = args.out.or(cfg.out);
    if let Some(n) = args.per_class {
        cfg.bench.per_class = n;
    }
    cfg.validate()?;
    let out = required(&cfg.out, "out")?;
    let bench = gen_dataset(&cfg.bench.spec(cfg.train.seed), &out)?;
    write_file(&out.join(RESOLVED_NAME), &cfg.to_text())?;
    println!("wrote {} samples; manifest {}", bench.samples, bench.manifest.display());
    Ok(())
}

fn train(args: TrainArgs) -> Outcome {
    let mut cfg = resolve(&args.common)?;
    cfg.data = args.data.or(cfg.data);
    cfg.out = args.out.or(cfg.out);
    let t = &mut cfg.train;
    let a = &mut t.model.arch;
    macro_rules! set {
        ($($flag:expr => $field:expr),* $(,)?) => { $(if let Some(v) = $flag { $field = v; })* };
    }
    set!(
        args.mode => t.mode,
        args.task => t.primary_task,
        args.sampling => t.schedule.strategy,
        args.heads => a.head,
        args.n_shared => a.n_shared,
        args.fusion => a.fusion,
        args.modality => a.modality,
        args.theta => a.theta,
        args.extra_data => t.schedule.extra_data_filter,
        args.epochs => t.epochs,
        args.lr => t.lr,
        args.momentum => t.momentum,
        args.weight_decay => t.weight_decay,
        args.batch_size => t.schedule.batch_size,
    );
    cfg.validate()?;
    let data = required(&cfg.data, "data")?;
    let out = required(&cfg.out, "out")?;
    let tasks: Vec<Task> = match cfg.train.mode {
        TrainMode::Joint => Task::ALL.to_vec(),
        TrainMode::Separate => vec![cfg.train.primary_task],
    };
    let mut records = Vec::new();
    for task in tasks {
        records.extend(load_dataset(&data.join(split_manifest(task, "train")))?.samples);
    }
    let sets = TrainingSets::from_records(records);
    let epochs = cfg.train.epochs;
    let outcome = train_to(&cfg.train, &sets, &out, |epoch, loss| {
        println!("epoch {epoch}/{epochs} mean loss {loss:.6}");
    })?;
    write_file(&sidecar(&out, "cfg"), &cfg.to_text())?;
    println!(
        "wrote {} ({} steps, {} parameters)",
        out.display(),
        outcome.log.steps.len(),
        outcome.model.param_count()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Outcome {
    let mut cfg = resolve(&args.common)?;
    cfg.data = args.data.or(cfg.data);
    cfg.out = args.out.or(cfg.out);
    cfg.checkpoint = args.checkpoint.or(cfg.checkpoint);
    cfg.spoof_checkpoint = args.spoof_checkpoint.or(cfg.spoof_checkpoint);
    cfg.forgery_checkpoint = args.forgery_checkpoint.or(cfg.forgery_checkpoint);
    let data = required(&cfg.data, "data")?;
    let out = required(&cfg.out, "out")?;
    let models = match (&cfg.checkpoint, &cfg.spoof_checkpoint, &cfg.forgery_checkpoint) {
        (Some(c), None, None) => ProtocolModels::load_joint(c)?,
        (None, s, f) if s.is_some() || f.is_some() => ProtocolModels::load_separate(s.as_deref(), f.as_deref())?,
        (None, _, _) => return Err(Failure::Usage("give --checkpoint or per-task checkpoints".into())),
        _ => {
            return Err(Failure::Usage(
                "--checkpoint cannot be combined with per-task checkpoints".into(),
            ))
        }
    };
    cfg.train.mode = models.mode();
    let mut sets = Vec::new();
    for task in models.tasks() {
        for (split, part) in [(Split::Intra, "intra_test"), (Split::Cross, "cross_test")] {
            sets.push(EvalSet {
                split,
                manifest: data.join(split_manifest(task, part)),
            });
        }
    }
    let result = run_protocol(&models, &sets)?;
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let report = result.report();
    write_file(&out.join("report.txt"), &report)?;
    write_file(&out.join("results.tsv"), &result.table())?;
    write_file(&out.join(RESOLVED_NAME), &cfg.to_text())?;
    print!("{report}");
    Ok(())
}

fn verify_cmd(args: VerifyArgs) -> Outcome {
    let reports = verify::run_all(args.inject_grad_bug)?;
    for r in &reports {
        println!("{r}");
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("failed suites: {}", failed.join(", "))))
    }
}

fn report(args: ReportArgs) -> Outcome {
    let mut results = Vec::new();
    for path in &args.tables {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        results.push(ProtocolResult::from_table(&text, path)?);
    }
    let names: Vec<String> = args
        .tables
        .iter()
        .map(|p| {
            p.parent()
                .and_then(|d| d.file_name())
                .unwrap_or(p.as_os_str())
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    print!("{}", comparison(&names, &results));
    Ok(())
}

/// Per-dataset AUC/EER rows, then pooled TPR rows, one column pair per run.
fn comparison(names: &[String], results: &[ProtocolResult]) -> String {
    use std::fmt::Write as _;
    let mut keys: Vec<(Task, Split, String)> = Vec::new();
    for r in results {
        for row in &r.rows {
            let k = (row.task, row.split, row.dataset.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    let mut out = String::new();
    let _ = write!(out, "{:<8} {:<6} {:<16}", "task", "split", "dataset");
    for n in names {
        let _ = write!(out, " {:>12} {:>12}", format!("{n}:auc"), format!("{n}:eer"));
    }
    out.push('\n');
    for (task, split, ds) in &keys {
        let _ = write!(out, "{:<8} {:<6} {:<16}", task.name(), split.name(), ds);
        for r in results {
            match r
                .rows
                .iter()
                .find(|x| x.task == *task && x.split == *split && &x.dataset == ds)
            {
                Some(m) => {
                    let _ = write!(out, " {:>12.4} {:>12.4}", m.auc, m.eer);
                }
                None => {
                    let _ = write!(out, " {:>12} {:>12}", "-", "-");
                }
            }
        }
        out.push('\n');
    }
    out.push('\n');
    let _ = write!(out, "{:<8} {:<6} {:<16}", "task", "split", "pooled");
    for n in names {
        let _ = write!(out, " {:>12} {:>12}", format!("{n}:tpr@.10"), format!("{n}:tpr@.01"));
    }
    out.push('\n');
    for task in Task::ALL {
        for split in [Split::Intra, Split::Cross] {
            if !results.iter().any(|r| r.merged(task, split).is_some()) {
                continue;
            }
            let _ = write!(out, "{:<8} {:<6} {:<16}", task.name(), split.name(), "merged");
            for r in results {
                match r.merged(task, split) {
                    Some(m) => {
                        let _ = write!(out, " {:>12.4} {:>12.4}", m.tpr_at_fpr_10, m.tpr_at_fpr_1);
                    }
                    None => {
                        let _ = write!(out, " {:>12} {:>12}", "-", "-");
                    }
                }
            }
            out.push('\n');
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
