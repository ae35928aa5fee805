//! `adafsnet` command-line tool.

mod settings;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adafsnet::data::{data_root, load_pair};
use adafsnet::gradcheck::op_suite;
use adafsnet::model::{checkpoint_precision, decode_checkpoint, encode_checkpoint};
use adafsnet::plan::select_pk;
use adafsnet::train::{
    ReportFormat, ReportRow, RunReport, default_variants, emit_report, evaluate, parse_report_csv, run_ablation,
    run_experiment,
};
use adafsnet::{AdaFsNet, Error, Real, TimeSeriesDataset};
use clap::{Args, Parser, Subcommand};

use settings::{Precision, Settings, keys_help, parse_pair};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) => CliError::Usage(msg),
            Error::Parse { .. } | Error::Dataset(_) | Error::Io { .. } | Error::Checkpoint(_) | Error::Shape { .. } => {
                CliError::Data(msg)
            }
            Error::Verification(_) | Error::Divergence { .. } => CliError::Numeric(msg),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "adafsnet", version, about = "Train and evaluate AdaFSNet time-series classifiers")]
#[command(after_help = keys_help())]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Dataset directory [env: ADAFSNET_DATA_ROOT, default: data/ucr]
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Dataset name; repeat or comma-separate for several
    #[arg(long, global = true, value_delimiter = ',')]
    dataset: Vec<String>,
    /// key=value config file (`#` starts a comment)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override one config key (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_pair)]
    overrides: Vec<(String, String)>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the kernel plan and coverage certificate for a series length
    Plan {
        #[arg(long)]
        length: usize,
    },
    /// Train on each dataset's TRAIN split; writes checkpoint.bin and history.csv
    Train,
    /// Score a checkpoint on each dataset's TEST split; writes report.csv
    Eval {
        /// Checkpoint to load [default: <out>/<dataset>/checkpoint.bin]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable operation
    Gradcheck,
    /// Train the ablation variants on every dataset and count wins
    Ablate,
    /// Merge report.csv files into one table with an MPCE footer
    Report {
        /// Report files [default: <out>/*/report.csv]
        inputs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprint!("{e}");
            eprintln!("ERROR 1: {first}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR {}: {}", e.code(), e.message().replace('\n', " "));
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let c = &cli.common;
    let settings = Settings::resolve(c.config.as_deref(), c.seed, &c.overrides)?;
    match &cli.command {
        Command::Plan { length } => plan(*length, &settings),
        Command::Gradcheck => gradcheck(&settings),
        Command::Report { inputs } => report(c, inputs),
        Command::Train => dispatch(&settings, |s| train::<f64>(c, s), |s| train::<f32>(c, s)),
        Command::Eval { checkpoint } => eval(c, &settings, checkpoint.as_deref()),
        Command::Ablate => dispatch(&settings, |s| ablate::<f64>(c, s), |s| ablate::<f32>(c, s)),
    }
}

fn dispatch(s: &Settings, f64_run: impl FnOnce(&Settings) -> CliResult, f32_run: impl FnOnce(&Settings) -> CliResult) -> CliResult {
    match s.precision {
        Precision::F64 => f64_run(s),
        Precision::F32 => f32_run(s),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn datasets(c: &Common) -> CliResult<&[String]> {
    if c.dataset.is_empty() {
        return Err(CliError::Usage("--dataset is required".into()));
    }
    Ok(&c.dataset)
}

fn load(c: &Common, s: &Settings, name: &str) -> CliResult<(TimeSeriesDataset, TimeSeriesDataset)> {
    Ok(load_pair(&data_root(c.data_root.as_deref()), name, s.load)?)
}

/// Writes to stdout, treating a closed pipe (`| head`) as success.
fn emit(text: &str) -> CliResult {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Data(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn plan(length: usize, s: &Settings) -> CliResult {
    let plan = select_pk(length, &s.experiment.planner)?;
    let report = plan.verify();
    if !report.ok {
        emit(&format!("{plan}\n"))?;
        return Err(CliError::Numeric(format!("coverage FAILED, missing {:?}", report.missing)));
    }
    let mut text = format!("{plan}\ncoverage OK [1..{}]\n", plan.target_rf);
    for line in plan.certificate() {
        text.push_str(&line);
        text.push('\n');
    }
    emit(&text)
}

fn gradcheck(s: &Settings) -> CliResult {
    let checks = op_suite(s.gradcheck_cases, s.experiment.train.seed)?;
    let mut failed = Vec::new();
    for c in &checks {
        let ok = c.max_error < 1e-5;
        println!("{:<24} cases {:>3}  max_rel_error {:.3e}  {}", c.op, c.cases, c.max_error, if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(c.op);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn train<T: Real>(c: &Common, s: &Settings) -> CliResult {
    for name in datasets(c)? {
        let (train_set, _) = load(c, s, name)?;
        let every = s.log_every;
        let result = run_experiment::<T>(&train_set, &train_set, &s.experiment, |r| {
            if every > 0 && r.epoch % every == 0 {
                println!("{name} epoch {} loss {:.6} train_acc {:.4}", r.epoch, r.loss, r.train_accuracy);
            }
        })?;
        let dir = c.out.join(name);
        write(&dir.join("checkpoint.bin"), encode_checkpoint(&result.model))?;
        write(&dir.join("history.csv"), result.outcome.history_csv())?;
        write(&dir.join("config.txt"), s.resolved_text())?;
        let last = result.outcome.history.last();
        println!(
            "{name}: p_k {} epochs {} preserved {:?} final loss {:.6} train_acc {:.4} -> {}",
            result.model.plan.p_k,
            result.outcome.history.len(),
            result.outcome.preserved_kernels.unwrap_or_default(),
            last.map_or(f64::NAN, |r| r.loss),
            last.map_or(f64::NAN, |r| r.train_accuracy),
            dir.display()
        );
    }
    Ok(())
}

fn eval(c: &Common, s: &Settings, checkpoint: Option<&Path>) -> CliResult {
    let names = datasets(c)?;
    if checkpoint.is_some() && names.len() > 1 {
        return Err(CliError::Usage("--checkpoint needs exactly one --dataset".into()));
    }
    for name in names {
        let path = checkpoint.map_or_else(|| c.out.join(name).join("checkpoint.bin"), Path::to_path_buf);
        let bytes = fs::read(&path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let (_, test) = load(c, s, name)?;
        let accuracy = match checkpoint_precision(&bytes)?.as_str() {
            "f32" => score(&decode_checkpoint::<f32>(&bytes)?, &test)?,
            _ => score(&decode_checkpoint::<f64>(&bytes)?, &test)?,
        };
        let row = ReportRow::from_accuracy(name.clone(), accuracy, test.num_classes());
        println!(
            "{name}: accuracy {:.4} error {:.4} classes {} pce {:.4}",
            row.accuracy, row.error, row.classes, row.pce
        );
        let report = RunReport { rows: vec![row], ..Default::default() };
        write(&c.out.join(name).join("report.csv"), emit_report(&report, ReportFormat::Csv)?)?;
    }
    Ok(())
}

fn score<T: Real>(model: &AdaFsNet<T>, test: &TimeSeriesDataset) -> CliResult<f64> {
    Ok(evaluate(model, test)?.accuracy())
}

fn ablate<T: Real>(c: &Common, s: &Settings) -> CliResult {
    let pairs = datasets(c)?
        .iter()
        .map(|n| load(c, s, n))
        .collect::<CliResult<Vec<_>>>()?;
    let variants = default_variants();
    let report = run_ablation::<T>(&pairs, &s.experiment, &variants, &s.seeds, |d, v, seed, acc| {
        println!("{d} {v} seed {seed} accuracy {acc:.4}");
    })?;
    let table = report.win_table();
    print!("{table}");
    write(&c.out.join("ablation.md"), &table)?;
    for (v, r) in variants.iter().zip(&report.reports) {
        write(&c.out.join(format!("ablation_{}.csv", v.name)), emit_report(r, ReportFormat::Csv)?)?;
    }
    Ok(())
}

fn report(c: &Common, inputs: &[PathBuf]) -> CliResult {
    let files = if inputs.is_empty() {
        let mut found = Vec::new();
        if let Ok(entries) = fs::read_dir(&c.out) {
            for e in entries.flatten() {
                let p = e.path().join("report.csv");
                if p.is_file() {
                    found.push(p);
                }
            }
        }
        found.sort();
        found
    } else {
        inputs.to_vec()
    };
    if files.is_empty() {
        return Err(CliError::Data(format!("no report.csv files under {}", c.out.display())));
    }
    let mut merged = RunReport::default();
    for f in &files {
        let text = fs::read_to_string(f).map_err(|e| CliError::Data(format!("cannot read {}: {e}", f.display())))?;
        let r = parse_report_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", f.display())))?;
        merged.rows.extend(r.rows);
    }
    let md = emit_report(&merged, ReportFormat::Markdown)?;
    print!("{md}");
    write(&c.out.join("report.md"), &md)?;
    write(&c.out.join("report.csv"), emit_report(&merged, ReportFormat::Csv)?)
}
