//! The `pctl` command line: generate, train, eval, verify, plot, ablate.
//!
//! Exit codes: 0 success, 1 failed verification, 2 usage or configuration
//! error, 3 runtime abort. Every command writes `<command>.manifest.json`
//! into its output directory before doing any work. The output directory
//! defaults to `$PCTL_OUT_DIR`, then `pctl-out`.

mod plot;

pub use plot::render_svg;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::FileConfig;
use crate::data::{self, generate_synthetic, DatasetFile};
use crate::encoder::{checkpoint, Domain, Split};
use crate::error::{Error, Result};
use crate::trainer::{
    default_conditions, evaluate, run_ablation, train_with, AblationCondition, Evaluation, MetricsTable, Mode,
    RunMetrics, DEFAULT_SEEDS,
};
use crate::verify::{run_checks, VerifyOptions};

pub const OUT_DIR_ENV: &str = "PCTL_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "pctl-out";

#[derive(Debug, Parser)]
#[command(name = "pctl", version, about = "Prototypical contrastive transfer learning at desk scale")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic two-domain dataset.
    Generate(GenerateArgs),
    /// Train PCTL or a baseline.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Run the numerical self-checks.
    Verify(VerifyArgs),
    /// Render loss and accuracy curves from a metrics CSV.
    Plot(PlotArgs),
    /// Compare clustering schedules over several seeds.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set loss.lambda=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Generator seed (overrides data.seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Pctl,
    TargetOnly,
    FineTune,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pctl => Mode::Pctl,
            ModeArg::TargetOnly => Mode::TargetOnly,
            ModeArg::FineTune => Mode::FineTune,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Run seed (overrides train.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides train.epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, value_enum, default_value = "target")]
    domain: DomainArg,
    /// Print the result as JSON.
    #[arg(long)]
    json: bool,
    /// Also write the result as a one-row CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Fault {
    SignFlip,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<Fault>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Metrics CSV written by `train`.
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
    seeds: Vec<u64>,
    /// One clustering schedule, e.g. `64,128,256`; repeat for more.
    #[arg(long = "schedule")]
    schedules: Vec<String>,
    /// Overrides train.epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

/// Recorded before a command does any work.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub dataset_sha256: Option<String>,
    pub out_dir: PathBuf,
    pub tool_version: String,
    /// Files written, with their SHA-256; filled in when the command ends.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::SchemaVersion { .. }
        | Error::Checkpoint(_)
        | Error::InvalidArgument(_)
        | Error::Io { .. } => 2,
        _ => 3,
    }
}

struct Session {
    dir: PathBuf,
    path: PathBuf,
    manifest: RunManifest,
}

impl Session {
    fn start(
        command: &str,
        out: Option<PathBuf>,
        config: serde_json::Value,
        seed: Option<u64>,
        dataset: Option<&Path>,
    ) -> Result<Self> {
        let dir = out
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let dataset_sha256 = dataset.map(sha256_file).transpose()?;
        let manifest = RunManifest {
            command: command.to_owned(),
            args: std::env::args().collect(),
            config,
            seed,
            dataset: dataset.map(Path::to_path_buf),
            dataset_sha256,
            out_dir: dir.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            outputs: BTreeMap::new(),
        };
        let path = dir.join(format!("{command}.manifest.json"));
        let s = Self { dir, path, manifest };
        s.write()?;
        Ok(s)
    }

    fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&self.path, text + "\n").map_err(|e| Error::io(&self.path, e))
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, path: &Path) -> Result<()> {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.manifest.outputs.insert(name, sha256_file(path)?);
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.write()
    }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializes")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_generate(args: GenerateArgs) -> Result<i32> {
    let mut cfg = FileConfig::load(args.common.config.as_deref(), &args.common.overrides)?;
    if let Some(s) = args.seed {
        cfg.data.seed = s;
    }
    cfg.data.validate()?;
    let mut session = Session::start("generate", args.common.out, to_json(&cfg.data), Some(cfg.data.seed), None)?;
    let dataset = generate_synthetic(&cfg.data)?;
    let path = session.file("dataset.jsonl");
    data::save(&dataset, &path)?;
    session.record(&path)?;
    session.finish()?;
    let c = dataset.header().counts;
    println!("wrote {} ({} records)", path.display(), dataset.len());
    println!(
        "source train/val/test {}/{}/{}, target train/val/test {}/{}/{}",
        c.source.train, c.source.val, c.source.test, c.target.train, c.target.val, c.target.test
    );
    if let Some(p) = dataset.header().probe {
        println!(
            "linear probe on target test: source-trained {:.4}, target-trained {:.4}",
            p.source_probe_accuracy, p.target_probe_accuracy
        );
    }
    println!("sha256 {}", session.manifest.outputs["dataset.jsonl"]);
    Ok(0)
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let mut file = FileConfig::load(args.common.config.as_deref(), &args.common.overrides)?;
    if let Some(m) = args.mode {
        file.train.mode = m.into();
    }
    if let Some(s) = args.seed {
        file.train.seed = s;
    }
    if let Some(e) = args.epochs {
        file.train.epochs = e;
    }
    let cfg = file.train_config();
    cfg.validate()?;
    let mut session = Session::start("train", args.common.out, to_json(&cfg), Some(cfg.train.seed), Some(&args.data))?;
    write_text(&session.file("config.toml"), &file.to_toml())?;
    let dataset = data::load(&args.data)?;
    let best_path = session.file("best.ckpt");
    let last_path = session.file("last.ckpt");
    let mut rows = Vec::new();
    let mut best_epoch = None;
    let result = train_with(&cfg, &dataset, &mut |row, model, improved| {
        checkpoint::save(model, &last_path)?;
        if improved {
            checkpoint::save(model, &best_path)?;
            best_epoch = Some(row.epoch);
        }
        rows.push(row.clone());
        Ok(())
    });
    let metrics = RunMetrics { rows, best_epoch };
    let metrics_path = session.file("metrics.csv");
    let timings_path = session.file("timings.csv");
    metrics.write(&metrics_path, Some(&timings_path))?;
    for p in [&metrics_path, &timings_path, &best_path, &last_path] {
        if p.exists() {
            session.record(p)?;
        }
    }
    session.finish()?;
    let source_batches: usize = metrics.rows.iter().map(|r| r.source_batches).sum();
    let target_batches: usize = metrics.rows.iter().map(|r| r.target_batches).sum();
    println!(
        "mode {}: {} epochs, {source_batches} source batches, {target_batches} target batches",
        cfg.train.mode,
        metrics.rows.len()
    );
    if let Err(e) = result {
        eprintln!("error: {e}");
        if best_path.exists() {
            eprintln!("last good checkpoint kept at {}", best_path.display());
        }
        return Ok(exit_code(&e));
    }
    if let Some(b) = metrics.best() {
        println!(
            "best epoch {} (val CE {:.5}, val acc {:.4}, test acc {:.4}); checkpoint {}",
            b.epoch,
            b.val_ce,
            b.val_acc,
            b.test_acc,
            best_path.display()
        );
    }
    println!("metrics {}", metrics_path.display());
    Ok(0)
}

fn print_evaluation(e: &Evaluation) {
    println!("n {}", e.n);
    println!("accuracy {:.4}", e.accuracy);
    println!("ce {:.6}", e.ce);
    println!("TP {}  FP {}  FN {}  TN {}", e.tp, e.fp, e.fn_, e.tn);
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let domain = match args.domain {
        DomainArg::Source => Domain::Source,
        DomainArg::Target => Domain::Target,
    };
    let config = serde_json::json!({
        "checkpoint": args.checkpoint,
        "split": args.split.name(),
        "domain": domain.name(),
    });
    let mut session = Session::start("eval", args.out, config, None, Some(&args.data))?;
    let model = checkpoint::load(&args.checkpoint)?;
    let dataset = data::load(&args.data)?;
    let e = evaluate(&model, &dataset, domain, args.split)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&e).expect("serializes"));
    } else {
        print_evaluation(&e);
    }
    if let Some(csv) = &args.csv {
        let text = format!(
            "domain,split,n,accuracy,ce,tp,fp,fn,tn\n{},{},{},{:?},{:?},{},{},{},{}\n",
            domain.name(),
            args.split.name(),
            e.n,
            e.accuracy,
            e.ce,
            e.tp,
            e.fp,
            e.fn_,
            e.tn
        );
        write_text(csv, &text)?;
        session.record(csv)?;
    }
    session.finish()?;
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> Result<i32> {
    let opts = VerifyOptions {
        inject_sign_flip: matches!(args.inject_fault, Some(Fault::SignFlip)),
    };
    let config = serde_json::json!({ "inject_sign_flip": opts.inject_sign_flip });
    let mut session = Session::start("verify", args.out, config, None, None)?;
    let report = run_checks(opts);
    let path = session.file("verify.json");
    write_text(&path, &serde_json::to_string_pretty(&report).expect("serializes"))?;
    session.record(&path)?;
    session.finish()?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
    } else {
        print!("{}", report.to_text());
    }
    Ok(if report.passed() { 0 } else { 1 })
}

fn cmd_plot(args: PlotArgs) -> Result<i32> {
    let config = serde_json::json!({ "metrics": args.metrics });
    let mut session = Session::start("plot", args.out, config, None, None)?;
    let text = fs::read_to_string(&args.metrics).map_err(|e| Error::io(&args.metrics, e))?;
    let svg = render_svg(&MetricsTable::parse(&text)?)?;
    let path = session.file("curves.svg");
    write_text(&path, &svg)?;
    session.record(&path)?;
    session.finish()?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn parse_schedule(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|k| {
            k.trim()
                .parse()
                .map_err(|_| Error::Config(format!("schedule `{s}`: `{k}` is not a cluster count")))
        })
        .collect()
}

fn cmd_ablate(args: AblateArgs) -> Result<i32> {
    let mut file = FileConfig::load(args.common.config.as_deref(), &args.common.overrides)?;
    if let Some(e) = args.epochs {
        file.train.epochs = e;
    }
    let cfg = file.train_config();
    let conditions = if args.schedules.is_empty() {
        default_conditions()
    } else {
        args.schedules
            .iter()
            .map(|s| parse_schedule(s).map(AblationCondition::new))
            .collect::<Result<_>>()?
    };
    let config = serde_json::json!({ "train": to_json(&cfg), "conditions": conditions, "seeds": args.seeds });
    let mut session = Session::start("ablate", args.common.out, config, None, Some(&args.data))?;
    let dataset: DatasetFile = data::load(&args.data)?;
    let table = run_ablation(&cfg, &dataset, &conditions, &args.seeds)?;
    let path = session.file("ablation.csv");
    write_text(&path, &table.to_csv())?;
    session.record(&path)?;
    session.finish()?;
    print!("{}", table.to_text());
    Ok(0)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
