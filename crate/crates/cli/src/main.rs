//! `hpe`: dataset generation, training, evaluation, baselines and
//! generalization sweeps for HPE beamforming, with CSV output.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hpe_core::baselines::ccp::{CcpConfig, InnerSolver};
use hpe_core::config::parse_kv;
use hpe_core::dataset;
use hpe_core::eval::{self, Baseline, EvalReport, DEFAULT_R_MAX};
use hpe_core::selftest;
use hpe_core::sweep::{self, Axis, SweepRow};
use hpe_core::train::{self, Checkpoint, LogRow, TrainConfig};
use hpe_core::{sample_instance, ChannelInstance};

#[derive(Parser)]
#[command(name = "hpe", version, about = "HPE transformer beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset of sampled channel instances.
    Gen(GenArgs),
    /// Train a model and write its checkpoint and loss log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Solve a dataset with zero-forcing or CCP.
    Baseline(BaselineArgs),
    /// Evaluate one checkpoint while varying K, M or the SINR target.
    Sweep(SweepArgs),
    /// Run the property suite.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Plain-text `key = value` file applied before `--set` overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Starting point before the config file is applied.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 10 epochs of 200 steps, batch 128.
    Desk,
    /// 100 epochs of 2000 steps, batch 1024.
    Full,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match self.preset {
            Preset::Desk => TrainConfig::desk(),
            Preset::Full => TrainConfig::default(),
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for (k, v) in parse_kv(&text)? {
                cfg.set(&k, &v).with_context(|| format!("{}", path.display()))?;
            }
        }
        for o in &self.overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!("--set expects key=value, got {o:?}");
            };
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Binary,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    count: usize,
    /// Stream seed; instance `i` is `sample_instance(seed, i)`.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint directory; the loss log is written there as `train_log.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OutputArgs {
    /// Per-instance CSV.
    #[arg(long)]
    rows: Option<PathBuf>,
    /// Summary CSV; printed to stdout when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file; `.bin` is read as binary, anything else as text.
    #[arg(long)]
    data: PathBuf,
    /// Largest number of constraint steps tried when choosing `r_test`.
    #[arg(long, default_value_t = DEFAULT_R_MAX)]
    r_max: usize,
    /// Evaluate at exactly this many steps instead of choosing.
    #[arg(long)]
    r_test: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Zf,
    Ccp,
}

#[derive(Clone, Copy, ValueEnum)]
enum Inner {
    Gradient,
    Newton,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    which: Which,
    /// CCP outer iterations.
    #[arg(long, default_value_t = CcpConfig::default().max_outer)]
    max_outer: usize,
    /// CCP inner solver.
    #[arg(long, value_enum, default_value_t = Inner::Gradient)]
    inner: Inner,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// `K` (total users), `M` (groups) or `gamma` (target in dB).
    #[arg(long)]
    axis: String,
    /// `a..b`, `a..b:step` or a comma list.
    #[arg(long)]
    values: String,
    /// Scenario keys (`n`, `groups`, `sinr_db`, `noise_dbm`, `data_seed`)
    /// give the base scenario.
    #[command(flatten)]
    config: ConfigArgs,
    /// Instances per sweep point.
    #[arg(long, default_value_t = 128)]
    count: usize,
    #[arg(long, default_value_t = DEFAULT_R_MAX)]
    r_max: usize,
    /// Output CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_dataset(path: &Path) -> Result<Vec<ChannelInstance>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let insts = if path.extension().is_some_and(|e| e == "bin") {
        dataset::read_binary(BufReader::new(file))?
    } else {
        dataset::read_text(BufReader::new(file))?
    };
    if insts.is_empty() {
        bail!("{} holds no instances", path.display());
    }
    Ok(insts)
}

/// Writes per-instance rows and the summary (to stdout if no path).
fn write_report(rep: &EvalReport, out: &OutputArgs) -> Result<()> {
    if let Some(path) = &out.rows {
        let mut w = create(path)?;
        writeln!(w, "{}", EvalReport::CSV_HEADER)?;
        for r in &rep.rows {
            writeln!(w, "{}", EvalReport::row_csv(r))?;
        }
        w.flush()?;
    }
    let text = format!("{}\n{}\n", EvalReport::SUMMARY_HEADER, rep.summary_csv());
    match &out.summary {
        Some(path) => create(path)?.write_all(text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn gen(args: &GenArgs) -> Result<()> {
    let mut scenario = args.config.resolve()?.scenario;
    scenario.seed = args.seed;
    let insts = (0..args.count as u64)
        .map(|i| sample_instance(&scenario, i))
        .collect::<hpe_core::Result<Vec<_>>>()?;
    let mut w = create(&args.out)?;
    match args.format {
        Format::Text => dataset::write_text(&mut w, &insts)?,
        Format::Binary => dataset::write_binary(&mut w, &insts)?,
    }
    w.flush()?;
    log::info!("wrote {} instances to {}", insts.len(), args.out.display());
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let total = cfg.epochs * cfg.steps_per_epoch;
    let out = train::train(&cfg, |row| {
        if row.step % 100 == 0 || row.step + 1 == total {
            log::info!("step {} epoch {} loss {:.4} power {:.4e} W V {:.4}", row.step, row.epoch, row.loss, row.mean_power_w, row.mean_v);
        }
    })?;
    let mut meta = cfg.to_kv();
    meta.push(("steps_completed".into(), out.log.len().to_string()));
    train::save(&Checkpoint { model: out.model, meta }, &args.out)?;
    let mut w = create(&args.out.join("train_log.csv"))?;
    writeln!(w, "{}", LogRow::CSV_HEADER)?;
    for row in &out.log {
        writeln!(w, "{}", row.to_csv())?;
    }
    w.flush()?;
    if let Some(e) = out.diverged {
        bail!("training stopped after {} steps: {e}; the last good parameters were saved", out.log.len());
    }
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let ck = train::load(&args.checkpoint)?;
    let insts = read_dataset(&args.data)?;
    let rep = match args.r_test {
        Some(r) => eval::evaluate_model_at(&ck.model, &insts, r, true, None)?,
        None => eval::evaluate_model(&ck.model, &insts, args.r_max)?,
    };
    write_report(&rep, &args.output)
}

fn run_baseline(args: &BaselineArgs) -> Result<()> {
    let insts = read_dataset(&args.data)?;
    let cfg = CcpConfig {
        max_outer: args.max_outer,
        inner: match args.inner {
            Inner::Gradient => InnerSolver::Gradient,
            Inner::Newton => InnerSolver::Newton,
        },
        ..CcpConfig::default()
    };
    let which = match args.which {
        Which::Zf => Baseline::Zf,
        Which::Ccp => Baseline::Ccp,
    };
    write_report(&eval::evaluate_baseline(which, &insts, &cfg)?, &args.output)
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let ck = train::load(&args.checkpoint)?;
    let axis: Axis = args.axis.parse()?;
    let values = sweep::parse_values(&args.values)?;
    let mut base = args.config.resolve()?.scenario;
    base.n = ck.model.antennas();
    let rows = sweep::sweep(&ck.model, &base, axis, &values, args.count, args.r_max)?;
    let mut text = SweepRow::header(axis) + "\n";
    for r in &rows {
        text.push_str(&r.csv());
        text.push('\n');
    }
    match &args.out {
        Some(path) => create(path)?.write_all(text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_selftest(args: &SelftestArgs) -> Result<()> {
    let mut failed = 0;
    for c in selftest::run_all(args.seed) {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        bail!("{failed} property checks failed");
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Baseline(a) => run_baseline(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Selftest(a) => run_selftest(a),
    }
}
