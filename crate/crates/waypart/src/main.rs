use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use waypart::apportion::write_log_csv;
use waypart::formats::{
    attributes_to_toml, model_to_toml, nest_file_attributes, parse_config, parse_nest_file, read_text,
    read_training_csv, FormatError,
};
use waypart::loop_model::merge_nest_attributes;
use waypart::metrics::{
    aggregate_by_category, summarize, summary_to_toml, write_report_csv, write_summaries_csv, RunSummary,
};
use waypart::sim::{load_mix, read_trace_csv, replay_trace, run_mix, write_trace_csv, MixSpec, Policy, SimReport};
use waypart::timing::{fit_timing, timing_accuracy};
use waypart::SystemConfig;

#[derive(Parser)]
#[command(name = "waypart", version, about = "Compiler-guided LLC way partitioning toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// System configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Maximum processes per CLOS.
    #[arg(long, global = true)]
    gfactor: Option<u32>,
    /// Footprint multiplier for stream phases.
    #[arg(long = "scale-stream", global = true)]
    scale_stream: Option<f64>,
    /// SRD threshold separating stream from reuse loops.
    #[arg(long = "delta-srd", global = true)]
    delta_srd: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Derive the attribute bundle of a loop nest; extra files are inner
    /// nests merged into the first.
    Analyze {
        #[arg(required = true)]
        nests: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a phase timing model to a training CSV.
    FitTiming {
        training: PathBuf,
        /// Held-out samples for the accuracy score.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one mix under one policy.
    Simulate {
        mix: PathBuf,
        #[arg(long, default_value = "comcas")]
        policy: String,
        #[arg(long = "interval-ms", default_value_t = 500.0)]
        interval_ms: f64,
        /// Output directory for report.csv, allocations.csv, trace.csv and
        /// summary.toml; the summary goes to stdout without it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every policy on one mix.
    Compare {
        mix: PathBuf,
        #[arg(long = "interval-ms", default_value_t = 500.0)]
        interval_ms: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every policy on every mix under the given directories.
    Sweep {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long = "interval-ms", default_value_t = 500.0)]
        interval_ms: f64,
        /// Parallel mix runs; 1 runs sequentially.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Feed a recorded event trace to the probe-based allocator.
    Replay {
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Schema(String),
    Simulation(String),
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Schema(e.to_string())
    }
}

impl From<waypart::sim::SimError> for CliError {
    fn from(e: waypart::sim::SimError) -> Self {
        CliError::Simulation(e.to_string())
    }
}

impl From<waypart::metrics::MetricError> for CliError {
    fn from(e: waypart::metrics::MetricError) -> Self {
        CliError::Simulation(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Schema(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Simulation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

impl Global {
    fn base_config(&self) -> Result<SystemConfig, CliError> {
        match &self.config {
            Some(p) => Ok(parse_config(&read_text(p)?, &p.display().to_string(), &SystemConfig::default())?),
            None => Ok(SystemConfig::default()),
        }
    }

    /// Command-line flags win over every file.
    fn apply_flags(&self, mut c: SystemConfig) -> Result<SystemConfig, CliError> {
        if let Some(g) = self.gfactor {
            c.gfactor = g;
        }
        if let Some(s) = self.scale_stream {
            c.scaling_factor_stream = s;
        }
        if let Some(d) = self.delta_srd {
            c.srd_delta = d;
        }
        c.validate().map_err(|e| CliError::Schema(e.to_string()))?;
        Ok(c)
    }

    fn load_mix(&self, path: &Path) -> Result<MixSpec, CliError> {
        let mut mix = load_mix(path, &self.base_config()?)?;
        mix.config = self.apply_flags(mix.config)?;
        Ok(mix)
    }
}

fn policy_arg(name: &str, interval_ms: f64) -> Result<Policy, CliError> {
    Policy::parse(name, interval_ms * 1e6).ok_or_else(|| {
        CliError::Schema(format!(
            "unknown policy `{name}` (expected comcas, unpartitioned, maxways or reactive with --interval-ms > 0)"
        ))
    })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Schema(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn emit_text(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Schema(format!("stdout: {e}"))),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Analyze { nests, out } => {
            let config = g.apply_flags(g.base_config()?)?;
            let mut bundles = Vec::with_capacity(nests.len());
            for p in nests {
                let context = p.display().to_string();
                let file = parse_nest_file(&read_text(p)?, &context)?;
                bundles.push(nest_file_attributes(&file, &context, &config)?);
            }
            let merged = merge_nest_attributes(&bundles).map_err(|e| CliError::Schema(e.to_string()))?;
            emit_text(out.as_deref(), &attributes_to_toml(&merged))
        }
        Command::FitTiming { training, test, out } => {
            let context = training.display().to_string();
            let file = File::open(training).map_err(io_err(training))?;
            let samples = read_training_csv(BufReader::new(file), &context)?;
            let model = fit_timing(&samples).map_err(|e| CliError::Schema(format!("{context}: {e}")))?;
            emit_text(out.as_deref(), &model_to_toml(&model))?;
            if let Some(t) = test {
                let file = File::open(t).map_err(io_err(t))?;
                let held_out = read_training_csv(BufReader::new(file), &t.display().to_string())?;
                let acc = timing_accuracy(&model, &held_out)
                    .map_err(|e| CliError::Schema(format!("{}: {e}", t.display())))?;
                eprintln!("accuracy: {acc:.3}%");
            }
            Ok(())
        }
        Command::Simulate { mix, policy, interval_ms, out } => {
            let spec = g.load_mix(mix)?;
            let policy = policy_arg(policy, *interval_ms)?;
            let report = run_mix(&spec, policy, &spec.config)?;
            let baseline = match policy {
                Policy::Unpartitioned => report.clone(),
                _ => run_mix(&spec, Policy::Unpartitioned, &spec.config)?,
            };
            for w in &report.warnings {
                log::warn!("{w}");
            }
            let summary = summarize(&report, &baseline)?;
            match out {
                Some(dir) => write_run(dir, &report, &summary),
                None => emit_text(None, &summary_to_toml(&summary)),
            }
        }
        Command::Compare { mix, interval_ms, out } => {
            let spec = g.load_mix(mix)?;
            let rows = compare(&spec, *interval_ms * 1e6)?;
            emit_summaries(out.as_deref(), "compare.csv", &rows)
        }
        Command::Sweep { dirs, interval_ms, jobs, out } => {
            let mut paths = Vec::new();
            for d in dirs {
                collect_mixes(d, &mut paths)?;
            }
            paths.sort();
            let mixes: Vec<MixSpec> = paths.iter().map(|p| g.load_mix(p)).collect::<Result<_, _>>()?;
            let interval = *interval_ms * 1e6;
            let results: Vec<Result<Vec<RunSummary>, CliError>> = if *jobs > 1 {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(*jobs)
                    .build()
                    .map_err(|e| CliError::Simulation(e.to_string()))?;
                pool.install(|| mixes.par_iter().map(|m| compare(m, interval)).collect())
            } else {
                mixes.iter().map(|m| compare(m, interval)).collect()
            };
            let mut runs = Vec::new();
            for r in results {
                runs.extend(r?);
            }
            runs.sort_by(|a, b| a.mix.cmp(&b.mix).then(policy_rank(&a.policy).cmp(&policy_rank(&b.policy))));
            let categories = aggregate_by_category(&runs);
            match out {
                Some(dir) => {
                    fs::create_dir_all(dir).map_err(io_err(dir))?;
                    write_summaries_csv(create(&dir.join("runs.csv"))?, &runs)?;
                    let path = dir.join("categories.csv");
                    waypart::formats::write_versioned_csv(create(&path)?, 1, &categories)?;
                    Ok(())
                }
                None => {
                    waypart::formats::write_versioned_csv(io::stdout().lock(), 1, &categories)?;
                    Ok(())
                }
            }
        }
        Command::Replay { trace, out } => {
            let config = g.apply_flags(g.base_config()?)?;
            let context = trace.display().to_string();
            let file = File::open(trace).map_err(io_err(trace))?;
            let events = read_trace_csv(BufReader::new(file), &context)?;
            let log = replay_trace(&events, &config)?;
            match out {
                Some(p) => write_log_csv(create(p)?, &log)?,
                None => write_log_csv(io::stdout().lock(), &log)?,
            }
            Ok(())
        }
    }
}

fn policy_rank(name: &str) -> usize {
    ["comcas", "unpartitioned", "maxways"].iter().position(|p| name == *p).unwrap_or(3)
}

/// Every policy on one mix, in a fixed policy order.
fn compare(spec: &MixSpec, interval_ns: f64) -> Result<Vec<RunSummary>, CliError> {
    let reports: Vec<SimReport> =
        Policy::all(interval_ns).iter().map(|&p| run_mix(spec, p, &spec.config)).collect::<Result<_, _>>()?;
    let baseline = reports.iter().find(|r| r.policy == Policy::Unpartitioned).expect("all policies ran");
    Ok(reports.iter().map(|r| summarize(r, baseline)).collect::<Result<_, _>>()?)
}

fn emit_summaries(out: Option<&Path>, name: &str, rows: &[RunSummary]) -> Result<(), CliError> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            write_summaries_csv(create(&dir.join(name))?, rows)?;
        }
        None => write_summaries_csv(io::stdout().lock(), rows)?,
    }
    Ok(())
}

fn write_run(dir: &Path, report: &SimReport, summary: &RunSummary) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_report_csv(create(&dir.join("report.csv"))?, report)?;
    write_log_csv(create(&dir.join("allocations.csv"))?, &report.log)?;
    write_trace_csv(create(&dir.join("trace.csv"))?, &report.trace)?;
    let path = dir.join("summary.toml");
    fs::write(&path, summary_to_toml(summary)).map_err(io_err(&path))
}

fn collect_mixes(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if dir.is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    for entry in entries {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            collect_mixes(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "toml") {
            out.push(path);
        }
    }
    Ok(())
}
