use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use drillsim::config::{ConfigError, TrialConfig};
use drillsim::controller::{self, run_batch, Trial, TrialError, TrialOutcome};
use drillsim::exec::Execution;
use drillsim::perception::{calibrate_sigma, measure_mape, PerceptionError, SensorNoiseModel};
use drillsim::specimen::ShellSpecimen;
use drillsim::spline::{step_profile, SplineComparison};
use serde_json::json;

const EXIT_CONFIG: u8 = 64;
const EXIT_USAGE: u8 = 65;
const EXIT_EXISTS: u8 = 73;
const EXIT_IO: u8 = 74;

#[derive(Parser)]
#[command(name = "drillsim", version, about = "Simulate closed-loop circular shell drilling")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and write its trace, outcome and specimen fields.
    Trial(TrialArgs),
    /// Run seeded trials and summarize the outcomes.
    Batch(BatchArgs),
    /// Compare constrained and natural splines over a stepped circle.
    SplineDemo(SplineArgs),
    /// Find the noise level that gives a target MAPE.
    CalibrateNoise(CalibrateArgs),
}

#[derive(Args)]
struct Output {
    /// Output directory, created if missing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace files left by an earlier run.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct TrialArgs {
    /// TOML trial configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Seed of the first trial; trial k uses seed + k.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads: 0 uses every core, 1 runs sequentially.
    #[arg(long, default_value_t = 0)]
    parallel: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SplineArgs {
    #[arg(long, default_value_t = 30)]
    n: usize,
    /// Circle radius (m).
    #[arg(long, default_value_t = 8e-3)]
    radius: f64,
    /// Depth of the lowered knots (m).
    #[arg(long, default_value_t = 100e-6)]
    step_height: f64,
    /// Number of consecutive lowered knots.
    #[arg(long, default_value_t = 1)]
    step_knots: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// CSV file to write.
    #[arg(long, default_value = "spline_demo.csv")]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Target MAPE in percent.
    #[arg(long, default_value_t = 15.05)]
    target: f64,
    #[arg(long, default_value_t = 5000)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Noise settings other than sigma; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also measure the result on full maps with a fresh seed.
    #[arg(long)]
    verify: bool,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self::new(EXIT_IO, error)
    }
}

impl From<TrialError> for Failure {
    fn from(error: TrialError) -> Self {
        let code = match error {
            TrialError::Config(_) => EXIT_CONFIG,
            _ => EXIT_USAGE,
        };
        Self::new(code, error)
    }
}

fn load_config(path: Option<&Path>) -> Result<TrialConfig, Failure> {
    let config = match path {
        None => TrialConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
            TrialConfig::from_toml_str(&text)
                .map_err(|e| Failure::new(EXIT_CONFIG, anyhow::Error::new(e).context(p.display().to_string())))?
        }
    };
    config
        .validate()
        .map_err(|e: ConfigError| Failure::new(EXIT_CONFIG, e))?;
    Ok(config)
}

/// Creates `dir` and refuses to reuse any of `names` inside it unless
/// `overwrite` is set.
fn prepare_dir(dir: &Path, names: &[&str], overwrite: bool) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if !overwrite {
        if let Some(name) = names.iter().find(|n| dir.join(n).exists()) {
            return Err(Failure::new(
                EXIT_EXISTS,
                anyhow::anyhow!(
                    "{} already exists; pass --overwrite to replace it",
                    dir.join(name).display()
                ),
            ));
        }
    }
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_field(path: &Path, values: &[f64], res: usize) -> anyhow::Result<()> {
    let mut out = create(path)?;
    ShellSpecimen::write_matrix(values, res, &mut out)
        .and_then(|_| out.flush())
        .with_context(|| format!("writing {}", path.display()))
}

const TRIAL_FILES: [&str; 6] = [
    "trace.csv",
    "outcome.json",
    "config.toml",
    "thickness.csv",
    "removal.csv",
    "outer.csv",
];

fn outcome_json(outcome: &TrialOutcome) -> serde_json::Value {
    json!({
        "classification": outcome.classification,
        "exit_code": outcome.classification.exit_code(),
        "seed": outcome.seed,
        "drilling_time": outcome.drilling_time,
        "ticks": outcome.ticks,
        "stop_fired": outcome.stop_fired,
        "detachable": outcome.detachable,
        "rupture": outcome.rupture.map(|r| json!({
            "x": r.x,
            "y": r.y,
            "depth_below_inner": r.depth_below_inner,
        })),
        "final_true": outcome.final_true,
        "final_estimate": outcome.final_estimate,
    })
}

fn cmd_trial(args: TrialArgs) -> Result<u8, Failure> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args.output.out.unwrap_or_else(|| PathBuf::from("trial_out"));
    prepare_dir(&out, &TRIAL_FILES, args.output.overwrite)?;

    let mut trial = Trial::new(config.clone())?.with_execution(Execution::Parallel);
    trial.run_until_done()?;
    let specimen = trial.specimen().clone();
    let outcome = trial.finish()?;

    let mut trace = create(&out.join("trace.csv"))?;
    controller::write_trace_csv(&outcome.trace, &mut trace)
        .and_then(|_| trace.flush())
        .context("writing trace.csv")?;
    let summary = serde_json::to_string_pretty(&outcome_json(&outcome)).context("encoding outcome")?;
    write_text(&out.join("outcome.json"), &summary)?;
    write_text(&out.join("config.toml"), &config.to_toml_string())?;
    let res = specimen.resolution();
    write_field(&out.join("thickness.csv"), specimen.thickness_field(), res)?;
    write_field(&out.join("removal.csv"), specimen.removal_field(), res)?;
    write_field(&out.join("outer.csv"), specimen.outer_field(), res)?;

    println!(
        "{} after {:.1} s ({} ticks), seed {}",
        outcome.classification.label(),
        outcome.drilling_time,
        outcome.ticks,
        outcome.seed
    );
    Ok(outcome.classification.exit_code() as u8)
}

fn cmd_batch(args: BatchArgs) -> Result<u8, Failure> {
    if args.trials == 0 {
        return Err(Failure::new(EXIT_USAGE, anyhow::anyhow!("--trials must be at least 1")));
    }
    let config = load_config(args.config.as_deref())?;
    if let Some(dir) = &args.output.out {
        prepare_dir(dir, &["summary.json", "trials.csv"], args.output.overwrite)?;
    }
    let summary = run_batch(&config, args.trials, args.seed, Execution::from_threads(args.parallel))?;
    println!("{}", summary.success_line);
    println!("{}", summary.reference.line);
    if let Some(t) = &summary.success_time {
        println!(
            "drilling time of successes: mean {:.1} s, p50 {:.1} s, p90 {:.1} s",
            t.mean, t.p50, t.p90
        );
    }
    println!(
        "failures: {} rupture, {} not detachable, {} timeout",
        summary.failures.membrane_rupture, summary.failures.patch_not_detachable, summary.failures.timeout
    );
    if let Some(dir) = &args.output.out {
        write_text(&dir.join("summary.json"), &summary.to_json())?;
        let mut rows = create(&dir.join("trials.csv"))?;
        writeln!(rows, "trial,seed,classification,drilling_time,ticks,mean_true_completion")
            .context("writing trials.csv")?;
        for o in &summary.outcomes {
            writeln!(
                rows,
                "{},{},{},{},{},{}",
                o.trial,
                o.seed,
                o.classification.label(),
                o.drilling_time,
                o.ticks,
                o.mean_true_completion
            )
            .context("writing trials.csv")?;
        }
        rows.flush().context("writing trials.csv")?;
    }
    Ok(0)
}

fn cmd_spline_demo(args: SplineArgs) -> Result<u8, Failure> {
    if args.n < 3 || args.step_knots > args.n || args.samples == 0 {
        return Err(Failure::new(
            EXIT_USAGE,
            anyhow::anyhow!("need n >= 3, step-knots <= n and samples >= 1"),
        ));
    }
    if args.out.exists() && !args.overwrite {
        return Err(Failure::new(
            EXIT_EXISTS,
            anyhow::anyhow!("{} already exists; pass --overwrite to replace it", args.out.display()),
        ));
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let knots = step_profile(args.n, args.radius, args.step_height, args.step_knots);
    let cmp = SplineComparison::new(&knots, args.samples).map_err(|e| Failure::new(EXIT_USAGE, e))?;
    let mut out = create(&args.out)?;
    cmp.write_csv(&mut out)
        .and_then(|_| out.flush())
        .with_context(|| format!("writing {}", args.out.display()))?;

    for (name, report) in [
        ("constrained", &cmp.constrained_envelope),
        ("natural", &cmp.natural_envelope),
    ] {
        match report.worst().filter(|w| w.amount != 0.0) {
            Some(w) => println!(
                "{name}: max envelope violation {:.3e} m (segment {}, u = {:.3})",
                w.amount.abs(),
                w.segment,
                w.u
            ),
            None => println!("{name}: max envelope violation 0 m"),
        }
    }
    println!("wrote {}", args.out.display());
    Ok(0)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<u8, Failure> {
    let template = match &args.config {
        Some(_) => load_config(args.config.as_deref())?.noise,
        None => SensorNoiseModel::default(),
    };
    let cal = calibrate_sigma(args.target, &template, args.frames, args.seed).map_err(|e| {
        let code = match e {
            PerceptionError::Unreachable { .. } => EXIT_USAGE,
            _ => EXIT_CONFIG,
        };
        Failure::new(code, e)
    })?;
    println!("sigma = {}", cal.sigma);
    println!("mape = {:.3}% over {} frames", cal.measured_mape, cal.frames);
    if args.verify {
        let model = SensorNoiseModel {
            sigma: cal.sigma,
            ..template
        };
        let check = measure_mape(&model, args.frames.min(1000), args.seed.wrapping_add(1))
            .map_err(|e| Failure::new(EXIT_USAGE, e))?;
        println!("full-map check: {check:.3}%");
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Trial(a) => cmd_trial(a),
        Command::Batch(a) => cmd_batch(a),
        Command::SplineDemo(a) => cmd_spline_demo(a),
        Command::CalibrateNoise(a) => cmd_calibrate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
