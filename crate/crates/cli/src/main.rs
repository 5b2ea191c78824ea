use clap::{Args, Parser, Subcommand};
use eddylab::config::{parse_text, schema_help, Command, ResolvedConfig};
use eddylab::harness::{self, Verdict};
use eddylab::Error;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "eddylab",
    version,
    about = "Heat equation with transport noise: vortex noise, eddy diffusivity and Monte Carlo checks",
    after_help = after_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Vortex-noise covariance estimates across lattice densities.
    #[command(after_help = after_help())]
    NoiseSweep(Common),
    /// Monte Carlo check of the averaged-equation bound and the energy inequality.
    #[command(after_help = after_help())]
    Theorem1(Common),
    /// Enhanced decay of the effective solution.
    #[command(after_help = after_help())]
    Decay(Common),
    /// Principal eigenvalue against the boundary-layer lower bounds.
    #[command(after_help = after_help())]
    EigenSweep(Common),
    /// Kraichnan covariance regimes and bound cross-checks.
    #[command(after_help = after_help())]
    KraichnanReport(Common),
    /// Admissibility of a vortex configuration.
    #[command(after_help = after_help())]
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Config file (`key = value` lines); defaults are used when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides the master seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides the number of Monte Carlo paths.
    #[arg(long, value_name = "INT", value_parser = clap::value_parser!(u64).range(1..))]
    paths: Option<u64>,
    /// Worker threads for path ensembles.
    #[arg(long, value_name = "INT", value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
}

fn after_help() -> String {
    format!(
        "Exit codes: 0 all verdicts pass, 1 a verdict fails, 2 usage or config error, 3 runtime failure.\n\n{}",
        schema_help()
    )
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config_path: Option<String>,
    config: &'a BTreeMap<String, String>,
    config_hash: String,
    seed: Option<u64>,
    output_dir: String,
    ignored_keys: &'a [String],
}

#[derive(Serialize)]
struct ReportEnvelope<'a, T: Serialize> {
    command: &'static str,
    version: &'static str,
    config_hash: String,
    config: &'a BTreeMap<String, String>,
    all_pass: bool,
    verdicts: &'a [Verdict],
    report: &'a T,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Inadmissible(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn resolve(cmd: Command, args: &Common) -> Result<ResolvedConfig, Failure> {
    let given = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            parse_text(&text)?
        }
        None => BTreeMap::new(),
    };
    let mut cfg = ResolvedConfig::resolve(cmd, &given)?;
    if let Some(s) = args.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(p) = args.paths {
        cfg.set("paths_count", &p.to_string())?;
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn write_csv(path: &Path, f: impl FnOnce(fs::File) -> eddylab::Result<()>) -> Result<(), Failure> {
    f(fs::File::create(path)?)?;
    Ok(())
}

fn emit<T: Serialize>(out: &Path, cfg: &ResolvedConfig, verdicts: &[Verdict], report: &T) -> Result<bool, Failure> {
    let pass = harness::all_pass(verdicts);
    let env = ReportEnvelope {
        command: cfg.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        config: &cfg.values,
        all_pass: pass,
        verdicts,
        report,
    };
    write_json(&out.join("report.json"), &env)?;
    for v in verdicts {
        println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    Ok(pass)
}

fn run(cmd: Command, args: &Common) -> Result<bool, Failure> {
    let cfg = resolve(cmd, args)?;
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t as usize)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    fs::create_dir_all(&args.out)?;
    let manifest = RunManifest {
        tool: "eddylab",
        version: env!("CARGO_PKG_VERSION"),
        command: cmd.name(),
        config_path: args.config.as_ref().map(|p| p.display().to_string()),
        config: &cfg.values,
        config_hash: cfg.hash(),
        seed: cfg.seed("seed").ok(),
        output_dir: args.out.display().to_string(),
        ignored_keys: &cfg.ignored,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    for k in &cfg.ignored {
        eprintln!("note: key `{k}` is not used by {}", cmd.name());
    }
    let out = args.out.as_path();
    match cmd {
        Command::Validate => {
            let r = harness::run_validate(&cfg)?;
            if r.admissible {
                println!("admissible");
            } else {
                println!("inadmissible");
                for v in &r.violations {
                    println!("  {v}");
                }
            }
            emit(out, &cfg, &r.verdicts, &r)
        }
        Command::Theorem1 => {
            let o = harness::run_theorem1(&harness::Theorem1Config::from_resolved(&cfg)?)?;
            write_csv(&out.join("observables.csv"), |f| o.ensemble.write_csv(f))?;
            emit(out, &cfg, &o.report.verdicts, &o.report)
        }
        Command::Decay => {
            let o = harness::run_decay(&harness::DecayConfig::from_resolved(&cfg)?)?;
            write_csv(&out.join("observables.csv"), |f| o.ensemble.write_csv(f))?;
            emit(out, &cfg, &o.report.verdicts, &o.report)
        }
        Command::NoiseSweep => {
            let r = harness::run_noise_sweep(&harness::NoiseSweepConfig::from_resolved(&cfg)?)?;
            write_csv(&out.join("sweep.csv"), |f| r.write_csv(f))?;
            emit(out, &cfg, &r.verdicts, &r)
        }
        Command::EigenSweep => {
            let r = harness::run_eigen_sweep(&harness::EigenSweepConfig::from_resolved(&cfg)?)?;
            write_csv(&out.join("sweep.csv"), |f| r.write_csv(f))?;
            emit(out, &cfg, &r.verdicts, &r)
        }
        Command::KraichnanReport => {
            let r = harness::run_kraichnan_report(&harness::KraichnanSweepConfig::from_resolved(&cfg)?)?;
            write_csv(&out.join("sweep.csv"), |f| r.write_csv(f))?;
            emit(out, &cfg, &r.verdicts, &r)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (cmd, args) = match &cli.command {
        Sub::NoiseSweep(a) => (Command::NoiseSweep, a),
        Sub::Theorem1(a) => (Command::Theorem1, a),
        Sub::Decay(a) => (Command::Decay, a),
        Sub::EigenSweep(a) => (Command::EigenSweep, a),
        Sub::KraichnanReport(a) => (Command::KraichnanReport, a),
        Sub::Validate(a) => (Command::Validate, a),
    };
    match run(cmd, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
