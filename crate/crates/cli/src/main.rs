use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kmslab::config::{parse_config, RunManifest, SweepConfig};
use kmslab::exec::{self, ExecMode};
use kmslab::experiments::{self, envelope, write_json};
use kmslab::Error;

/// Finite-volume spin lattice experiments: KMS checks, temporal correlations,
/// evolution bounds and light cones.
#[derive(Debug, Parser)]
#[command(name = "kmslab", version)]
struct Cli {
    /// JSON run configuration; built-in defaults when absent
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed for random probes
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; the THREADS environment variable is used when absent
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Largest number of sites a Hamiltonian may act on (hard max 14)
    #[arg(long, global = true, value_name = "N")]
    size_cap: Option<usize>,
    /// Run every loop sequentially
    #[arg(long, global = true)]
    sequential: bool,
    /// Progress logging on stderr
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// KMS boundary identity on seeded probe pairs, with the ground-state control
    KmsCheck,
    /// Correlation series for each size and beta
    Wok,
    /// Scaling sweep: CSV rows plus a JSON summary with decay fits
    Sweep,
    /// Averaged evolution against a larger proxy region
    Bound,
    /// Commutator profile of an evolved local observable
    LrCone,
    /// Ordered triple-limit scan over nested regions
    TripleLimit,
    /// Markdown summary of artifacts in the output directory or given paths
    Report {
        /// Artifact files; defaults to the known artifacts in --out
        artifacts: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::KmsCheck => "kms-check",
            Command::Wok => "wok",
            Command::Sweep => "sweep",
            Command::Bound => "bound",
            Command::LrCone => "lr-cone",
            Command::TripleLimit => "triple-limit",
            Command::Report { .. } => "report",
        }
    }
}

const ARTIFACTS: [&str; 6] = ["kms.json", "sweep.json", "wok.json", "bound.json", "lr.json", "triple.json"];

enum Failure {
    Validation(String),
    Numerical(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else if matches!(e, Error::Io(_) | Error::Csv(_) | Error::Json(_)) {
            Failure::Other(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

fn threads(cli: &Cli) -> Result<Option<usize>, Failure> {
    let n = match cli.threads {
        Some(n) => Some(n),
        None => match std::env::var("THREADS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                Failure::Validation(format!("THREADS must be a positive integer, got {v:?}"))
            })?),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(Failure::Validation("thread count must be positive".into()));
    }
    Ok(n)
}

fn load_config(cli: &Cli) -> Result<SweepConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text)?
        }
        None => SweepConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(c) = cli.size_cap {
        cfg.size_cap = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = threads(cli)? {
        exec::init_threads(n);
    }
    let cfg = load_config(cli)?;
    let mode = if cli.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    let out = &cli.out;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    let name = cli.command.name();
    let manifest = RunManifest::new(name, &cfg, exec::current_threads(), mode.is_parallel());
    write_json(&out.join(format!("{name}.manifest.json")), &manifest)?;
    log::info!("{name}: config hash {}", manifest.config_hash);

    match &cli.command {
        Command::KmsCheck => {
            let runs = experiments::kms_suite(&cfg, mode)?;
            write_json(&out.join("kms.json"), &envelope("kms", &runs)?)?;
            for r in &runs {
                println!(
                    "{} N={} beta={} state={} max residual {:.3e}{} {}",
                    r.model,
                    r.size,
                    r.beta,
                    r.state,
                    r.max_residual,
                    if r.control { " (control)" } else { "" },
                    if r.passed { "ok" } else { "FAILED" }
                );
            }
            if let Some(bad) = runs.iter().find(|r| !r.passed) {
                return Err(Failure::Numerical(format!(
                    "KMS check failed for N = {}, beta = {} ({})",
                    bad.size, bad.beta, bad.state
                )));
            }
        }
        Command::Wok => {
            let series = experiments::wok_runs(&cfg, mode)?;
            write_json(&out.join("wok.json"), &envelope("wok", &series)?)?;
            for s in &series {
                println!("|Lambda|={} beta={} sup deviation {:.6e}", s.lambda_size, s.beta, s.sup_deviation);
            }
        }
        Command::Sweep => {
            let res = experiments::scaling_sweep_to(&cfg, mode, &out.join("sweep.csv"))?;
            write_json(&out.join("sweep.json"), &envelope("sweep", &res.summary)?)?;
            for b in &res.summary.per_beta {
                let p = b.fit.as_ref().map(|f| format!("{:.3}", f.p)).unwrap_or_else(|| "-".into());
                println!(
                    "beta={} sup deviation {:?} strictly decreasing {} p {p}",
                    b.beta, b.sup_deviation, b.strictly_decreasing
                );
            }
        }
        Command::Bound => {
            let r = experiments::bound_run(&cfg, mode)?;
            write_json(&out.join("bound.json"), &envelope("bound", &r)?)?;
            println!(
                "max measured {:.6e}, predicted {:.6e} (eps {:.3e}), holds {}",
                r.max_measured, r.predicted, r.eps, r.holds
            );
            if !r.holds {
                return Err(Failure::Numerical("measured discrepancy exceeds the bound".into()));
            }
        }
        Command::LrCone => {
            let p = experiments::lr_run(&cfg, mode)?;
            write_json(&out.join("lr.json"), &envelope("lr", &p)?)?;
            println!("front {:?}, cone slope {:?}", p.front, p.cone_slope);
        }
        Command::TripleLimit => {
            let tables = experiments::triple_run(&cfg, mode)?;
            write_json(&out.join("triple.json"), &envelope("triple", &tables)?)?;
            println!("{} rows", tables.iter().map(|t| t.rows.len()).sum::<usize>());
        }
        Command::Report { artifacts } => {
            let paths: Vec<PathBuf> = if artifacts.is_empty() {
                ARTIFACTS.iter().map(|a| out.join(a)).filter(|p| p.exists()).collect()
            } else {
                artifacts.clone()
            };
            let (found, missing) = experiments::load_artifacts(&paths);
            let found: Vec<_> = found
                .into_iter()
                .map(|mut a| {
                    a.name = file_name(Path::new(&a.name));
                    a
                })
                .collect();
            let text = experiments::report(&found, &missing);
            let path = out.join("report.md");
            std::fs::write(&path, text).map_err(Error::from)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
