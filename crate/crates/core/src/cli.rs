//! Command-line front end of the `chaos-wishart` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::acceptance;
use crate::config::{read_config_file, ExperimentConfig, ExperimentKind};
use crate::error::Error;
use crate::harness::{read_manifest, replay, run, write_outputs, RunOutput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SELFTEST: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "chaos-wishart", version, about = "Rate experiments for Wishart matrices with chaos entries")]
struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convergence-rate experiment for the independent (1) or correlated (2) regime.
    Rates {
        #[arg(long, value_parser = ["1", "2"])]
        theorem: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Second moments of the renormalized independent-regime matrix.
    Moments {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Quadrature diagnostics of the discretized kernels.
    KernelDiag {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the acceptance checks.
    Selftest {
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

/// Flags mirror the config keys; every one may also come from `--config`.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Flat `key = value` file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Re-run the configuration recorded in a manifest and compare fingerprints.
    #[arg(long, conflicts_with = "config")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    n: Option<String>,
    /// Comma-separated, strictly increasing.
    #[arg(long)]
    d_list: Option<String>,
    /// Chaos order per row, or one order for all rows.
    #[arg(long)]
    orders: Option<String>,
    #[arg(long)]
    hurst: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    reference_reps: Option<String>,
    #[arg(long)]
    grid_ratio: Option<String>,
    #[arg(long)]
    cells: Option<String>,
    #[arg(long)]
    directions: Option<String>,
    #[arg(long)]
    quantile_grid: Option<String>,
    #[arg(long)]
    bootstrap: Option<String>,
    #[arg(long, value_parser = ["circulant", "causal"])]
    backend: Option<String>,
    #[arg(long)]
    slope_tolerance: Option<String>,
    #[arg(long)]
    moment_tolerance: Option<String>,
    #[arg(long)]
    memory_cap_mb: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("n", self.n.clone()),
            ("d-list", self.d_list.clone()),
            ("orders", self.orders.clone()),
            ("hurst", self.hurst.clone()),
            ("reps", self.reps.clone()),
            ("reference-reps", self.reference_reps.clone()),
            ("grid-ratio", self.grid_ratio.clone()),
            ("cells", self.cells.clone()),
            ("directions", self.directions.clone()),
            ("quantile-grid", self.quantile_grid.clone()),
            ("bootstrap", self.bootstrap.clone()),
            ("backend", self.backend.clone()),
            ("slope-tolerance", self.slope_tolerance.clone()),
            ("moment-tolerance", self.moment_tolerance.clone()),
            ("memory-cap-mb", self.memory_cap_mb.clone()),
            ("seed", self.seed.clone()),
            ("workers", self.workers.clone()),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ]
    }
}

/// Defaults, then the config file, then explicit flags. The seed has no
/// default and must come from one of the two.
fn build_config(kind: ExperimentKind, theorem: Option<&str>, args: &RunArgs) -> crate::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::defaults(kind, 0);
    let rates = matches!(kind, ExperimentKind::Theorem1 | ExperimentKind::Theorem2);
    let mut seeded = false;
    let mut theorem_given = theorem.is_some();
    if let Some(path) = &args.config {
        for (k, v) in read_config_file(path)? {
            if k == "theorem" && !rates {
                return Err(Error::Config("`theorem` only applies to `rates`".into()));
            }
            seeded |= k == "seed";
            theorem_given |= k == "theorem";
            cfg.set(&k, &v)?;
        }
    }
    if let Some(t) = theorem {
        cfg.set("theorem", t)?;
    }
    if rates && !theorem_given {
        return Err(Error::Config("`rates` needs --theorem 1|2 (or `theorem =` in the config file)".into()));
    }
    for (k, v) in args.pairs() {
        if let Some(v) = v {
            seeded |= k == "seed";
            cfg.set(k, &v)?;
        }
    }
    if !seeded {
        return Err(Error::Config("a master seed is required (--seed or `seed =` in the config file)".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn summarize(out: &RunOutput, dir: &Path) {
    let r = &out.report;
    println!("{} rows, {} fits -> {}", r.rows.len(), r.fits.len(), dir.display());
    for f in &r.fits {
        match f.expected {
            Some(e) => println!("  slope {:<32} {:>8.4} ± {:.4} (expected {e:.3})", f.metric, f.slope, f.slope_stderr),
            None => println!("  slope {:<32} {:>8.4} ± {:.4}", f.metric, f.slope, f.slope_stderr),
        }
    }
    for c in &r.checks {
        println!("  check {:<40} {} ({:.6} in [{:.6}, {:.6}])", c.name, if c.pass { "pass" } else { "FAIL" }, c.value, c.lower, c.upper);
    }
    println!("fingerprint {}", r.fingerprint());
}

fn run_command(kind: ExperimentKind, theorem: Option<&str>, args: &RunArgs) -> i32 {
    if let Some(path) = &args.manifest {
        let manifest = match read_manifest(path) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        };
        let same_kind = manifest.config.kind == kind
            || matches!((manifest.config.kind, kind), (ExperimentKind::Theorem1 | ExperimentKind::Theorem2, ExperimentKind::Theorem1 | ExperimentKind::Theorem2));
        if !same_kind {
            eprintln!("error: manifest records a {} run", manifest.config.kind.label());
            return EXIT_CONFIG;
        }
        let mut cfg = manifest.config.clone();
        if let Some(out) = &args.out {
            cfg.out = Some(out.clone());
        }
        return match replay(&manifest) {
            Ok((out, same)) => {
                let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("results"));
                if let Err(e) = write_outputs(&dir, &cfg, &out) {
                    eprintln!("error: {e}");
                    return exit_code(&e);
                }
                summarize(&out, &dir);
                if same {
                    println!("report fingerprint reproduced");
                    EXIT_OK
                } else {
                    eprintln!("report fingerprint differs from the manifest ({})", manifest.report_fingerprint);
                    EXIT_RUNTIME
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        };
    }
    let cfg = match build_config(kind, theorem, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    let result = run(&cfg).and_then(|out| write_outputs(&dir, &cfg, &out).map(|_| out));
    match result {
        Ok(out) => {
            summarize(&out, &dir);
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Parse `argv` and run; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match &cli.command {
        Command::Rates { theorem, run } => run_command(ExperimentKind::Theorem1, theorem.as_deref(), run),
        Command::Moments { run } => run_command(ExperimentKind::Moments, None, run),
        Command::KernelDiag { run } => run_command(ExperimentKind::KernelDiag, None, run),
        Command::Selftest { only } => {
            if let Some(bad) = only.iter().find(|&&i| !(1..=10).contains(&i)) {
                eprintln!("error: no criterion {bad}");
                return EXIT_CONFIG;
            }
            let outcomes = acceptance::run_all(only, |o| println!("{o}"));
            let failed = outcomes.iter().filter(|o| !o.pass).count();
            println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
            if failed == 0 {
                EXIT_OK
            } else {
                EXIT_SELFTEST
            }
        }
    }
}
