//! Command-line surface: `run`, `report` and `inspect`.
//!
//! Exit codes: 0 success, 1 a cell or file operation failed, 2 invalid
//! configuration or an empty sweep.

pub mod config;
mod inspect;
pub mod report;

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::pipeline::{sweep, CellOutcome, SweepOptions};

pub use config::ExperimentConfig;
pub use inspect::inspect;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

/// Name of the effective config written at the top of each sweep directory.
pub const SWEEP_CONFIG: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "weedout", version, about = "Random search over sparse sub-networks at initialization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run (or resume) the sweep described by a config file.
    Run(RunArgs),
    /// Aggregate a sweep directory into CSV tables and print the arm comparison.
    Report {
        /// Directory holding the sweep's run directories.
        sweep_dir: PathBuf,
    },
    /// Summarize one run directory.
    Inspect {
        run_dir: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output root; the sweep goes to `<out>/<name>/`.
    #[arg(long, env = "WEEDOUT_RUNS_DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads. With more than one, cells also run concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Also retry cells whose previous attempt failed. Completed cells are
    /// never recomputed.
    #[arg(long)]
    pub resume: bool,
    /// Added to every configured seed.
    #[arg(long, default_value_t = 0)]
    pub seed_offset: u64,
}

pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Report { sweep_dir } => cmd_report(&sweep_dir),
        Command::Inspect { run_dir } => match inspect(&run_dir) {
            Ok(text) => {
                emit(&text);
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_FAILURE
            }
        },
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidArgument(_)
            | Error::Spec(_)
            | Error::InfeasibleSparsity { .. }
            | Error::NotImplemented(_)
            | Error::UnsupportedMode
    )
}

fn fail(e: &Error) -> i32 {
    eprintln!("error: {e}");
    if config_error(e) {
        EXIT_INVALID
    } else {
        EXIT_FAILURE
    }
}

/// Effective config after command-line overrides, plus the output root.
fn effective_config(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), i32> {
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return Err(fail(&e)),
    };
    for s in &mut cfg.seeds {
        match s.checked_add(args.seed_offset) {
            Some(v) => *s = v,
            None => {
                eprintln!("config error: seeds: --seed-offset overflows seed {s}");
                return Err(EXIT_INVALID);
            }
        }
    }
    let diags = cfg.validate();
    if !diags.is_empty() {
        for d in &diags.0 {
            eprintln!("config error: {d}");
        }
        return Err(EXIT_INVALID);
    }
    if args.parallel == 0 {
        eprintln!("config error: --parallel must be >= 1");
        return Err(EXIT_INVALID);
    }
    let root = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, root))
}

fn cmd_run(args: &RunArgs) -> i32 {
    let (cfg, root) = match effective_config(args) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let base = args.config.parent().unwrap_or(Path::new("."));
    let splits = match cfg.load_splits(base) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let plan = match cfg.plan(&splits) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    let text = match cfg.to_toml() {
        Ok(t) => t,
        Err(e) => return fail(&e),
    };
    let sweep_dir = root.join(&cfg.name);
    if let Err(code) = claim_sweep_dir(&sweep_dir, &text) {
        return code;
    }

    let cells = plan.cells();
    let total = cells.len();
    println!(
        "sweep {}: {total} cells ({} train / {} validation / {} test samples) -> {}",
        cfg.name,
        splits.train.len(),
        splits.validation.len(),
        splits.test.len(),
        sweep_dir.display()
    );
    let done = AtomicUsize::new(0);
    let opts = SweepOptions {
        config_text: text,
        retry_failed: args.resume,
        parallel_cells: args.parallel > 1,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.parallel).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_FAILURE;
        }
    };
    let result = pool.install(|| {
        sweep(&plan, &splits, &sweep_dir, &opts, |cell, out| {
            let k = done.fetch_add(1, Ordering::SeqCst) + 1;
            let id = cell.run_id();
            match out {
                CellOutcome::Completed(r) => {
                    let acc = r.final_test().map_or(f64::NAN, |m| m.accuracy);
                    println!("[{k}/{total}] {id}: completed, test accuracy {acc:.4} ({:.1}s)", r.timings.total());
                }
                CellOutcome::Skipped(_) => println!("[{k}/{total}] {id}: already completed, skipped"),
                CellOutcome::Failed { error, .. } => println!("[{k}/{total}] {id}: FAILED: {error}"),
            }
        })
    });
    match result {
        Ok(outcomes) => {
            let failed = outcomes.iter().filter(|o| o.is_failed()).count();
            if failed > 0 {
                eprintln!("{failed} of {total} cells failed (rerun with --resume to retry them)");
                EXIT_FAILURE
            } else {
                EXIT_OK
            }
        }
        Err(e) => fail(&e),
    }
}

/// Records the effective config at the sweep root, refusing to mix results
/// from a different config into an existing sweep directory.
fn claim_sweep_dir(dir: &Path, text: &str) -> Result<(), i32> {
    let path = dir.join(SWEEP_CONFIG);
    match std::fs::read_to_string(&path) {
        Ok(existing) if existing == text => Ok(()),
        Ok(_) => {
            eprintln!(
                "config error: {} holds results of a different config; choose another name or output directory",
                dir.display()
            );
            Err(EXIT_INVALID)
        }
        Err(_) => std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(&path, text))
            .map_err(|e| {
                eprintln!("error: {}: {e}", path.display());
                EXIT_FAILURE
            }),
    }
}

fn cmd_report(sweep_dir: &Path) -> i32 {
    let (records, problems) = match report::load_sweep(sweep_dir) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    for p in &problems {
        eprintln!("warning: {p}");
    }
    if records.is_empty() {
        eprintln!("error: no completed runs under {}", sweep_dir.display());
        return EXIT_INVALID;
    }
    let agg = report::aggregate(&records);
    let cmp = report::compare(&records);
    let plot = report::plot_rows(&agg);
    for (name, res) in [
        ("aggregate.csv", report::write_csv(&sweep_dir.join("aggregate.csv"), &agg)),
        ("comparison.csv", report::write_csv(&sweep_dir.join("comparison.csv"), &cmp)),
        ("plot.csv", report::write_csv(&sweep_dir.join("plot.csv"), &plot)),
    ] {
        if let Err(e) = res {
            eprintln!("error: writing {name}: {e}");
            return EXIT_FAILURE;
        }
    }
    emit(&report::summary_text(&records, &cmp));
    emit(&format!(
        "wrote aggregate.csv, comparison.csv and plot.csv to {}\n",
        sweep_dir.display()
    ));
    EXIT_OK
}
