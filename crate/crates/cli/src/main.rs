//! `ckptmerge` — compose transformer checkpoints post hoc: swap layers,
//! soup experts, TIES-merge, sparsify fine-tuning updates, and analyze
//! where a fine-tune actually changed the model.

mod commands;
mod logging;
mod util;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ckptmerge_core::Error;

#[derive(Parser)]
#[command(name = "ckptmerge", version, about, max_term_width = 100)]
struct Cli {
    /// Worker threads for per-tensor math (default: hardware parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Naming-scheme JSON file (default: built-in Llama-style scheme, or
    /// the CKPTMERGE_SCHEME environment variable).
    #[arg(long, global = true)]
    scheme: Option<std::path::PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge two experts by swapping bottom/top transformer layers.
    Swap(commands::swap::SwapArgs),
    /// Elementwise (weighted) average of two or more experts.
    Soup(commands::soup::SoupArgs),
    /// TIES-merge experts over a shared base checkpoint.
    Ties(commands::ties::TiesArgs),
    /// Row-level delta analysis and heatmap export.
    Analyze(commands::analyze::AnalyzeArgs),
    /// Keep or revert fine-tuned rows by delta-MAV threshold.
    Sparsify(commands::sparsify::SparsifyArgs),
    /// Revert whole transformer layers to base values.
    Revert(commands::revert::RevertArgs),
    /// Audit which expert each merged tensor came from.
    Report(commands::report::ReportArgs),
    /// Per-tensor max absolute difference between two checkpoints.
    Diff(commands::diff::DiffArgs),
    /// Generate a deterministic synthetic checkpoint triple.
    Fixture(commands::fixture::FixtureArgs),
    /// Print the active naming scheme as JSON.
    Scheme(commands::scheme::SchemeArgs),
    /// Execute a merge recipe file.
    Run(commands::run::RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        // A second init attempt (e.g. in tests) is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    let scheme_path = cli
        .scheme
        .clone()
        .or_else(|| std::env::var_os("CKPTMERGE_SCHEME").map(Into::into));

    let result = match cli.command {
        Command::Swap(args) => commands::swap::run(args, scheme_path.as_deref()),
        Command::Soup(args) => commands::soup::run(args, scheme_path.as_deref()),
        Command::Ties(args) => commands::ties::run(args, scheme_path.as_deref()),
        Command::Analyze(args) => commands::analyze::run(args, scheme_path.as_deref()),
        Command::Sparsify(args) => commands::sparsify::run(args, scheme_path.as_deref()),
        Command::Revert(args) => commands::revert::run(args, scheme_path.as_deref()),
        Command::Report(args) => commands::report::run(args, scheme_path.as_deref()),
        Command::Diff(args) => commands::diff::run(args),
        Command::Fixture(args) => commands::fixture::run(args),
        Command::Scheme(args) => commands::scheme::run(args, scheme_path.as_deref()),
        Command::Run(args) => commands::run::run(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            logging::event("error", &[("message", &err.to_string())]);
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Exit codes: 2 usage/config, 3 data/compatibility, 4 I/O.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::MalformedScheme(_) => 2,
        Error::Io(_) => 4,
        _ => 3,
    }
}
