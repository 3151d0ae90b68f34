//! `ckptmerge report` — per-tensor provenance of a merged checkpoint.

use std::path::{Path, PathBuf};

use clap::Args;

use ckptmerge_core::merge::{provenance, SwapConfig};
use ckptmerge_core::store::CheckpointReader;
use ckptmerge_core::Result;

use crate::util::load_scheme;

#[derive(Args)]
pub struct ReportArgs {
    /// The merged checkpoint to audit.
    #[arg(long)]
    merged: PathBuf,
    /// Task expert it was built from.
    #[arg(long)]
    task: PathBuf,
    /// Language expert it was built from.
    #[arg(long)]
    lang: PathBuf,
    #[arg(long, default_value_t = 5)]
    bottom: usize,
    #[arg(long, default_value_t = 2)]
    top: usize,
    #[arg(long, default_value_t = 0)]
    tb: usize,
    #[arg(long, default_value_t = 0)]
    tu: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha_task: f32,
    #[arg(long, default_value_t = 1.0)]
    alpha_lang: f32,
}

pub fn run(args: ReportArgs, scheme_path: Option<&Path>) -> Result<()> {
    let scheme = load_scheme(scheme_path)?;
    let merged = CheckpointReader::open(&args.merged)?;
    let task = CheckpointReader::open(&args.task)?;
    let lang = CheckpointReader::open(&args.lang)?;
    let cfg = SwapConfig {
        bottom: args.bottom,
        top: args.top,
        lower_transition: args.tb,
        upper_transition: args.tu,
        alpha_task: args.alpha_task,
        alpha_lang: args.alpha_lang,
        ..SwapConfig::default()
    };

    let report = provenance(&merged, &task, &lang, &cfg, &scheme)?;
    println!("{:<56} {:<16} {}", "tensor", "source", "deviation");
    for (name, entry) in &report.entries {
        let marker = if entry.deviation != 0.0 { " !" } else { "" };
        println!(
            "{:<56} {:<16} {:e}{marker}",
            name, entry.label.to_string(), entry.deviation
        );
    }
    let deviating = report.deviating();
    if deviating.is_empty() {
        println!("all tensors match their expected sources");
    } else {
        println!("{} tensor(s) deviate; max {:e}", deviating.len(), report.max_deviation());
    }
    Ok(())
}
