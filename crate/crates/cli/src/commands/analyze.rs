//! `ckptmerge analyze` — delta MAV statistics and heatmap export.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use ckptmerge_core::delta::{
    delta_row_mavs, expert_weight, export_heatmap, heatmap, percentile_threshold, ExportFormat,
};
use ckptmerge_core::store::CheckpointReader;
use ckptmerge_core::topology::layer_count;
use ckptmerge_core::{Error, Result};

use crate::logging;
use crate::util::load_scheme;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatFlag {
    Csv,
    Json,
    Svg,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Base (pretrained) checkpoint.
    #[arg(long)]
    base: PathBuf,
    /// Fine-tuned checkpoint.
    #[arg(long)]
    ft: PathBuf,
    /// Row-MAV threshold for the grid (e.g. 1.9e-5). Required unless
    /// --percentile is given.
    #[arg(long, conflicts_with = "percentile")]
    threshold: Option<f32>,
    /// Pick the threshold as this percentile of all row MAVs instead.
    #[arg(long)]
    percentile: Option<f64>,
    /// Export format.
    #[arg(long, value_enum, default_value_t = FormatFlag::Csv)]
    format: FormatFlag,
    /// Output file for the grid export.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: AnalyzeArgs, scheme_path: Option<&Path>) -> Result<()> {
    let scheme = load_scheme(scheme_path)?;
    let base = CheckpointReader::open(&args.base)?;
    let ft = CheckpointReader::open(&args.ft)?;
    let layers = layer_count(&ft, &scheme)?;

    let stats = delta_row_mavs(&base, &ft, &scheme)?;
    for name in &stats.skipped {
        eprintln!("warning: skipping tensor {name:?} with rank outside {{1, 2}}");
    }

    let threshold = match (args.threshold, args.percentile) {
        (Some(t), None) => t,
        (None, Some(p)) => {
            let t = percentile_threshold(&stats, p)?;
            logging::event(
                "percentile-threshold",
                &[("percentile", &p.to_string()), ("threshold", &format!("{t:e}"))],
            );
            t
        }
        (None, None) => {
            return Err(Error::InvalidConfig(
                "pass --threshold <mav> or --percentile <p>".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    let grid = heatmap(&stats, threshold, layers)?;
    let format = match args.format {
        FormatFlag::Csv => ExportFormat::Csv,
        FormatFlag::Json => ExportFormat::Json,
        FormatFlag::Svg => ExportFormat::Svg,
    };
    export_heatmap(&grid, format, &args.out)?;

    println!(
        "layers={layers} rows={} aggregate_mav={:e} threshold={threshold:e}",
        stats.total_rows, stats.aggregate
    );
    match expert_weight(&stats) {
        Ok(w) => println!("expert_weight={w:e}"),
        Err(_) => println!("expert_weight=undefined (zero delta)"),
    }
    if !grid.missing.is_empty() {
        println!("missing_cells={}", grid.missing.len());
    }
    logging::event("analyzed", &[("out", &args.out.to_string_lossy())]);
    Ok(())
}
