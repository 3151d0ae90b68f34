//! `ckptmerge diff` — per-tensor max absolute difference.

use std::path::PathBuf;

use clap::Args;

use ckptmerge_core::store::{diff_max, CheckpointReader};
use ckptmerge_core::Result;

#[derive(Args)]
pub struct DiffArgs {
    a: PathBuf,
    b: PathBuf,
    /// Only print tensors that differ.
    #[arg(long)]
    nonzero_only: bool,
}

pub fn run(args: DiffArgs) -> Result<()> {
    let a = CheckpointReader::open(&args.a)?;
    let b = CheckpointReader::open(&args.b)?;
    let diffs = diff_max(&a, &b)?;
    let mut max = 0f32;
    for (name, d) in &diffs {
        if *d > max {
            max = *d;
        }
        if !args.nonzero_only || *d != 0.0 {
            println!("{name} {d:e}");
        }
    }
    println!("max {max:e} over {} tensors", diffs.len());
    Ok(())
}
