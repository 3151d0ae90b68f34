//! `ckptmerge sparsify` — row-threshold keep/revert of fine-tuning updates.

use std::path::{Path, PathBuf};

use clap::Args;

use ckptmerge_core::recipe::{MergeRecipe, SparsifyParams, Strategy};
use ckptmerge_core::Result;

use crate::util::{path_str, run_recipe};

#[derive(Args)]
pub struct SparsifyArgs {
    /// Base (pretrained) checkpoint rows revert to.
    #[arg(long)]
    base: PathBuf,
    /// Fine-tuned checkpoint.
    #[arg(long)]
    ft: PathBuf,
    /// Rows with delta MAV strictly above this keep the update.
    #[arg(long)]
    threshold: f32,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Print the resolved recipe without executing.
    #[arg(long)]
    print_recipe: bool,
}

pub fn run(args: SparsifyArgs, scheme: Option<&Path>) -> Result<()> {
    let recipe = MergeRecipe {
        strategy: Strategy::Sparsify,
        inputs: [
            ("base".to_string(), path_str(&args.base)),
            ("ft".to_string(), path_str(&args.ft)),
        ]
        .into_iter()
        .collect(),
        params: serde_json::to_value(SparsifyParams {
            threshold: args.threshold,
        })
        .expect("params serialize"),
        output: path_str(&args.out),
        scheme: scheme.map(path_str),
    };
    run_recipe(&recipe, args.print_recipe)
}
