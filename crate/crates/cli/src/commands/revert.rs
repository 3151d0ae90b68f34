//! `ckptmerge revert` — revert whole transformer layers to base values.

use std::path::{Path, PathBuf};

use clap::Args;

use ckptmerge_core::recipe::{MergeRecipe, RevertParams, Strategy};
use ckptmerge_core::Result;

use crate::util::{parse_layer_ranges, path_str, run_recipe};

#[derive(Args)]
pub struct RevertArgs {
    /// Fine-tuned checkpoint.
    #[arg(long)]
    ft: PathBuf,
    /// Base (pretrained) checkpoint supplying the reverted layers.
    #[arg(long)]
    base: PathBuf,
    /// Layers to revert, e.g. "0-4,30-31".
    #[arg(long)]
    layers: String,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Print the resolved recipe without executing.
    #[arg(long)]
    print_recipe: bool,
}

pub fn run(args: RevertArgs, scheme: Option<&Path>) -> Result<()> {
    let layers = parse_layer_ranges(&args.layers)?;
    let recipe = MergeRecipe {
        strategy: Strategy::RevertLayers,
        inputs: [
            ("base".to_string(), path_str(&args.base)),
            ("ft".to_string(), path_str(&args.ft)),
        ]
        .into_iter()
        .collect(),
        params: serde_json::to_value(RevertParams { layers }).expect("params serialize"),
        output: path_str(&args.out),
        scheme: scheme.map(path_str),
    };
    run_recipe(&recipe, args.print_recipe)
}
