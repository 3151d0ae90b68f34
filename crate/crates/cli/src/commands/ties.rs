//! `ckptmerge ties` — TIES-merge experts over a base checkpoint.

use std::path::{Path, PathBuf};

use clap::Args;

use ckptmerge_core::merge::TiesConfig;
use ckptmerge_core::recipe::{MergeRecipe, Strategy};
use ckptmerge_core::Result;

use crate::util::{path_str, run_recipe};

#[derive(Args)]
pub struct TiesArgs {
    /// Expert checkpoints (one or more).
    #[arg(required = true, num_args = 1..)]
    experts: Vec<PathBuf>,
    /// Base (pretrained) checkpoint the task vectors are taken against.
    #[arg(long)]
    base: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Fraction of delta entries kept per task vector, in (0, 1].
    #[arg(long, default_value_t = 0.2)]
    density: f64,
    /// Rescale of the merged task vector.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Print the resolved recipe without executing.
    #[arg(long)]
    print_recipe: bool,
}

pub fn run(args: TiesArgs, scheme: Option<&Path>) -> Result<()> {
    let mut inputs: std::collections::BTreeMap<String, String> = args
        .experts
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("expert{i}"), path_str(p)))
        .collect();
    inputs.insert("base".to_string(), path_str(&args.base));

    let recipe = MergeRecipe {
        strategy: Strategy::Ties,
        inputs,
        params: serde_json::to_value(TiesConfig {
            density: args.density,
            lambda: args.lambda,
        })
        .expect("params serialize"),
        output: path_str(&args.out),
        scheme: scheme.map(path_str),
    };
    run_recipe(&recipe, args.print_recipe)
}
