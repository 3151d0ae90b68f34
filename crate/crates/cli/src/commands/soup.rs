//! `ckptmerge soup` — average two or more experts.

use std::path::{Path, PathBuf};

use clap::Args;

use ckptmerge_core::recipe::{MergeRecipe, SoupParams, Strategy};
use ckptmerge_core::{Error, Result};

use crate::util::{parse_weights, path_str, run_recipe};

#[derive(Args)]
pub struct SoupArgs {
    /// Expert checkpoints to soup (two or more).
    #[arg(required = true, num_args = 1..)]
    experts: Vec<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated weights, one per expert (default: uniform).
    #[arg(long, conflicts_with = "mav_weighted")]
    weights: Option<String>,
    /// Weight each expert by the inverse of its aggregate delta MAV
    /// against --base.
    #[arg(long, requires = "base")]
    mav_weighted: bool,
    /// Base (pretrained) checkpoint for --mav-weighted.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Print the resolved recipe without executing.
    #[arg(long)]
    print_recipe: bool,
}

pub fn run(args: SoupArgs, scheme: Option<&Path>) -> Result<()> {
    if args.experts.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "soup needs at least two experts, got {}",
            args.experts.len()
        )));
    }
    let mut inputs: std::collections::BTreeMap<String, String> = args
        .experts
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("expert{i}"), path_str(p)))
        .collect();

    let recipe = if args.mav_weighted {
        let base = args.base.as_ref().expect("clap enforces --base");
        inputs.insert("base".to_string(), path_str(base));
        MergeRecipe {
            strategy: Strategy::MavSoup,
            inputs,
            params: serde_json::Value::Null,
            output: path_str(&args.out),
            scheme: scheme.map(path_str),
        }
    } else {
        let weights = args.weights.as_deref().map(parse_weights).transpose()?;
        MergeRecipe {
            strategy: Strategy::Soup,
            inputs,
            params: serde_json::to_value(SoupParams { weights }).expect("params serialize"),
            output: path_str(&args.out),
            scheme: scheme.map(path_str),
        }
    };
    run_recipe(&recipe, args.print_recipe)
}
