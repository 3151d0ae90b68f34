//! `ckptmerge run` — execute a merge recipe file.

use std::path::PathBuf;

use clap::Args;

use ckptmerge_core::recipe::MergeRecipe;
use ckptmerge_core::Result;

use crate::util::run_recipe;

#[derive(Args)]
pub struct RunArgs {
    /// Recipe JSON file.
    recipe: PathBuf,
    /// Print the resolved recipe without executing.
    #[arg(long)]
    print_recipe: bool,
}

pub fn run(args: RunArgs) -> Result<()> {
    let recipe = MergeRecipe::from_file(&args.recipe)?;
    run_recipe(&recipe, args.print_recipe)
}
