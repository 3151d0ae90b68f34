//! `ckptmerge swap` — layer-swap two experts into one checkpoint.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use ckptmerge_core::merge::{NonLayerRouting, NormRouting, SwapConfig};
use ckptmerge_core::recipe::{MergeRecipe, Strategy, SwapParams};
use ckptmerge_core::Result;

use crate::util::{path_str, run_recipe};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormsFlag {
    FollowLayer,
    Average,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NonLayerFlag {
    Average,
    Task,
    Lang,
}

#[derive(Args)]
pub struct SwapArgs {
    /// Task expert checkpoint (middle layers).
    #[arg(long)]
    task: PathBuf,
    /// Language expert checkpoint (bottom/top layers).
    #[arg(long)]
    lang: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Bottom layers to swap in from the language expert.
    #[arg(long, default_value_t = 5)]
    bottom: usize,
    /// Top layers to swap in from the language expert.
    #[arg(long, default_value_t = 2)]
    top: usize,
    /// Transition layers above the bottom swap.
    #[arg(long, default_value_t = 0)]
    tb: usize,
    /// Transition layers below the top swap.
    #[arg(long, default_value_t = 0)]
    tu: usize,
    /// Task-expert weight in averaged tensors.
    #[arg(long, default_value_t = 1.0)]
    alpha_task: f32,
    /// Language-expert weight in averaged tensors.
    #[arg(long, default_value_t = 1.0)]
    alpha_lang: f32,
    /// Per-layer norm routing.
    #[arg(long, value_enum, default_value_t = NormsFlag::FollowLayer)]
    norms: NormsFlag,
    /// Routing for embeddings, final norm and output head.
    #[arg(long = "non-layer", value_enum, default_value_t = NonLayerFlag::Average)]
    non_layer: NonLayerFlag,
    /// Derive the alphas from each expert's aggregate delta MAV against
    /// --base.
    #[arg(long, requires = "base")]
    magnitude_alphas: bool,
    /// Base (pretrained) checkpoint for --magnitude-alphas.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Print the resolved recipe without executing.
    #[arg(long)]
    print_recipe: bool,
}

pub fn run(args: SwapArgs, scheme: Option<&Path>) -> Result<()> {
    let config = SwapConfig {
        bottom: args.bottom,
        top: args.top,
        lower_transition: args.tb,
        upper_transition: args.tu,
        alpha_task: args.alpha_task,
        alpha_lang: args.alpha_lang,
        norm_routing: match args.norms {
            NormsFlag::FollowLayer => NormRouting::FollowLayer,
            NormsFlag::Average => NormRouting::Average,
        },
        non_layer_routing: match args.non_layer {
            NonLayerFlag::Average => NonLayerRouting::Average,
            NonLayerFlag::Task => NonLayerRouting::FromTask,
            NonLayerFlag::Lang => NonLayerRouting::FromLang,
        },
    };

    if args.bottom == 0 && args.top == 0 && args.tb == 0 && args.tu == 0 {
        eprintln!("warning: no layers are swapped; merged transformer layers equal the task expert's");
    }

    let mut inputs: std::collections::BTreeMap<String, String> = [
        ("task".to_string(), path_str(&args.task)),
        ("lang".to_string(), path_str(&args.lang)),
    ]
    .into_iter()
    .collect();
    if let Some(base) = &args.base {
        inputs.insert("base".to_string(), path_str(base));
    }

    let recipe = MergeRecipe {
        strategy: Strategy::LayerSwap,
        inputs,
        params: serde_json::to_value(SwapParams {
            config,
            magnitude_alphas: args.magnitude_alphas,
        })
        .expect("params serialize"),
        output: path_str(&args.out),
        scheme: scheme.map(path_str),
    };
    run_recipe(&recipe, args.print_recipe)
}
