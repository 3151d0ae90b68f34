//! `ckptmerge fixture` — deterministic synthetic checkpoint triples.

use std::path::PathBuf;

use clap::{Args, ValueEnum};

use ckptmerge_core::fixture::{write_fixture_triple, FixtureSpec};
use ckptmerge_core::store::DType;
use ckptmerge_core::Result;

use crate::logging;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DTypeFlag {
    F32,
    F16,
    Bf16,
}

#[derive(Args)]
pub struct FixtureArgs {
    /// RNG seed; the triple is reproducible given (seed, layers, hidden).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Transformer layer count.
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// Hidden size (norm length, matrix column count).
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    /// Attention projection rows (default: hidden).
    #[arg(long)]
    proj: Option<usize>,
    /// Feed-forward inner dimension (default: 2×hidden).
    #[arg(long)]
    ffn: Option<usize>,
    /// Vocabulary rows (default: 4×hidden).
    #[arg(long)]
    vocab: Option<usize>,
    /// Storage dtype.
    #[arg(long, value_enum, default_value_t = DTypeFlag::F32)]
    dtype: DTypeFlag,
    /// Directory for pre/task/lang.safetensors.
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run(args: FixtureArgs) -> Result<()> {
    let mut spec = FixtureSpec::new(args.seed, args.layers, args.hidden);
    if let Some(proj) = args.proj {
        spec.proj = proj;
    }
    if let Some(ffn) = args.ffn {
        spec.ffn = ffn;
    }
    if let Some(vocab) = args.vocab {
        spec.vocab = vocab;
    }
    spec.dtype = match args.dtype {
        DTypeFlag::F32 => DType::F32,
        DTypeFlag::F16 => DType::F16,
        DTypeFlag::Bf16 => DType::BF16,
    };

    std::fs::create_dir_all(&args.out_dir)?;
    let paths = write_fixture_triple(&spec, &args.out_dir)?;
    for path in &paths {
        println!("{}", path.display());
    }
    logging::event(
        "fixture",
        &[
            ("seed", &spec.seed.to_string()),
            ("layers", &spec.layers.to_string()),
            ("hidden", &spec.hidden.to_string()),
            ("dtype", spec.dtype.as_str()),
        ],
    );
    Ok(())
}
