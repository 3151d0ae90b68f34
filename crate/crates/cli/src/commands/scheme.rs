//! `ckptmerge scheme` — print the active naming scheme.

use std::path::Path;

use clap::Args;

use ckptmerge_core::Result;

use crate::util::load_scheme;

#[derive(Args)]
pub struct SchemeArgs {}

pub fn run(_args: SchemeArgs, scheme_path: Option<&Path>) -> Result<()> {
    let scheme = load_scheme(scheme_path)?;
    println!("{}", scheme.to_json());
    Ok(())
}
