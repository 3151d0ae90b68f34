//! Shared flag parsing and recipe plumbing for the subcommands.

use std::path::Path;

use ckptmerge_core::recipe::MergeRecipe;
use ckptmerge_core::topology::NamingScheme;
use ckptmerge_core::{Error, Result};

use crate::logging;

/// Loads the scheme from `--scheme`/environment, falling back to the
/// built-in default.
pub fn load_scheme(path: Option<&Path>) -> Result<NamingScheme> {
    match path {
        Some(p) => NamingScheme::from_file(p),
        None => Ok(NamingScheme::default()),
    }
}

/// Parses `0-4,30-31` style layer lists into sorted indices.
pub fn parse_layer_ranges(text: &str) -> Result<Vec<usize>> {
    let mut layers = std::collections::BTreeSet::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let bad = || Error::InvalidConfig(format!("bad layer range {part:?} in {text:?}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let start: usize = a.trim().parse().map_err(|_| bad())?;
                let end: usize = b.trim().parse().map_err(|_| bad())?;
                if end < start {
                    return Err(bad());
                }
                layers.extend(start..=end);
            }
            None => {
                layers.insert(part.parse().map_err(|_| bad())?);
            }
        }
    }
    if layers.is_empty() {
        return Err(Error::InvalidConfig(format!("empty layer list {text:?}")));
    }
    Ok(layers.into_iter().collect())
}

/// Parses `2,1` style weight lists.
pub fn parse_weights(text: &str) -> Result<Vec<f32>> {
    text.split(',')
        .map(|w| {
            w.trim()
                .parse::<f32>()
                .map_err(|_| Error::InvalidConfig(format!("bad weight {w:?} in {text:?}")))
        })
        .collect()
}

/// Prints the fully resolved recipe, then executes it unless `print_only`.
/// Every run logs its resolved parameter set before touching outputs.
pub fn run_recipe(recipe: &MergeRecipe, print_only: bool) -> Result<()> {
    let resolved = recipe.resolve()?;
    println!("{}", resolved.to_json());
    if print_only {
        return Ok(());
    }
    logging::event(
        "execute",
        &[
            ("strategy", &format!("{:?}", resolved.strategy)),
            ("output", &resolved.output),
        ],
    );
    for note in resolved.execute()? {
        println!("{note}");
    }
    logging::event("done", &[("output", &resolved.output)]);
    Ok(())
}

pub fn path_str(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_ranges_parse() {
        assert_eq!(parse_layer_ranges("0-4,30-31").unwrap(), vec![0, 1, 2, 3, 4, 30, 31]);
        assert_eq!(parse_layer_ranges("7").unwrap(), vec![7]);
        assert_eq!(parse_layer_ranges("3-3,1").unwrap(), vec![1, 3]);
        assert!(parse_layer_ranges("4-2").is_err());
        assert!(parse_layer_ranges("a-b").is_err());
        assert!(parse_layer_ranges("").is_err());
    }

    #[test]
    fn weights_parse() {
        assert_eq!(parse_weights("2,1").unwrap(), vec![2.0, 1.0]);
        assert!(parse_weights("1,x").is_err());
    }
}
