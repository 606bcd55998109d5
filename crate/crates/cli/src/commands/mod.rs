pub mod ablate;
pub mod corrupt;
pub mod eval;
pub mod gradcheck;
pub mod refine;
pub mod report;
pub mod synth;
pub mod train;

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;

use crate::failure::schema;
use crate::manifest::require;

/// Parses `X,Y,Z` into positive extents.
pub fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<_> = s.split(',').map(|p| p.trim().parse::<usize>()).collect();
    match parts.as_slice() {
        [Ok(x), Ok(y), Ok(z)] if *x > 0 && *y > 0 && *z > 0 => Ok([*x, *y, *z]),
        _ => Err(format!("expected three positive integers X,Y,Z, got {s:?}")),
    }
}

/// Reads a JSON config file, mapping parse failures to the schema class.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    require(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| schema(format!("{}: {e}", path.display())))
}

/// Copies a raw volume and its sidecar.
pub fn copy_volume(from: &Path, to: &Path) -> Result<()> {
    use airway_refine::volume::sidecar_path;
    for (a, b) in [(from.to_path_buf(), to.to_path_buf()), (sidecar_path(from), sidecar_path(to))] {
        fs::copy(&a, &b).with_context(|| format!("copying {} to {}", a.display(), b.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parse() {
        assert_eq!(parse_dims("48,32, 16"), Ok([48, 32, 16]));
        assert!(parse_dims("48,32").is_err());
        assert!(parse_dims("0,1,1").is_err());
    }
}
