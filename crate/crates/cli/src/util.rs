//! Flag parsing helpers and directory loading shared across subcommands.

use slicevol_core::io::{label_paths, load_labels, load_volume, volume_paths};
use slicevol_core::{Axis, Error, LabelMap, Result, Volume};
use std::path::{Path, PathBuf};

pub fn parse_dims(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::validation(format!(
            "dimensions must be D,H,W, got {s:?}"
        )));
    }
    let mut dims = [0usize; 3];
    for (d, p) in dims.iter_mut().zip(&parts) {
        *d = p
            .parse()
            .map_err(|_| Error::validation(format!("bad dimension {p:?} in {s:?}")))?;
    }
    Ok(dims)
}

pub fn parse_axis(s: &str) -> Result<Axis> {
    match s {
        "z" | "Z" => Ok(Axis::Z),
        "y" | "Y" => Ok(Axis::Y),
        "x" | "X" => Ok(Axis::X),
        _ => Err(Error::validation(format!(
            "axis must be z, y, or x, got {s:?}"
        ))),
    }
}

/// Loads every .svol in the directory in sorted order.
pub fn load_volume_dir(dir: &Path) -> Result<Vec<(PathBuf, Volume<f32>)>> {
    let paths = volume_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::validation(format!(
            "no .svol volumes in {}",
            dir.display()
        )));
    }
    paths
        .into_iter()
        .map(|p| load_volume(&p).map(|v| (p, v)))
        .collect()
}

/// Loads every .slab in the directory in sorted order.
pub fn load_label_dir(dir: &Path) -> Result<Vec<(PathBuf, LabelMap)>> {
    let paths = label_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::validation(format!(
            "no .slab label maps in {}",
            dir.display()
        )));
    }
    paths
        .into_iter()
        .map(|p| load_labels(&p).map(|m| (p, m)))
        .collect()
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string())
}

pub fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Formats a score exactly (shortest round-trip decimal), nan for non-finite.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "nan".to_string()
    }
}

/// Sample standard error of the mean; 0 for a single observation.
pub fn stderr_of(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (var / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_and_axis_parse() {
        assert_eq!(parse_dims("4, 5,6").unwrap(), [4, 5, 6]);
        assert!(parse_dims("4,5").is_err());
        assert!(parse_dims("4,5,x").is_err());
        assert!(matches!(parse_axis("y").unwrap(), Axis::Y));
        assert!(parse_axis("w").is_err());
    }

    #[test]
    fn stderr_matches_hand_value() {
        // values 1,2,3: sample var 1, sem = sqrt(1/3)
        let se = stderr_of(&[1.0, 2.0, 3.0]);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(stderr_of(&[5.0]), 0.0);
    }
}
