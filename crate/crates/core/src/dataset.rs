//! Directory conventions.
//!
//! Files are paired across directories by a key derived from the file stem:
//! one leading role prefix (`img_`, `gt_`, `scores_`, `score_`, `pred_`,
//! `conf_`, `boxes_`, `masks_`, `mask_`) is stripped, so `img_000123.npy`,
//! `gt_000123.png` and `boxes_000123.json` all share the key `000123`. Stems
//! without a known prefix are their own key.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const ROLE_PREFIXES: &[&str] = &[
    "img_", "gt_", "scores_", "score_", "pred_", "conf_", "boxes_", "masks_", "mask_",
];

pub fn pairing_key(stem: &str) -> &str {
    ROLE_PREFIXES
        .iter()
        .find_map(|p| stem.strip_prefix(p).filter(|rest| !rest.is_empty()))
        .unwrap_or(stem)
}

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

/// Files (or, with `dirs`, subdirectories) of `dir`, keyed by pairing key.
pub fn index_dir(dir: &Path, exts: &[&str], dirs: bool) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let wanted = if dirs {
            path.is_dir()
        } else {
            path.is_file() && has_extension(&path, exts)
        };
        if !wanted {
            continue;
        }
        let name = if dirs { path.file_name() } else { path.file_stem() };
        let Some(stem) = name.and_then(|s| s.to_str()) else {
            continue;
        };
        let key = pairing_key(stem).to_owned();
        if let Some(prev) = out.insert(key.clone(), path.clone()) {
            return Err(Error::Input(format!(
                "{} and {} share the pairing key '{key}'",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Pairs score files (`.npy`) with label masks (`.png`/`.pgm`) by key.
/// Every file must find its partner.
pub fn pair_dirs(scores_dir: &Path, gt_dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let scores = index_dir(scores_dir, &["npy"], false)?;
    let gts = index_dir(gt_dir, &["png", "pgm"], false)?;
    if scores.is_empty() {
        return Err(Error::Input(format!("no inputs in {}", scores_dir.display())));
    }
    let unmatched: Vec<&str> = scores
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .chain(gts.keys().filter(|k| !scores.contains_key(*k)))
        .map(String::as_str)
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Input(format!("unmatched stems: {}", unmatched.join(", "))));
    }
    Ok(scores
        .into_iter()
        .map(|(k, s)| {
            let g = gts[&k].clone();
            (k, s, g)
        })
        .collect())
}
