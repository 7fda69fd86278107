//! Locating WAV files and feature caches on disk.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cryecapa::audio::{cache_path, CACHE_EXTENSION};
use cryecapa::train::DatasetEntry;
use cryecapa::EmotionLabel;

pub const MANIFEST_NAME: &str = "manifest.csv";

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && has_extension(&path, ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// `path,label` lines. Blank lines, `#` comments and a `path,label` header
/// are skipped; relative paths resolve against `base`.
pub fn read_manifest(manifest: &Path, base: &Path) -> Result<Vec<DatasetEntry>> {
    let text = fs::read_to_string(manifest).with_context(|| format!("cannot read manifest {}", manifest.display()))?;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.eq_ignore_ascii_case("path,label") {
            continue;
        }
        let (p, l) = line
            .rsplit_once(',')
            .with_context(|| format!("{} line {}: expected 'path,label'", manifest.display(), n + 1))?;
        let label: EmotionLabel = l.parse().with_context(|| format!("{} line {}", manifest.display(), n + 1))?;
        let p = PathBuf::from(p.trim());
        let path = if p.is_absolute() { p } else { base.join(p) };
        out.push(DatasetEntry { path, label });
    }
    Ok(out)
}

/// WAV files under `<root>/<label>/`, or listed by a manifest when one is
/// given or `<root>/manifest.csv` exists.
pub fn discover_wavs(root: &Path, manifest: Option<&Path>) -> Result<Vec<DatasetEntry>> {
    if !root.is_dir() {
        bail!("dataset root {} does not exist or is not a directory", root.display());
    }
    if let Some(m) = manifest {
        let base = m.parent().unwrap_or(Path::new("."));
        return read_manifest(m, base);
    }
    let default_manifest = root.join(MANIFEST_NAME);
    if default_manifest.is_file() {
        return read_manifest(&default_manifest, root);
    }
    let mut out = Vec::new();
    for label in EmotionLabel::ALL {
        let dir = root.join(label.name());
        if dir.is_dir() {
            out.extend(sorted_files(&dir, "wav")?.into_iter().map(|path| DatasetEntry { path, label }));
        }
    }
    Ok(out)
}

/// Cache file for each entry. Two clips with the same stem and label would
/// overwrite each other, so later ones get a `_2`, `_3`, ... suffix.
pub fn cache_targets(entries: &[DatasetEntry], cache_dir: &Path) -> Vec<PathBuf> {
    let mut taken = HashSet::new();
    entries
        .iter()
        .map(|e| {
            let stem = e.path.file_stem().map_or_else(|| "clip".to_string(), |s| s.to_string_lossy().into_owned());
            let mut candidate = stem.clone();
            let mut n = 1;
            while !taken.insert((e.label, candidate.clone())) {
                n += 1;
                candidate = format!("{stem}_{n}");
            }
            cache_path(cache_dir, e.label.name(), &candidate)
        })
        .collect()
}

/// Every cached feature file, grouped by label, in sorted order.
pub fn discover_cache(cache_dir: &Path) -> Result<Vec<DatasetEntry>> {
    if !cache_dir.is_dir() {
        bail!("feature cache {} does not exist; run `cryecapa features` first", cache_dir.display());
    }
    let mut out = Vec::new();
    for label in EmotionLabel::ALL {
        let dir = cache_dir.join(label.name());
        if dir.is_dir() {
            out.extend(sorted_files(&dir, CACHE_EXTENSION)?.into_iter().map(|path| DatasetEntry { path, label }));
        }
    }
    if out.is_empty() {
        bail!("feature cache {} holds no .{CACHE_EXTENSION} files", cache_dir.display());
    }
    Ok(out)
}
