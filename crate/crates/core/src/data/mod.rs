//! Case ingestion from image directory trees.
//!
//! Expected layout: `root/covid/<case>/<NNN>.png` and
//! `root/non-covid/<case>/<NNN>.png`. Slices are ordered by the numeric
//! value of their filename stem, so enumeration order never matters.

pub mod preprocess;
pub mod synth;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
    Unknown,
}

/// One CT scan: an ordered stack of grayscale slice images.
#[derive(Debug, Clone)]
pub struct ScanCase {
    pub case_id: String,
    pub label: Label,
    pub slice_paths: Vec<PathBuf>,
}

impl ScanCase {
    pub fn len(&self) -> usize {
        self.slice_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slice_paths.is_empty()
    }
}

const IMAGE_EXTENSIONS: [&str; 2] = ["png", "PNG"];

/// Read one case directory: every numerically named image file, in numeric
/// order. Non-numeric or non-image entries are skipped with a warning.
pub fn load_case_dir(dir: &Path, label: Label) -> Result<ScanCase> {
    let case_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut slices: Vec<(usize, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let ext_ok = path
            .extension()
            .map(|e| IMAGE_EXTENSIONS.iter().any(|x| e == *x))
            .unwrap_or(false);
        if !ext_ok {
            log::warn!("case {case_id}: skipping non-image file {}", path.display());
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        match stem.parse::<usize>() {
            Ok(index) => slices.push((index, path)),
            Err(_) => {
                log::warn!("case {case_id}: slice name {stem:?} is not numeric, skipping");
            }
        }
    }
    slices.sort();
    Ok(ScanCase {
        case_id,
        label,
        slice_paths: slices.into_iter().map(|(_, p)| p).collect(),
    })
}

fn load_class_dir(class_dir: &Path, label: Label, out: &mut Vec<ScanCase>) -> Result<()> {
    let entries = std::fs::read_dir(class_dir).map_err(|e| Error::io(class_dir, e))?;
    let mut dirs: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(class_dir, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    for dir in dirs {
        let case = load_case_dir(&dir, label)?;
        if case.is_empty() {
            log::warn!("case {}: no usable slices, skipping case", case.case_id);
            continue;
        }
        out.push(case);
    }
    Ok(())
}

/// Load every labeled case under `root/covid` and `root/non-covid`,
/// deterministically ordered by (class, case id).
pub fn load_dataset(root: &Path) -> Result<Vec<ScanCase>> {
    let covid = root.join("covid");
    let non_covid = root.join("non-covid");
    if !covid.is_dir() || !non_covid.is_dir() {
        return Err(Error::Config(format!(
            "dataset root {} must contain covid/ and non-covid/ directories",
            root.display()
        )));
    }
    let mut cases = Vec::new();
    load_class_dir(&covid, Label::Positive, &mut cases)?;
    load_class_dir(&non_covid, Label::Negative, &mut cases)?;
    Ok(cases)
}
