//! The model JSON format: a fitted tree + partition with enough context to
//! classify new curves, plus an echo of the configuration that produced it.
//!
//! Floating-point values survive the JSON round trip exactly, so a saved
//! and reloaded model predicts bit-for-bit like the in-memory one.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{bail, Context, Result};
use fcubt_core::{FcubtConfig, FcubtFit, SmootherConfig};
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

/// Preprocessing echo stored with the model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreprocessEcho {
    /// Raw values were interpolated instead of smoothed.
    pub noiseless: bool,
    /// Smoother settings (one per component) when smoothing was applied.
    pub smoothers: Option<Vec<SmootherConfig>>,
}

#[derive(Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub seed: u64,
    pub config: FcubtConfig,
    pub preprocess: PreprocessEcho,
    pub fit: FcubtFit,
}

pub fn save(path: &Path, model: &ModelFile) -> Result<()> {
    let file = File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    serde_json::to_writer(BufWriter::new(file), model)
        .with_context(|| format!("cannot serialize model to {}", path.display()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelFile> {
    let file = File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let model: ModelFile = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("cannot parse model file {}", path.display()))?;
    if model.format_version != FORMAT_VERSION {
        bail!(
            "model format version {} is not supported (expected {FORMAT_VERSION})",
            model.format_version
        );
    }
    Ok(model)
}
