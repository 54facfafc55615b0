pub mod eval;
pub mod gen_data;
pub mod infer;
pub mod repro;
pub mod train;

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use lesion_cascade::data::{load_dataset, PatientSequence, DATASET_MANIFEST};
use lesion_cascade::nn::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const SPLIT_FILE: &str = "split.json";

/// Patient-level train/test assignment written next to a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientSplit {
    pub seed: u64,
    pub test_patients_per_category: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Subset {
    Train,
    Test,
    All,
}

pub fn require(path: &Path, what: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing { what, path: path.to_path_buf() }.into())
    }
}

/// Patients of a dataset directory, checked against the configured image size.
pub fn load_patients(dir: &Path, cfg: &RunConfig) -> Result<Vec<PatientSequence>> {
    require(&dir.join(DATASET_MANIFEST), "dataset manifest")?;
    let patients = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let side = cfg.pipeline.synth.image_size as u32;
    if let Some(f) = patients.iter().flat_map(|p| &p.frames).find(|f| f.image.dimensions() != (side, side)) {
        return Err(CliError::Conflict(format!(
            "frame {} is {:?} but the config expects {side}x{side} images",
            f.frame_id,
            f.image.dimensions()
        ))
        .into());
    }
    Ok(patients)
}

pub fn read_split(dir: &Path) -> Result<PatientSplit> {
    let path = dir.join(SPLIT_FILE);
    require(&path, "patient split")?;
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Patients of `subset`, in dataset order.
pub fn select(patients: Vec<PatientSequence>, split: &PatientSplit, subset: Subset) -> Vec<PatientSequence> {
    patients
        .into_iter()
        .filter(|p| match subset {
            Subset::Train => split.train.contains(&p.patient_id),
            Subset::Test => split.test.contains(&p.patient_id),
            Subset::All => true,
        })
        .collect()
}

pub fn load_checkpoint(path: &Path, what: &'static str) -> Result<Checkpoint> {
    require(path, what)?;
    Ok(Checkpoint::load(path)?)
}
