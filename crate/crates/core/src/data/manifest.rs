use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::voc::{load_voc_frame, write_voc_frame};
use super::{Object, PatientLabel, PatientSequence};
use crate::{Error, Result};

pub const DATASET_MANIFEST: &str = "dataset.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_id: String,
    pub image: String,
    pub annotation: String,
    pub objects: Vec<Object>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientEntry {
    pub patient_id: String,
    pub label: PatientLabel,
    pub frames: Vec<FrameEntry>,
}

/// Patients, frames and labels of a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: Option<u64>,
    pub patients: Vec<PatientEntry>,
}

fn slash(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Writes PNG images, VOC annotations and `dataset.json` under `dir`.
pub fn write_dataset(dir: &Path, patients: &[PatientSequence], seed: Option<u64>) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let patients = patients
        .par_iter()
        .map(|p| {
            let frames = p
                .frames
                .iter()
                .map(|f| {
                    let (img, xml) = write_voc_frame(dir, f)?;
                    Ok(FrameEntry {
                        frame_id: f.frame_id.clone(),
                        image: slash(&img),
                        annotation: slash(&xml),
                        objects: f.objects.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PatientEntry { patient_id: p.patient_id.clone(), label: p.label, frames })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { seed, patients };
    let path = dir.join(DATASET_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(DATASET_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads patients in manifest order; annotations come from the XML files.
pub fn load_dataset(dir: &Path) -> Result<Vec<PatientSequence>> {
    let manifest = read_manifest(dir)?;
    manifest
        .patients
        .par_iter()
        .map(|p| {
            let frames = p
                .frames
                .iter()
                .map(|f| {
                    let mut frame = load_voc_frame(dir, &dir.join(&f.annotation))?;
                    frame.frame_id = f.frame_id.clone();
                    frame.patient_id = p.patient_id.clone();
                    Ok(frame)
                })
                .collect::<Result<Vec<_>>>()?;
            let seq = PatientSequence { patient_id: p.patient_id.clone(), label: p.label, frames };
            seq.validate()?;
            Ok(seq)
        })
        .collect()
}
