use std::path::Path;

use anyhow::Result;
use lesion_cascade::cascade::split_patients;
use lesion_cascade::data::{generate_dataset, write_dataset};
use log::info;

use super::{PatientSplit, SPLIT_FILE};
use crate::config::RunConfig;
use crate::manifest::{RunDir, RunManifest};

/// Synthetic patients as PNG + VOC XML, the dataset manifest and the
/// patient-level train/test split.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let run = RunDir::create(out, "gen-data", cfg)?;
    let p = &cfg.pipeline;
    let patients = generate_dataset(&p.synth)?;
    info!(
        "generated {} patients, {} frames",
        patients.len(),
        patients.iter().map(|p| p.frames.len()).sum::<usize>()
    );
    write_dataset(&run.dir, &patients, Some(cfg.seed))?;
    let (train, test) = split_patients(patients, p.test_patients_per_category, cfg.seed)?;
    let split = PatientSplit {
        seed: cfg.seed,
        test_patients_per_category: p.test_patients_per_category,
        train: train.iter().map(|p| p.patient_id.clone()).collect(),
        test: test.iter().map(|p| p.patient_id.clone()).collect(),
    };
    run.write_json(SPLIT_FILE, &split)?;
    run.finish()
}
