use std::path::Path;

use anyhow::Result;
use image::{imageops, Rgb, RgbImage};
use lesion_cascade::cascade::{run_sequences, IdentityRecognizer, NetRecognizer, SequenceResult};
use lesion_cascade::data::{AnnotatedFrame, ClassLabel, PatientSequence};
use lesion_cascade::geometry::{BBox, Detection};
use lesion_cascade::models::{Detector, RecognitionNet};
use lesion_cascade::seed::stream_rng;
use log::info;
use serde::{Deserialize, Serialize};

use super::{load_checkpoint, load_patients, read_split, select, Subset};
use crate::config::RunConfig;
use crate::manifest::{RunDir, RunManifest};

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const DETECTION_ONLY: &str = "detection_only";
pub const CASCADE: &str = "cascade";
pub const ORACLE: &str = "oracle";

const OVERLAY_SCALE: u32 = 4;

/// One line of the detections file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub pipeline: String,
    pub patient_id: String,
    pub frame_id: String,
    pub proposals: Vec<BBox>,
    pub detections: Vec<Detection>,
}

pub struct InferArgs<'a> {
    pub data: &'a Path,
    pub detector: Option<&'a Path>,
    pub recognizer: Option<&'a Path>,
    pub subset: Subset,
    pub oracle: bool,
    pub overlays: bool,
}

fn records(pipeline: &str, results: &[SequenceResult]) -> Vec<FrameRecord> {
    results
        .iter()
        .flat_map(|s| {
            s.frames.iter().map(|f| FrameRecord {
                pipeline: pipeline.into(),
                patient_id: s.patient_id.clone(),
                frame_id: f.frame_id.clone(),
                proposals: f.proposals.iter().map(|p| p.bbox).collect(),
                detections: f.detections.clone(),
            })
        })
        .collect()
}

/// Ground truth replayed as output: space-occupying objects are the
/// proposals and every object outside the dropped labels is a detection.
fn oracle_records(patients: &[PatientSequence], drop: &[ClassLabel]) -> Vec<FrameRecord> {
    patients
        .iter()
        .flat_map(|p| {
            p.frames.iter().map(|f| FrameRecord {
                pipeline: ORACLE.into(),
                patient_id: p.patient_id.clone(),
                frame_id: f.frame_id.clone(),
                proposals: f.objects.iter().filter(|o| o.label.is_positive()).map(|o| o.bbox).collect(),
                detections: f
                    .objects
                    .iter()
                    .filter(|o| !drop.contains(&o.label))
                    .map(|o| Detection { bbox: o.bbox, label: o.label, score: 1.0 })
                    .collect(),
            })
        })
        .collect()
}

fn draw_box(img: &mut RgbImage, b: &BBox, scale: u32, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    let clamp = |v: f64, hi: u32| ((v * scale as f64).round().max(0.0) as u32).min(hi - 1);
    let (x0, x1) = (clamp(b.x_min, w), clamp(b.x_max, w));
    let (y0, y1) = (clamp(b.y_min, h), clamp(b.y_max, h));
    for x in x0..=x1 {
        img.put_pixel(x, y0, color);
        img.put_pixel(x, y1, color);
    }
    for y in y0..=y1 {
        img.put_pixel(x0, y, color);
        img.put_pixel(x1, y, color);
    }
}

/// Frame upscaled with ground truth in green, space-occupying detections in
/// red and other detections in blue.
pub fn overlay(frame: &AnnotatedFrame, detections: &[Detection]) -> RgbImage {
    let (w, h) = frame.image.dimensions();
    let mut img = imageops::resize(&frame.image, w * OVERLAY_SCALE, h * OVERLAY_SCALE, imageops::FilterType::Nearest);
    for o in &frame.objects {
        draw_box(&mut img, &o.bbox, OVERLAY_SCALE, Rgb([0, 220, 0]));
    }
    for d in detections {
        let color = if d.label.is_positive() { Rgb([255, 0, 0]) } else { Rgb([40, 90, 255]) };
        draw_box(&mut img, &d.bbox, OVERLAY_SCALE, color);
    }
    img
}

fn png_bytes(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn run(cfg: &RunConfig, args: &InferArgs<'_>, out: &Path) -> Result<RunManifest> {
    let p = &cfg.pipeline;
    let split = read_split(args.data)?;
    let patients = select(load_patients(args.data, cfg)?, &split, args.subset);
    let mut all = Vec::new();
    if args.oracle {
        all.extend(oracle_records(&patients, &p.cascade.inference.drop_labels));
    }
    let mut detector = None;
    if let Some(path) = args.detector {
        let ck = load_checkpoint(path, "detector checkpoint")?;
        let mut det = Detector::new(p.detector.clone(), &mut stream_rng(cfg.seed, &[0xC0]))?;
        ck.load_into(&mut det)?;
        detector = Some(det);
    }
    let recognizer = match args.recognizer {
        Some(path) => {
            let ck = load_checkpoint(path, "recognizer checkpoint")?;
            let mut net = RecognitionNet::new(p.recognizer.clone(), &mut stream_rng(cfg.seed, &[0xC1]))?;
            ck.load_into(&mut net)?;
            Some(NetRecognizer::new(net, p.cascade.inference.patches.clone())?)
        }
        None => None,
    };
    if detector.is_none() && !args.oracle {
        return Err(crate::error::CliError::Conflict("infer needs --detector or --oracle".into()).into());
    }
    if recognizer.is_some() && detector.is_none() {
        return Err(crate::error::CliError::Conflict("--recognizer requires --detector".into()).into());
    }

    let run = RunDir::create(out, "infer", cfg)?;
    if let Some(det) = &detector {
        info!("running {} patients through the detector", patients.len());
        let base = run_sequences::<IdentityRecognizer>(det, None, &patients, &p.cascade)?;
        all.extend(records(DETECTION_ONLY, &base));
        if let Some(rec) = &recognizer {
            let casc = run_sequences(det, Some(rec), &patients, &p.cascade)?;
            all.extend(records(CASCADE, &casc));
        }
    }
    let mut text = String::new();
    for r in &all {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    run.write(DETECTIONS_FILE, text)?;

    if args.overlays {
        let frames: std::collections::HashMap<&str, &AnnotatedFrame> =
            patients.iter().flat_map(|p| &p.frames).map(|f| (f.frame_id.as_str(), f)).collect();
        for r in &all {
            let img = overlay(frames[r.frame_id.as_str()], &r.detections);
            run.write(&format!("overlays/{}/{}.png", r.pipeline, r.frame_id), png_bytes(&img)?)?;
        }
    }
    run.finish()
}
