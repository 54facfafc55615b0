use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::split::{stratified_split, SplitRatio};
use super::{AnnotatedFrame, ClassLabel};
use crate::geometry::BBox;
use crate::seed::stream_rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    /// Context added on every side, as a fraction of the box size.
    pub margin: f64,
    pub patch_size: u32,
    /// Side of the random "normal" crop taken from frames without objects,
    /// as a fraction of the image side; `None` disables such crops.
    pub background_crop: Option<f64>,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            margin: 0.1,
            patch_size: 32,
            background_crop: Some(0.35),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecognitionSample {
    pub frame_id: String,
    pub label: ClassLabel,
    /// Annotated (or sampled) box the patch was cut around.
    pub source: BBox,
    pub patch: RgbImage,
}

/// Integer pixel region `bbox` grown by `margin` and clamped to the image.
pub fn crop_region(bbox: &BBox, margin: f64, width: u32, height: u32) -> Result<BBox> {
    let g = bbox.expand(margin);
    let r = BBox {
        x_min: g.x_min.floor().max(0.0),
        y_min: g.y_min.floor().max(0.0),
        x_max: g.x_max.ceil().min(width as f64),
        y_max: g.y_max.ceil().min(height as f64),
    };
    if r.width() < 1.0 || r.height() < 1.0 {
        return Err(Error::InvalidBox(format!("crop of {bbox:?} is empty after clamping")));
    }
    Ok(r)
}

/// Crops around `bbox` with context and resizes bilinearly to a square.
pub fn crop_patch(image: &RgbImage, bbox: &BBox, margin: f64, size: u32) -> Result<RgbImage> {
    let r = crop_region(bbox, margin, image.width(), image.height())?;
    let view = imageops::crop_imm(image, r.x_min as u32, r.y_min as u32, r.width() as u32, r.height() as u32);
    Ok(imageops::resize(&view.to_image(), size, size, FilterType::Triangle))
}

/// One patch per annotated object, plus one "normal" crop for every frame
/// without objects when enabled.
pub fn build_recognition_set(
    frames: &[AnnotatedFrame],
    cfg: &PatchConfig,
    seed: u64,
) -> Result<Vec<RecognitionSample>> {
    let mut out = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        for o in &frame.objects {
            out.push(RecognitionSample {
                frame_id: frame.frame_id.clone(),
                label: o.label,
                source: o.bbox,
                patch: crop_patch(&frame.image, &o.bbox, cfg.margin, cfg.patch_size)?,
            });
        }
        if let (true, Some(frac)) = (frame.objects.is_empty(), cfg.background_crop) {
            let mut rng = stream_rng(seed, &[i as u64]);
            let (w, h) = (frame.width() as f64, frame.height() as f64);
            let side = (frac * w.min(h)).max(2.0).round();
            let reach = 0.48 * w.min(h) - side * 0.6;
            let (cx, cy) = (
                w / 2.0 + rng.random_range(-reach.max(0.5)..reach.max(0.5)),
                h / 2.0 + rng.random_range(-reach.max(0.5)..reach.max(0.5)),
            );
            let x0 = (cx - side / 2.0).round().clamp(0.0, w - side);
            let y0 = (cy - side / 2.0).round().clamp(0.0, h - side);
            let source = BBox { x_min: x0, y_min: y0, x_max: x0 + side, y_max: y0 + side };
            out.push(RecognitionSample {
                frame_id: frame.frame_id.clone(),
                label: ClassLabel::Normal,
                source,
                patch: crop_patch(&frame.image, &source, cfg.margin, cfg.patch_size)?,
            });
        }
    }
    Ok(out)
}

/// Class-stratified 8:2 (by default) split of recognition samples.
pub fn split_recognition(
    samples: Vec<RecognitionSample>,
    ratio: SplitRatio,
    seed: u64,
) -> Result<(Vec<RecognitionSample>, Vec<RecognitionSample>)> {
    stratified_split(samples, |s| s.label.index(), ratio, seed)
}
