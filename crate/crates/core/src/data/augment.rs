use image::{imageops, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedFrame, Object};
use crate::geometry::BBox;

/// Flips and quarter turns; rotations are clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    Identity,
    FlipHorizontal,
    FlipVertical,
    Rotate90,
    Rotate180,
    Rotate270,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flips: bool,
    pub rotations: bool,
}

impl AugmentConfig {
    pub fn all() -> Self {
        Self { flips: true, rotations: true }
    }

    pub fn choices(&self) -> Vec<Augmentation> {
        let mut v = vec![Augmentation::Identity];
        if self.flips {
            v.extend([Augmentation::FlipHorizontal, Augmentation::FlipVertical]);
        }
        if self.rotations {
            v.extend([Augmentation::Rotate90, Augmentation::Rotate180, Augmentation::Rotate270]);
        }
        v
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Augmentation {
        let c = self.choices();
        c[rng.random_range(0..c.len())]
    }
}

pub fn augment_image(image: &RgbImage, aug: Augmentation) -> RgbImage {
    match aug {
        Augmentation::Identity => image.clone(),
        Augmentation::FlipHorizontal => imageops::flip_horizontal(image),
        Augmentation::FlipVertical => imageops::flip_vertical(image),
        Augmentation::Rotate90 => imageops::rotate90(image),
        Augmentation::Rotate180 => imageops::rotate180(image),
        Augmentation::Rotate270 => imageops::rotate270(image),
    }
}

/// Maps a box on a `width x height` image through `aug`.
pub fn augment_box(b: &BBox, aug: Augmentation, width: f64, height: f64) -> BBox {
    let (w, h) = (width, height);
    let (x0, y0, x1, y1) = match aug {
        Augmentation::Identity => (b.x_min, b.y_min, b.x_max, b.y_max),
        Augmentation::FlipHorizontal => (w - b.x_max, b.y_min, w - b.x_min, b.y_max),
        Augmentation::FlipVertical => (b.x_min, h - b.y_max, b.x_max, h - b.y_min),
        Augmentation::Rotate90 => (h - b.y_max, b.x_min, h - b.y_min, b.x_max),
        Augmentation::Rotate180 => (w - b.x_max, h - b.y_max, w - b.x_min, h - b.y_min),
        Augmentation::Rotate270 => (b.y_min, w - b.x_max, b.y_max, w - b.x_min),
    };
    BBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 }
}

pub fn augment_frame(frame: &AnnotatedFrame, aug: Augmentation) -> AnnotatedFrame {
    let (w, h) = (frame.width() as f64, frame.height() as f64);
    AnnotatedFrame {
        frame_id: frame.frame_id.clone(),
        patient_id: frame.patient_id.clone(),
        image: augment_image(&frame.image, aug),
        objects: frame
            .objects
            .iter()
            .map(|o| Object { bbox: augment_box(&o.bbox, aug, w, h), label: o.label })
            .collect(),
    }
}
