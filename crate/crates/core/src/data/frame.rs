use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::ClassLabel;
use crate::geometry::BBox;
use crate::nn::Tensor;
use crate::{Error, Result};

/// One annotated object. Boxes use 0-based pixel edges: a box covering
/// columns `a..=b` has `x_min = a`, `x_max = b + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Object {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub label: ClassLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedFrame {
    pub frame_id: String,
    pub patient_id: String,
    pub image: RgbImage,
    pub objects: Vec<Object>,
}

impl AnnotatedFrame {
    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    /// True iff the frame holds at least one space-occupying object.
    pub fn is_occupant_positive(&self) -> bool {
        self.objects.iter().any(|o| o.label.is_positive())
    }

    pub fn gt_pairs(&self) -> Vec<(BBox, ClassLabel)> {
        self.objects.iter().map(|o| (o.bbox, o.label)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width() as f64, self.height() as f64);
        for o in &self.objects {
            o.bbox.validate()?;
            if o.bbox.x_min < 0.0 || o.bbox.y_min < 0.0 || o.bbox.x_max > w || o.bbox.y_max > h {
                return Err(Error::InvalidBox(format!(
                    "{}: box {:?} outside {w}x{h} image",
                    self.frame_id, o.bbox
                )));
            }
        }
        Ok(())
    }

    pub fn to_tensor(&self) -> Tensor {
        image_to_tensor(&self.image)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatientLabel {
    /// At least one frame shows a space-occupying lesion.
    Occupant,
    /// Bleeding or ulcer findings only.
    NonOccupant,
    Normal,
}

impl PatientLabel {
    pub const ALL: [PatientLabel; 3] = [PatientLabel::Occupant, PatientLabel::NonOccupant, PatientLabel::Normal];

    pub fn name(self) -> &'static str {
        match self {
            PatientLabel::Occupant => "occupant",
            PatientLabel::NonOccupant => "non_occupant",
            PatientLabel::Normal => "normal",
        }
    }

    pub fn is_positive(self) -> bool {
        self == PatientLabel::Occupant
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientSequence {
    pub patient_id: String,
    pub label: PatientLabel,
    pub frames: Vec<AnnotatedFrame>,
}

impl PatientSequence {
    pub fn validate(&self) -> Result<()> {
        let any = self.frames.iter().any(AnnotatedFrame::is_occupant_positive);
        if any != self.label.is_positive() {
            return Err(Error::Config(format!(
                "patient {} labeled {} but occupant frames present = {any}",
                self.patient_id,
                self.label.name()
            )));
        }
        self.frames.iter().try_for_each(AnnotatedFrame::validate)
    }
}

/// `[1, 3, H, W]` tensor with values `v / 255 - 0.5`.
pub fn image_to_tensor(image: &RgbImage) -> Tensor {
    images_to_tensor(&[image]).expect("single image batch")
}

/// Stacks equally sized images into `[N, 3, H, W]`.
pub fn images_to_tensor(images: &[&RgbImage]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::EmptyInput("no images to stack".into()))?;
    let (w, h) = first.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![0.0; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(Error::shape("images_to_tensor", format!("{w}x{h}"), format!("{:?}", img.dimensions())));
        }
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[(n * 3 + c) * plane + i] = px[c] as f64 / 255.0 - 0.5;
            }
        }
    }
    Tensor::new(vec![images.len(), 3, h as usize, w as usize], data)
}
