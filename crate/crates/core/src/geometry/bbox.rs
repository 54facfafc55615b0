use serde::{Deserialize, Serialize};

use crate::data::ClassLabel;
use crate::{Error, Result};

/// Axis-aligned rectangle in continuous pixel coordinates.
///
/// Width is `x_max - x_min`; an integer-aligned box `[0, 10)` covers ten
/// pixel columns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite or inverted coordinates.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x_min: cx - 0.5 * w,
            y_min: cy - 0.5 * h,
            x_max: cx + 0.5 * w,
            y_max: cy + 0.5 * h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite coordinate in {self:?}")));
        }
        if self.x_max < self.x_min || self.y_max < self.y_min {
            return Err(Error::InvalidBox(format!("inverted extents in {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clamps the box to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox {
            x_min: self.x_min.clamp(0.0, width),
            y_min: self.y_min.clamp(0.0, height),
            x_max: self.x_max.clamp(0.0, width),
            y_max: self.y_max.clamp(0.0, height),
        }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    /// Grows the box by `fraction` of its width/height on every side.
    pub fn expand(&self, fraction: f64) -> BBox {
        let dx = self.width() * fraction;
        let dy = self.height() * fraction;
        BBox {
            x_min: self.x_min - dx,
            y_min: self.y_min - dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }
}

/// A box with a class label and a confidence score in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub label: ClassLabel,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, label: ClassLabel, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Config(format!("detection score {score} outside [0, 1]")));
        }
        bbox.validate()?;
        Ok(Self { bbox, label, score })
    }
}

/// IoU together with a flag raised when the union is empty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Iou {
    pub value: f64,
    pub degenerate_union: bool,
}

/// Intersection over union. Two zero-area boxes give 0 with
/// `degenerate_union` set.
pub fn iou_checked(a: &BBox, b: &BBox) -> Iou {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Iou {
            value: 0.0,
            degenerate_union: true,
        };
    }
    Iou {
        value: (inter / union).clamp(0.0, 1.0),
        degenerate_union: false,
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    iou_checked(a, b).value
}

/// Intersection area as a fraction of the ground-truth area.
pub fn overlap_fraction(pred: &BBox, gt: &BBox) -> Result<f64> {
    let gt_area = gt.area();
    if gt_area <= 0.0 {
        return Err(Error::InvalidBox(format!(
            "ground-truth box {gt:?} has zero area"
        )));
    }
    Ok((pred.intersection_area(gt) / gt_area).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 30.0, 30.0)), 0.0);
        // intersection 5x5 = 25, union 100 + 100 - 25 = 175
        let v = iou(&a, &b(5.0, 5.0, 15.0, 15.0));
        assert!((v - 25.0 / 175.0).abs() < 1e-12);
    }

    #[test]
    fn iou_degenerate_pair_is_flagged() {
        let p = b(3.0, 3.0, 3.0, 3.0);
        let r = iou_checked(&p, &p);
        assert_eq!(r.value, 0.0);
        assert!(r.degenerate_union);
    }

    #[test]
    fn overlap_fraction_examples() {
        let gt = b(2.0, 2.0, 5.0, 5.0);
        assert_eq!(overlap_fraction(&b(0.0, 0.0, 10.0, 10.0), &gt).unwrap(), 1.0);
        assert_eq!(overlap_fraction(&b(20.0, 20.0, 30.0, 30.0), &gt).unwrap(), 0.0);
        let v = overlap_fraction(&b(0.0, 0.0, 10.0, 10.0), &b(0.0, 0.0, 20.0, 10.0)).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        assert!(overlap_fraction(&gt, &b(1.0, 1.0, 1.0, 4.0)).is_err());
    }

    #[test]
    fn rejects_inverted_box() {
        assert!(BBox::new(5.0, 0.0, 4.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(Detection::new(b(0.0, 0.0, 1.0, 1.0), ClassLabel::Bleeding, 1.5).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..100.0f64, 0.0..100.0f64, 0.5..60.0f64, 0.5..60.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let ab = iou(&a, &c);
            let ba = iou(&c, &a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
            if a != c {
                prop_assert!(ab < 1.0);
            }
        }
    }
}
