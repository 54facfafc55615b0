use serde::{Deserialize, Serialize};

use super::BBox;
use crate::{Error, Result};

/// Anchor scales (pixel side length of the square-equivalent box), aspect
/// ratios (width / height) and the feature-map stride they are tiled at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    pub stride: usize,
}

impl AnchorSpec {
    /// The classic three-scale, three-ratio configuration.
    pub fn faster_rcnn_default() -> Self {
        Self {
            scales: vec![128.0, 256.0, 512.0],
            ratios: vec![1.0, 0.5, 2.0],
            stride: 16,
        }
    }

    /// Two square anchors of side 64 and 128 at 256x256 image scale.
    pub fn lesion_default() -> Self {
        Self {
            scales: vec![64.0, 128.0],
            ratios: vec![1.0],
            stride: 16,
        }
    }

    /// Same anchor shapes rescaled by `factor`, tiled at `stride`.
    pub fn scaled(&self, factor: f64, stride: usize) -> Self {
        Self {
            scales: self.scales.iter().map(|s| s * factor).collect(),
            ratios: self.ratios.clone(),
            stride,
        }
    }

    pub fn anchors_per_position(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Config("anchor scales are empty".into()));
        }
        if self.ratios.is_empty() {
            return Err(Error::Config("anchor ratios are empty".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("anchor stride must be >= 1".into()));
        }
        if self.scales.iter().chain(&self.ratios).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("anchor scales and ratios must be positive".into()));
        }
        Ok(())
    }
}

/// Anchors in row-major position order, scale-major within a position.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    pub anchors: Vec<BBox>,
    /// Image size as (height, width).
    pub image_size: (usize, usize),
    /// Number of positions as (rows, cols).
    pub positions: (usize, usize),
    pub per_position: usize,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn clipped(&self) -> Vec<BBox> {
        let (h, w) = self.image_size;
        self.anchors.iter().map(|a| a.clip(w as f64, h as f64)).collect()
    }
}

/// Tiles anchors over an `(height, width)` image. Anchors may extend past the
/// image; clip explicitly where needed.
pub fn generate_anchors(image_size: (usize, usize), spec: &AnchorSpec) -> Result<AnchorGrid> {
    spec.validate()?;
    let (h, w) = image_size;
    if h < spec.stride || w < spec.stride {
        return Err(Error::Config(format!(
            "image {h}x{w} smaller than anchor stride {}",
            spec.stride
        )));
    }
    let rows = h.div_ceil(spec.stride);
    let cols = w.div_ceil(spec.stride);
    let stride = spec.stride as f64;
    let mut anchors = Vec::with_capacity(rows * cols * spec.anchors_per_position());
    for row in 0..rows {
        for col in 0..cols {
            let cx = col as f64 * stride + stride / 2.0;
            let cy = row as f64 * stride + stride / 2.0;
            for &scale in &spec.scales {
                for &ratio in &spec.ratios {
                    let root = ratio.sqrt();
                    anchors.push(BBox::from_center_size(cx, cy, scale * root, scale / root));
                }
            }
        }
    }
    Ok(AnchorGrid {
        anchors,
        image_size,
        positions: (rows, cols),
        per_position: spec.anchors_per_position(),
    })
}
