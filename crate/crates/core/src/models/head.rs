use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ResidualBlock;
use crate::data::ClassLabel;
use crate::geometry::BBox;
use crate::nn::{prefixed, prefixed_mut, Conv2d, Layer, Linear, Param, Parameterized, Relu, RoiPool, Tensor};
use crate::{Error, Result};

/// Which label set the detection head classifies into.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLabelMode {
    /// Background plus all six classes.
    #[default]
    MultiClass,
    /// Background versus space-occupying lesion.
    Binary,
}

impl HeadLabelMode {
    pub fn num_classes(self) -> usize {
        match self {
            HeadLabelMode::MultiClass => ClassLabel::DETECTION_COUNT,
            HeadLabelMode::Binary => 2,
        }
    }

    /// Training target for an object, `None` when the mode ignores it.
    pub fn target(self, label: ClassLabel) -> Option<usize> {
        match self {
            HeadLabelMode::MultiClass => Some(label.detection_index()),
            HeadLabelMode::Binary => (label == ClassLabel::SpaceOccupying).then_some(1),
        }
    }

    /// Label of head output index `k >= 1`.
    pub fn label(self, k: usize) -> Option<ClassLabel> {
        match self {
            HeadLabelMode::MultiClass => ClassLabel::from_detection_index(k),
            HeadLabelMode::Binary => (k == 1).then_some(ClassLabel::SpaceOccupying),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionHeadConfig {
    pub pool_size: usize,
    pub channels: usize,
    pub block_count: usize,
    pub hidden: usize,
    pub label_mode: HeadLabelMode,
    /// Backbone stage the RoIs are pooled from; the deepest when `None`.
    #[serde(default)]
    pub feature_stage: Option<usize>,
}

impl Default for DetectionHeadConfig {
    fn default() -> Self {
        Self {
            pool_size: 7,
            channels: 32,
            block_count: 1,
            hidden: 64,
            label_mode: HeadLabelMode::MultiClass,
            feature_stage: None,
        }
    }
}

/// RoI max pooling, a 1x1 reduction, residual blocks, a fully connected layer
/// over the flattened pooled grid and two sibling outputs (class logits,
/// class-agnostic deltas).
#[derive(Clone, Debug)]
pub struct DetectionHead {
    pub config: DetectionHeadConfig,
    pool: RoiPool,
    pub reduce: Conv2d,
    reduce_relu: Relu,
    pub blocks: Vec<ResidualBlock>,
    pub fc: Linear,
    fc_relu: Relu,
    pub cls: Linear,
    pub reg: Linear,
}

impl DetectionHead {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        feature_stride: usize,
        config: DetectionHeadConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.pool_size == 0 || config.channels == 0 || config.hidden == 0 {
            return Err(Error::Config("detection head sizes must be positive".into()));
        }
        let c = config.channels;
        Ok(Self {
            pool: RoiPool::new(config.pool_size, 1.0 / feature_stride as f64),
            reduce: Conv2d::new(in_channels, c, 1, 1, 0, rng),
            reduce_relu: Relu::new(),
            blocks: (0..config.block_count).map(|_| ResidualBlock::new(c, c, 1, rng)).collect(),
            fc: Linear::new(c * config.pool_size * config.pool_size, config.hidden, rng),
            fc_relu: Relu::new(),
            cls: Linear::new_scaled(config.hidden, config.label_mode.num_classes(), 0.01, rng),
            reg: Linear::new_scaled(config.hidden, 4, 0.001, rng),
            config,
        })
    }

    /// Per-roi `(class logits [R, K], deltas [R, 4])`; `None` for no rois.
    pub fn forward(&mut self, feature: &Tensor, rois: &[BBox]) -> Result<Option<(Tensor, Tensor)>> {
        if rois.is_empty() {
            return Ok(None);
        }
        let x = self.pool.forward(feature, rois)?;
        let mut x = self.reduce_relu.forward(&self.reduce.forward(&x)?)?;
        for b in &mut self.blocks {
            x = b.forward(&x)?;
        }
        let r = x.shape()[0];
        let x = x.reshape(&[r, x.data().len() / r])?;
        let x = self.fc_relu.forward(&self.fc.forward(&x)?)?;
        Ok(Some((self.cls.forward(&x)?, self.reg.forward(&x)?)))
    }

    /// Gradient with respect to the pooled feature map.
    pub fn backward(&mut self, grad_logits: &Tensor, grad_deltas: &Tensor) -> Result<Tensor> {
        let mut g = self.cls.backward(grad_logits)?;
        g.add_assign(&self.reg.backward(grad_deltas)?)?;
        let g = self.fc.backward(&self.fc_relu.backward(&g)?)?;
        let (c, p) = (self.config.channels, self.config.pool_size);
        let mut g = g.reshape(&[g.shape()[0], c, p, p])?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        let g = self.reduce.backward(&self.reduce_relu.backward(&g)?)?;
        self.pool.backward(&g)
    }
}

impl Parameterized for DetectionHead {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<_> = prefixed("reduce", self.reduce.named_params()).collect();
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(prefixed(&format!("block{i}"), b.named_params()));
        }
        out.extend(prefixed("fc", self.fc.named_params()));
        out.extend(prefixed("cls", self.cls.named_params()));
        out.extend(prefixed("reg", self.reg.named_params()));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out: Vec<_> = prefixed_mut("reduce", self.reduce.named_params_mut()).collect();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(prefixed_mut(&format!("block{i}"), b.named_params_mut()));
        }
        out.extend(prefixed_mut("fc", self.fc.named_params_mut()));
        out.extend(prefixed_mut("cls", self.cls.named_params_mut()));
        out.extend(prefixed_mut("reg", self.reg.named_params_mut()));
        out
    }
}
