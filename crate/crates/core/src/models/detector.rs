use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{propose, Backbone, BackboneConfig, DetectionHead, DetectionHeadConfig, Proposal, ProposalConfig, RpnHead, RpnHeadConfig};
use crate::geometry::{decode_clamped, generate_anchors, AnchorGrid, AnchorSpec, BBox, BoxDelta, Detection};
use crate::nn::{prefixed, prefixed_mut, softmax_rows, Param, Parameterized, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub backbone: BackboneConfig,
    pub rpn: RpnHeadConfig,
    pub head: DetectionHeadConfig,
    pub anchors: AnchorSpec,
    pub proposals: ProposalConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::desk(64)
    }
}

impl DetectorConfig {
    /// Small configuration for `side x side` images: stride-2 stem and two
    /// stages (stride 8), lesion anchors rescaled from the 256-pixel scale,
    /// 4x4 RoI pooling.
    pub fn desk(side: usize) -> Self {
        let backbone = BackboneConfig {
            input_size: (side, side),
            ..BackboneConfig::default()
        };
        let anchors = AnchorSpec::lesion_default().scaled(side as f64 / 256.0, backbone.stride_budget());
        Self {
            rpn: RpnHeadConfig {
                intermediate_conv_count: 1,
                channels: backbone.output_channels(),
                anchors_per_position: anchors.anchors_per_position(),
            },
            head: DetectionHeadConfig {
                pool_size: 4,
                ..DetectionHeadConfig::default()
            },
            backbone,
            anchors,
            proposals: ProposalConfig::default(),
        }
    }

    /// Deep variant keeping the relative depths of a 40-layer backbone, a
    /// 20-layer proposal block and a 50-layer head at a quarter of the usual
    /// channel width. Too slow for the desk benchmark; kept for comparison.
    pub fn deep(side: usize) -> Self {
        let backbone = BackboneConfig {
            in_channels: 3,
            base_channels: 16,
            stem_stride: 2,
            stage_block_counts: vec![3, 5, 7, 4],
            input_size: (side, side),
        };
        let anchors = AnchorSpec::lesion_default().scaled(side as f64 / 256.0, backbone.stride_budget());
        Self {
            rpn: RpnHeadConfig {
                intermediate_conv_count: 20,
                channels: 64,
                anchors_per_position: anchors.anchors_per_position(),
            },
            head: DetectionHeadConfig {
                pool_size: 7,
                channels: 64,
                block_count: 24,
                hidden: 256,
                ..DetectionHeadConfig::default()
            },
            backbone,
            anchors,
            proposals: ProposalConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.anchors.validate()?;
        if self.anchors.stride != self.backbone.stride_budget() {
            return Err(Error::Config(format!(
                "anchor stride {} differs from backbone stride {}",
                self.anchors.stride,
                self.backbone.stride_budget()
            )));
        }
        if let Some(s) = self.head.feature_stage.filter(|&s| s >= self.backbone.stages()) {
            return Err(Error::Config(format!(
                "head feature stage {s} out of range for {} backbone stages",
                self.backbone.stages()
            )));
        }
        if self.rpn.anchors_per_position != self.anchors.anchors_per_position() {
            return Err(Error::Config(format!(
                "RPN predicts {} anchors per position, anchor spec has {}",
                self.rpn.anchors_per_position,
                self.anchors.anchors_per_position()
            )));
        }
        Ok(())
    }
}

/// Backbone, RPN on the deepest feature map and a detection head pooling
/// from a configurable stage.
#[derive(Clone, Debug)]
pub struct Detector {
    pub config: DetectorConfig,
    pub backbone: Backbone,
    pub rpn: RpnHead,
    pub head: DetectionHead,
    pub grid: AnchorGrid,
}

/// Proposals and head candidates for one image, before any score filtering
/// beyond the threshold or terminal suppression.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectorOutput {
    pub proposals: Vec<Proposal>,
    pub candidates: Vec<Detection>,
}

impl Detector {
    pub fn new<R: Rng + ?Sized>(config: DetectorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(config.backbone.clone(), rng)?;
        let channels = config.backbone.output_channels();
        let rpn = RpnHead::new(channels, config.rpn.clone(), rng)?;
        let stage = config.head.feature_stage.unwrap_or(config.backbone.stages() - 1);
        let head = DetectionHead::new(
            config.backbone.stage_channels(stage),
            config.backbone.stage_stride(stage),
            config.head.clone(),
            rng,
        )?;
        let grid = generate_anchors(config.backbone.input_size, &config.anchors)?;
        Ok(Self {
            config,
            backbone,
            rpn,
            head,
            grid,
        })
    }

    /// Index of the backbone stage feeding the detection head.
    pub fn head_stage(&self) -> usize {
        self.config.head.feature_stage.unwrap_or(self.config.backbone.stages() - 1)
    }

    pub fn check_image(&self, image: &Tensor) -> Result<()> {
        let (n, c, h, w) = image.dims4("detector")?;
        let (eh, ew) = self.config.backbone.input_size;
        if n != 1 || c != self.config.backbone.in_channels || (h, w) != (eh, ew) {
            return Err(Error::Config(format!(
                "detector expects [1, {}, {eh}, {ew}], got {:?}",
                self.config.backbone.in_channels,
                image.shape()
            )));
        }
        Ok(())
    }

    /// Filtered RPN proposals only.
    pub fn proposals(&mut self, image: &Tensor) -> Result<Vec<Proposal>> {
        self.check_image(image)?;
        let features = self.backbone.forward(image)?;
        let (logits, deltas) = self.rpn.forward(features.last().expect("at least one stage"))?;
        propose(&logits, &deltas, &self.grid, &self.config.proposals)
    }

    /// Proposals plus every head candidate whose best non-background class
    /// probability reaches `score_threshold`.
    pub fn detect(&mut self, image: &Tensor, score_threshold: f64) -> Result<DetectorOutput> {
        self.check_image(image)?;
        let features = self.backbone.forward(image)?;
        let deepest = features.last().expect("at least one stage");
        let (logits, deltas) = self.rpn.forward(deepest)?;
        let proposals = propose(&logits, &deltas, &self.grid, &self.config.proposals)?;
        let rois: Vec<BBox> = proposals.iter().map(|p| p.bbox).collect();
        let Some((cls, reg)) = self.head.forward(&features[self.head_stage()], &rois)? else {
            return Ok(DetectorOutput {
                proposals,
                candidates: Vec::new(),
            });
        };
        let probs = softmax_rows(&cls)?;
        let (h, w) = self.grid.image_size;
        let mode = self.config.head.label_mode;
        let mut candidates = Vec::new();
        for (i, roi) in rois.iter().enumerate() {
            let row = probs.row(i);
            let (k, &p) = row
                .iter()
                .enumerate()
                .skip(1)
                .fold((0, &f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
            if p < score_threshold {
                continue;
            }
            let Some(label) = mode.label(k) else { continue };
            let bbox = decode_clamped(roi, &BoxDelta::from_slice(reg.row(i)), self.config.proposals.delta_clamp)
                .clip(w as f64, h as f64);
            if bbox.is_degenerate() {
                continue;
            }
            candidates.push(Detection::new(bbox, label, p.clamp(0.0, 1.0))?);
        }
        Ok(DetectorOutput { proposals, candidates })
    }
}

impl Parameterized for Detector {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<_> = prefixed("backbone", self.backbone.named_params()).collect();
        out.extend(prefixed("rpn", self.rpn.named_params()));
        out.extend(prefixed("head", self.head.named_params()));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out: Vec<_> = prefixed_mut("backbone", self.backbone.named_params_mut()).collect();
        out.extend(prefixed_mut("rpn", self.rpn.named_params_mut()));
        out.extend(prefixed_mut("head", self.head.named_params_mut()));
        out
    }
}
