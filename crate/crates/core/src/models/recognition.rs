use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Backbone, BackboneConfig};
use crate::data::ClassLabel;
use crate::nn::{
    prefixed, prefixed_mut, Add, Concat, Conv2d, GlobalAvgPool, Layer, Linear, Param, Parameterized, Tensor,
    UpsampleNearest,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FpnConfig {
    pub lateral_channels: usize,
    /// Number of backbone stages fused, counted from the deepest.
    pub levels: usize,
}

impl Default for FpnConfig {
    fn default() -> Self {
        Self {
            lateral_channels: 16,
            levels: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecognitionConfig {
    /// Same layout as the detection backbone so its weights carry over.
    pub backbone: BackboneConfig,
    pub fpn: FpnConfig,
    /// Side length of the square input patch.
    pub patch_size: usize,
}

impl Default for RecognitionConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default().with_input_size((32, 32)),
            fpn: FpnConfig::default(),
            patch_size: 32,
        }
    }
}

impl RecognitionConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.backbone.input_size != (self.patch_size, self.patch_size) {
            return Err(Error::Config(format!(
                "recognition backbone input {:?} differs from patch size {}",
                self.backbone.input_size, self.patch_size
            )));
        }
        if self.fpn.levels == 0 || self.fpn.levels > self.backbone.stages() || self.fpn.lateral_channels == 0 {
            return Err(Error::Config(format!(
                "FPN needs 1..={} levels and positive lateral channels",
                self.backbone.stages()
            )));
        }
        Ok(())
    }
}

/// Residual backbone with a top-down feature pyramid; every fused level is
/// globally pooled and the concatenation is classified into six classes.
#[derive(Clone, Debug)]
pub struct RecognitionNet {
    pub config: RecognitionConfig,
    pub backbone: Backbone,
    /// Lateral 1x1 convs, shallowest fused level first.
    pub laterals: Vec<Conv2d>,
    ups: Vec<UpsampleNearest>,
    adds: Vec<Add>,
    gaps: Vec<GlobalAvgPool>,
    concat: Concat,
    pub classifier: Linear,
    last_pyramid: Vec<Tensor>,
}

impl RecognitionNet {
    pub fn new<R: Rng + ?Sized>(config: RecognitionConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(config.backbone.clone(), rng)?;
        let levels = config.fpn.levels;
        let first = config.backbone.stages() - levels;
        let lat = config.fpn.lateral_channels;
        let laterals = (first..config.backbone.stages())
            .map(|s| Conv2d::new(config.backbone.stage_channels(s), lat, 1, 1, 0, rng))
            .collect();
        let classifier = Linear::new(lat * levels, ClassLabel::COUNT, rng);
        Ok(Self {
            backbone,
            laterals,
            ups: vec![UpsampleNearest::new(2); levels - 1],
            adds: vec![Add::new(); levels - 1],
            gaps: vec![GlobalAvgPool::new(); levels],
            concat: Concat::new(),
            classifier,
            last_pyramid: Vec::new(),
            config,
        })
    }

    fn first_level(&self) -> usize {
        self.config.backbone.stages() - self.config.fpn.levels
    }

    /// Fused maps of the most recent forward pass, shallowest first.
    pub fn pyramid(&self) -> &[Tensor] {
        &self.last_pyramid
    }

    /// Logits `[N, 6]` for patches `[N, C, s, s]`.
    pub fn forward(&mut self, patches: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = patches.dims4("recognition")?;
        let s = self.config.patch_size;
        if (h, w) != (s, s) {
            return Err(Error::Config(format!("recognition patch {h}x{w}, expected {s}x{s}")));
        }
        let features = self.backbone.forward(patches)?;
        let first = self.first_level();
        let levels = self.laterals.len();
        let mut pyramid: Vec<Option<Tensor>> = vec![None; levels];
        let mut above: Option<Tensor> = None;
        for i in (0..levels).rev() {
            let lateral = self.laterals[i].forward(&features[first + i])?;
            let fused = match above {
                None => lateral,
                Some(top) => {
                    let up = self.ups[i].forward(&top)?;
                    self.adds[i].forward(&lateral, &up)?
                }
            };
            above = Some(fused.clone());
            pyramid[i] = Some(fused);
        }
        let pyramid: Vec<Tensor> = pyramid.into_iter().map(|p| p.expect("all levels filled")).collect();
        let pooled = pyramid
            .iter()
            .zip(&mut self.gaps)
            .map(|(p, g)| g.forward(p))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = pooled.iter().collect();
        let joined = self.concat.forward(&refs)?;
        self.last_pyramid = pyramid;
        self.classifier.forward(&joined)
    }

    /// Backpropagates logit gradients into every parameter and returns the
    /// gradient with respect to the patches.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let g = self.classifier.backward(grad_logits)?;
        let per_level = self.concat.backward(&g)?;
        let levels = self.laterals.len();
        let mut level_grads = per_level
            .iter()
            .zip(&mut self.gaps)
            .map(|(g, gap)| gap.backward(g))
            .collect::<Result<Vec<_>>>()?;
        let mut stage_grads: Vec<Option<Tensor>> = vec![None; self.config.backbone.stages()];
        let first = self.first_level();
        for i in 0..levels {
            let g = level_grads[i].clone();
            let g_lateral = if i + 1 < levels {
                let (g_lat, g_up) = self.adds[i].backward(&g)?;
                let g_top = self.ups[i].backward(&g_up)?;
                level_grads[i + 1].add_assign(&g_top)?;
                g_lat
            } else {
                g
            };
            stage_grads[first + i] = Some(self.laterals[i].backward(&g_lateral)?);
        }
        self.backbone.backward(stage_grads)
    }
}

impl Parameterized for RecognitionNet {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<_> = prefixed("backbone", self.backbone.named_params()).collect();
        for (i, l) in self.laterals.iter().enumerate() {
            out.extend(prefixed(&format!("fpn.lateral{i}"), l.named_params()));
        }
        out.extend(prefixed("classifier", self.classifier.named_params()));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out: Vec<_> = prefixed_mut("backbone", self.backbone.named_params_mut()).collect();
        for (i, l) in self.laterals.iter_mut().enumerate() {
            out.extend(prefixed_mut(&format!("fpn.lateral{i}"), l.named_params_mut()));
        }
        out.extend(prefixed_mut("classifier", self.classifier.named_params_mut()));
        out
    }
}
