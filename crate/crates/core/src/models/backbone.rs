use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{prefixed, prefixed_mut, Add, Conv2d, Layer, Param, Parameterized, Relu, Tensor};
use crate::{Error, Result};

/// Residual feature extractor: a 3x3 stem followed by stages of residual
/// blocks, each stage halving the resolution and doubling the width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub stem_stride: usize,
    /// Residual blocks per stage; every entry must be at least 1.
    pub stage_block_counts: Vec<usize>,
    /// Expected input as (height, width).
    pub input_size: (usize, usize),
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_channels: 8,
            stem_stride: 2,
            stage_block_counts: vec![1, 1],
            input_size: (64, 64),
        }
    }
}

impl BackboneConfig {
    /// Product of all downsamplings, i.e. the stride of the deepest map.
    pub fn stride_budget(&self) -> usize {
        self.stem_stride << self.stage_block_counts.len()
    }

    /// Stride of the output of stage `i`.
    pub fn stage_stride(&self, i: usize) -> usize {
        self.stem_stride << (i + 1)
    }

    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << (i + 1)
    }

    pub fn stages(&self) -> usize {
        self.stage_block_counts.len()
    }

    pub fn output_channels(&self) -> usize {
        self.stage_channels(self.stages() - 1)
    }

    pub fn with_input_size(&self, input_size: (usize, usize)) -> Self {
        Self {
            input_size,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.stem_stride == 0 {
            return Err(Error::Config("backbone channels and stem stride must be positive".into()));
        }
        if self.stage_block_counts.is_empty() || self.stage_block_counts.contains(&0) {
            return Err(Error::Config(format!(
                "backbone stage block counts {:?} must be non-empty and positive",
                self.stage_block_counts
            )));
        }
        let budget = self.stride_budget();
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % budget != 0 || w % budget != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} is not divisible by the backbone stride budget {budget}"
            )));
        }
        Ok(())
    }
}

/// `relu(conv2(relu(conv1(x))) + shortcut(x))`, the shortcut being the
/// identity or a strided 1x1 projection when the shape changes.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub shortcut: Option<Conv2d>,
    relu_mid: Relu,
    add: Add,
    relu_out: Relu,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, stride: usize, rng: &mut R) -> Self {
        let conv1 = Conv2d::new(in_channels, out_channels, 3, stride, 1, rng);
        let conv2 = Conv2d::new(out_channels, out_channels, 3, 1, 1, rng);
        let shortcut = (stride != 1 || in_channels != out_channels)
            .then(|| Conv2d::new(in_channels, out_channels, 1, stride, 0, rng));
        Self {
            conv1,
            conv2,
            shortcut,
            relu_mid: Relu::new(),
            add: Add::new(),
            relu_out: Relu::new(),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let a = self.conv1.forward(x)?;
        let a = self.relu_mid.forward(&a)?;
        let a = self.conv2.forward(&a)?;
        let s = match &mut self.shortcut {
            Some(proj) => proj.forward(x)?,
            None => x.clone(),
        };
        let y = self.add.forward(&a, &s)?;
        self.relu_out.forward(&y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.relu_out.backward(grad)?;
        let (ga, gs) = self.add.backward(&g)?;
        let ga = self.conv2.backward(&ga)?;
        let ga = self.relu_mid.backward(&ga)?;
        let mut gx = self.conv1.backward(&ga)?;
        let gs = match &mut self.shortcut {
            Some(proj) => proj.backward(&gs)?,
            None => gs,
        };
        gx.add_assign(&gs)?;
        Ok(gx)
    }
}

impl Parameterized for ResidualBlock {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<_> = prefixed("conv1", self.conv1.named_params()).collect();
        out.extend(prefixed("conv2", self.conv2.named_params()));
        if let Some(s) = &self.shortcut {
            out.extend(prefixed("shortcut", s.named_params()));
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out: Vec<_> = prefixed_mut("conv1", self.conv1.named_params_mut()).collect();
        out.extend(prefixed_mut("conv2", self.conv2.named_params_mut()));
        if let Some(s) = &mut self.shortcut {
            out.extend(prefixed_mut("shortcut", s.named_params_mut()));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub stem: Conv2d,
    stem_relu: Relu,
    pub stages: Vec<Vec<ResidualBlock>>,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(config: BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stem = Conv2d::new(config.in_channels, config.base_channels, 3, config.stem_stride, 1, rng);
        let mut stages = Vec::with_capacity(config.stages());
        let mut channels = config.base_channels;
        for (i, &blocks) in config.stage_block_counts.iter().enumerate() {
            let out = config.stage_channels(i);
            let mut stage = Vec::with_capacity(blocks);
            for b in 0..blocks {
                let (cin, stride) = if b == 0 { (channels, 2) } else { (out, 1) };
                stage.push(ResidualBlock::new(cin, out, stride, rng));
            }
            channels = out;
            stages.push(stage);
        }
        Ok(Self {
            config,
            stem,
            stem_relu: Relu::new(),
            stages,
        })
    }

    /// One feature map per stage, shallowest first.
    pub fn forward(&mut self, image: &Tensor) -> Result<Vec<Tensor>> {
        let (_, c, h, w) = image.dims4("backbone")?;
        let budget = self.config.stride_budget();
        if c != self.config.in_channels || h % budget != 0 || w % budget != 0 {
            return Err(Error::Config(format!(
                "backbone input {:?} needs {} channels and sides divisible by {budget}",
                image.shape(),
                self.config.in_channels
            )));
        }
        let x = self.stem.forward(image)?;
        let mut x = self.stem_relu.forward(&x)?;
        let mut features = Vec::with_capacity(self.stages.len());
        for stage in &mut self.stages {
            for block in stage.iter_mut() {
                x = block.forward(&x)?;
            }
            features.push(x.clone());
        }
        Ok(features)
    }

    /// Backpropagates per-stage feature gradients (absent entries count as
    /// zero) and returns the gradient with respect to the image.
    pub fn backward(&mut self, grads: Vec<Option<Tensor>>) -> Result<Tensor> {
        if grads.len() != self.stages.len() {
            return Err(Error::shape("backbone backward", self.stages.len(), grads.len()));
        }
        let mut carried: Option<Tensor> = None;
        for (stage, g) in self.stages.iter_mut().zip(grads).rev() {
            let mut g = match (carried.take(), g) {
                (Some(mut c), Some(g)) => {
                    c.add_assign(&g)?;
                    c
                }
                (Some(c), None) => c,
                (None, Some(g)) => g,
                (None, None) => continue,
            };
            for block in stage.iter_mut().rev() {
                g = block.backward(&g)?;
            }
            carried = Some(g);
        }
        let g = carried.ok_or_else(|| Error::State("backbone backward without any gradient".into()))?;
        let g = self.stem_relu.backward(&g)?;
        self.stem.backward(&g)
    }
}

impl Parameterized for Backbone {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<_> = prefixed("stem", self.stem.named_params()).collect();
        for (i, stage) in self.stages.iter().enumerate() {
            for (j, block) in stage.iter().enumerate() {
                out.extend(prefixed(&format!("stage{}.block{j}", i + 1), block.named_params()));
            }
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out: Vec<_> = prefixed_mut("stem", self.stem.named_params_mut()).collect();
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (j, block) in stage.iter_mut().enumerate() {
                out.extend(prefixed_mut(&format!("stage{}.block{j}", i + 1), block.named_params_mut()));
            }
        }
        out
    }
}
