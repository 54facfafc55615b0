use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{decode_clamped, nms_indices, AnchorGrid, BBox, BoxDelta, DEFAULT_DELTA_CLAMP};
use crate::geometry::rank_order;
use crate::nn::{prefixed, prefixed_mut, softmax_rows, Conv2d, Layer, Param, Parameterized, Relu, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RpnHeadConfig {
    /// Extra 3x3 conv + ReLU layers before the two sibling 1x1 outputs.
    pub intermediate_conv_count: usize,
    pub channels: usize,
    pub anchors_per_position: usize,
}

impl Default for RpnHeadConfig {
    fn default() -> Self {
        Self {
            intermediate_conv_count: 1,
            channels: 32,
            anchors_per_position: 2,
        }
    }
}

/// Objectness and box-delta predictor over one feature map.
///
/// Output rows follow anchor-grid order: row `(y * w + x) * A + a`.
#[derive(Clone, Debug)]
pub struct RpnHead {
    pub config: RpnHeadConfig,
    pub convs: Vec<Conv2d>,
    relus: Vec<Relu>,
    pub cls: Conv2d,
    pub reg: Conv2d,
    cached_hw: Option<(usize, usize)>,
}

/// Conv output `[1, A*k, h, w]` to `[h*w*A, k]`.
fn to_rows(t: &Tensor, a: usize, k: usize) -> Result<Tensor> {
    let (_, c, h, w) = t.dims4("rpn output")?;
    debug_assert_eq!(c, a * k);
    let hw = h * w;
    let mut out = vec![0.0; hw * a * k];
    for ch in 0..c {
        let (anchor, j) = (ch / k, ch % k);
        for p in 0..hw {
            out[(p * a + anchor) * k + j] = t.data()[ch * hw + p];
        }
    }
    Tensor::new(vec![hw * a, k], out)
}

fn from_rows(t: &Tensor, a: usize, k: usize, h: usize, w: usize) -> Result<Tensor> {
    let hw = h * w;
    t.expect_shape("rpn backward", &[hw * a, k])?;
    let mut out = vec![0.0; hw * a * k];
    for ch in 0..a * k {
        let (anchor, j) = (ch / k, ch % k);
        for p in 0..hw {
            out[ch * hw + p] = t.data()[(p * a + anchor) * k + j];
        }
    }
    Tensor::new(vec![1, a * k, h, w], out)
}

impl RpnHead {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, config: RpnHeadConfig, rng: &mut R) -> Result<Self> {
        if config.anchors_per_position == 0 || config.channels == 0 {
            return Err(Error::Config("RPN needs positive channels and anchors per position".into()));
        }
        let mut convs = Vec::new();
        let mut c = in_channels;
        for _ in 0..config.intermediate_conv_count {
            convs.push(Conv2d::new(c, config.channels, 3, 1, 1, rng));
            c = config.channels;
        }
        let a = config.anchors_per_position;
        let small = |o: usize, std: f64, rng: &mut R| {
            Conv2d::from_weights(Tensor::randn(&[o, c, 1, 1], std, rng), Tensor::zeros(&[o]), 1, 0)
        };
        let cls = small(2 * a, 0.01, rng)?;
        let reg = small(4 * a, 0.001, rng)?;
        Ok(Self {
            relus: vec![Relu::new(); convs.len()],
            convs,
            cls,
            reg,
            cached_hw: None,
            config,
        })
    }

    /// Returns `(objectness logits [h*w*A, 2], deltas [h*w*A, 4])`.
    pub fn forward(&mut self, feature: &Tensor) -> Result<(Tensor, Tensor)> {
        let (n, _, h, w) = feature.dims4("rpn")?;
        if n != 1 {
            return Err(Error::shape("rpn", "[1, C, H, W]", format!("{:?}", feature.shape())));
        }
        let mut x = feature.clone();
        for (conv, relu) in self.convs.iter_mut().zip(&mut self.relus) {
            x = relu.forward(&conv.forward(&x)?)?;
        }
        let a = self.config.anchors_per_position;
        let logits = to_rows(&self.cls.forward(&x)?, a, 2)?;
        let deltas = to_rows(&self.reg.forward(&x)?, a, 4)?;
        self.cached_hw = Some((h, w));
        Ok((logits, deltas))
    }

    pub fn backward(&mut self, grad_logits: &Tensor, grad_deltas: &Tensor) -> Result<Tensor> {
        let (h, w) = self
            .cached_hw
            .take()
            .ok_or_else(|| Error::State("rpn backward called before forward".into()))?;
        let a = self.config.anchors_per_position;
        let mut g = self.cls.backward(&from_rows(grad_logits, a, 2, h, w)?)?;
        g.add_assign(&self.reg.backward(&from_rows(grad_deltas, a, 4, h, w)?)?)?;
        for (conv, relu) in self.convs.iter_mut().zip(&mut self.relus).rev() {
            g = conv.backward(&relu.backward(&g)?)?;
        }
        Ok(g)
    }
}

impl Parameterized for RpnHead {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.extend(prefixed(&format!("conv{i}"), c.named_params()));
        }
        out.extend(prefixed("cls", self.cls.named_params()));
        out.extend(prefixed("reg", self.reg.named_params()));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.extend(prefixed_mut(&format!("conv{i}"), c.named_params_mut()));
        }
        out.extend(prefixed_mut("cls", self.cls.named_params_mut()));
        out.extend(prefixed_mut("reg", self.reg.named_params_mut()));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalConfig {
    pub pre_nms_top_n: usize,
    pub post_nms_top_n: usize,
    /// Class-agnostic IoU threshold of the RPN-internal filter; `None`
    /// disables it.
    pub nms_iou: Option<f64>,
    pub delta_clamp: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            pre_nms_top_n: 300,
            post_nms_top_n: 32,
            nms_iou: Some(0.7),
            delta_clamp: DEFAULT_DELTA_CLAMP,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    pub anchor_index: usize,
}

/// Decodes RPN outputs into scored, clipped, filtered proposals.
pub fn propose(
    objectness: &Tensor,
    deltas: &Tensor,
    grid: &AnchorGrid,
    config: &ProposalConfig,
) -> Result<Vec<Proposal>> {
    let n = grid.len();
    objectness.expect_shape("propose objectness", &[n, 2])?;
    deltas.expect_shape("propose deltas", &[n, 4])?;
    let probs = softmax_rows(objectness)?;
    let (h, w) = grid.image_size;
    let mut candidates: Vec<Proposal> = grid
        .anchors
        .iter()
        .enumerate()
        .filter_map(|(i, anchor)| {
            let b = decode_clamped(anchor, &BoxDelta::from_slice(deltas.row(i)), config.delta_clamp)
                .clip(w as f64, h as f64);
            (!b.is_degenerate()).then(|| Proposal {
                bbox: b,
                score: probs.row(i)[1],
                anchor_index: i,
            })
        })
        .collect();
    if let Some(p) = candidates.iter().find(|p| !p.score.is_finite()) {
        return Err(Error::NonFinite(format!("objectness score at anchor {}", p.anchor_index)));
    }
    // stable: equal keys keep anchor order
    candidates.sort_by(|a, b| rank_order(a.score, &a.bbox, b.score, &b.bbox));
    candidates.truncate(config.pre_nms_top_n);
    if let Some(thr) = config.nms_iou {
        let boxes: Vec<BBox> = candidates.iter().map(|p| p.bbox).collect();
        let scores: Vec<f64> = candidates.iter().map(|p| p.score).collect();
        let keep = nms_indices(&boxes, &scores, thr)?;
        candidates = keep.into_iter().map(|i| candidates[i]).collect();
    }
    candidates.truncate(config.post_nms_top_n);
    Ok(candidates)
}
