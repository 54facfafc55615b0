use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::Result;

/// A trainable array with a gradient slot of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    Relu,
    MaxPool,
    GlobalAvgPool,
    FullyConnected,
    Softmax,
    UpsampleNearest,
    Add,
    Concat,
    BatchNorm,
    RoiPool,
}

/// Single-input layer with cached forward state.
///
/// `backward` consumes the cache of the most recent `forward` and
/// accumulates parameter gradients into each [`Param::grad`].
pub trait Layer: Send {
    fn kind(&self) -> LayerKind;

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>>;

    fn forward(&mut self, input: &Tensor) -> Result<Tensor>;

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn set_training(&mut self, _training: bool) {}
}

/// Collects `(name, param)` pairs for checkpointing and optimization.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &Param)>;

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.numel()).sum()
    }

    /// Concatenated gradients in `named_params` order.
    fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, p) in self.named_params() {
            out.extend_from_slice(p.grad.data());
        }
        out
    }

    /// Adds `scale * flat` into the gradient slots, in `named_params` order.
    fn add_flat_grads(&mut self, flat: &[f64], scale: f64) {
        let mut offset = 0;
        for (_, p) in self.named_params_mut() {
            let g = p.grad.data_mut();
            let len = g.len();
            for (dst, src) in g.iter_mut().zip(&flat[offset..offset + len]) {
                *dst += scale * src;
            }
            offset += len;
        }
        debug_assert_eq!(offset, flat.len());
    }
}

pub(crate) fn prefixed<'a>(
    prefix: &str,
    items: Vec<(String, &'a Param)>,
) -> impl Iterator<Item = (String, &'a Param)> {
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, p)| (format!("{prefix}.{n}"), p))
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    items: Vec<(String, &'a mut Param)>,
) -> impl Iterator<Item = (String, &'a mut Param)> {
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, p)| (format!("{prefix}.{n}"), p))
}
