//! Dense tensors, the layer set used by the detection and recognition
//! networks, reverse-mode gradients, momentum SGD and checkpoints.

mod checkpoint;
mod conv;
mod dense;
mod gemm;
pub mod gradcheck;
mod layer;
mod norm;
mod optim;
mod roi;
mod simple;
mod tensor;

pub use checkpoint::{Checkpoint, TransferReport};
pub use conv::Conv2d;
pub use dense::Linear;
pub use layer::{Layer, LayerKind, Param, Parameterized};
pub(crate) use layer::{prefixed, prefixed_mut};
pub use norm::BatchNorm2d;
pub use optim::{sgd_step, LrSchedule, Sgd, SgdConfig};
pub use roi::RoiPool;
pub use simple::{softmax_rows, Add, Concat, GlobalAvgPool, MaxPool2d, Relu, Softmax, UpsampleNearest};
pub use tensor::Tensor;
