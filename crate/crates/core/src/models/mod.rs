//! Network bodies: residual backbone, region proposal head, RoI detection
//! head and the pyramid-fused recognition network.

mod backbone;
mod detector;
mod head;
mod recognition;
mod rpn;

pub use backbone::{Backbone, BackboneConfig, ResidualBlock};
pub use detector::{Detector, DetectorConfig, DetectorOutput};
pub use head::{DetectionHead, DetectionHeadConfig, HeadLabelMode};
pub use recognition::{FpnConfig, RecognitionConfig, RecognitionNet};
pub use rpn::{propose, Proposal, ProposalConfig, RpnHead, RpnHeadConfig};

#[cfg(test)]
mod tests;
