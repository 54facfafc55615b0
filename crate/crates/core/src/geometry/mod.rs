//! Box arithmetic, anchors, box-delta coding, proposal matching and
//! non-maximum suppression.
//!
//! All functions here are pure and operate on immutable inputs.

mod anchors;
mod bbox;
mod coder;
mod matching;
mod nms;

pub use anchors::{generate_anchors, AnchorGrid, AnchorSpec};
pub use bbox::{iou, iou_checked, overlap_fraction, BBox, Detection, Iou};
pub use coder::{decode, decode_clamped, encode, BoxDelta, DEFAULT_DELTA_CLAMP};
pub use matching::{match_proposals, MatchCriterion, MatchResult};
pub use nms::{nms, nms_indices};
pub(crate) use nms::rank_order;
