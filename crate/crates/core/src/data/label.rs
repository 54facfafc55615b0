use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Frame-content classes. `SpaceOccupying` (polyps and tumors) is the only
/// positive class for the binary cascade metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    SpaceOccupying,
    Bleeding,
    Ulcer,
    Bubble,
    Residues,
    Normal,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 6] = [
        ClassLabel::SpaceOccupying,
        ClassLabel::Bleeding,
        ClassLabel::Ulcer,
        ClassLabel::Bubble,
        ClassLabel::Residues,
        ClassLabel::Normal,
    ];

    /// Number of recognition classes.
    pub const COUNT: usize = 6;

    /// Number of detection classes, background included at index 0.
    pub const DETECTION_COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Config(format!("class index {i} out of range")))
    }

    /// Detection index; 0 is reserved for background.
    pub fn detection_index(self) -> usize {
        self.index() + 1
    }

    pub fn from_detection_index(i: usize) -> Option<Self> {
        i.checked_sub(1).and_then(|j| Self::ALL.get(j).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::SpaceOccupying => "space_occupying",
            ClassLabel::Bleeding => "bleeding",
            ClassLabel::Ulcer => "ulcer",
            ClassLabel::Bubble => "bubble",
            ClassLabel::Residues => "residues",
            ClassLabel::Normal => "normal",
        }
    }

    /// Lesion classes survive the cascade; bubbles, residues and normal
    /// tissue are redundancy and get dropped.
    pub fn is_lesion(self) -> bool {
        matches!(
            self,
            ClassLabel::SpaceOccupying | ClassLabel::Bleeding | ClassLabel::Ulcer
        )
    }

    pub fn is_positive(self) -> bool {
        self == ClassLabel::SpaceOccupying
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown class label {s:?}")))
    }
}
