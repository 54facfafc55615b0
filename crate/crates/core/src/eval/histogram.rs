use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::{Error, Result};

/// 2D histogram of box (width, height). Sizes past the last bin edge are
/// counted in the last bin, so the total always equals the box count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeHistogram {
    pub bin_width: f64,
    /// `counts[w][h]`
    pub counts: Vec<Vec<u64>>,
}

impl SizeHistogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// `[lo, hi)` edges of bin `i`.
    pub fn bin_range(&self, i: usize) -> (f64, f64) {
        (i as f64 * self.bin_width, (i + 1) as f64 * self.bin_width)
    }

    /// Most populated (width bin, height bin); ties go to the smaller
    /// indices. `None` when empty.
    pub fn mode(&self) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), u64)> = None;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c > 0 && best.is_none_or(|(_, b)| c > b) {
                    best = Some(((i, j), c));
                }
            }
        }
        best.map(|(ij, _)| ij)
    }

    /// Marginal counts over width (`axis = 0`) or height (`axis = 1`).
    pub fn marginal(&self, axis: usize) -> Vec<u64> {
        let n = self.bins();
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|o| if axis == 0 { self.counts[k][o] } else { self.counts[o][k] })
                    .sum()
            })
            .collect()
    }
}

pub fn box_size_histogram(boxes: &[BBox], bin_width: f64, bins: usize) -> Result<SizeHistogram> {
    if !(bin_width.is_finite() && bin_width > 0.0) || bins == 0 {
        return Err(Error::Config(format!(
            "histogram needs a positive bin width and at least one bin, got {bin_width} x {bins}"
        )));
    }
    let mut counts = vec![vec![0u64; bins]; bins];
    let bin = |v: f64| ((v / bin_width).floor().max(0.0) as usize).min(bins - 1);
    for b in boxes {
        b.validate()?;
        counts[bin(b.width())][bin(b.height())] += 1;
    }
    Ok(SizeHistogram { bin_width, counts })
}
