use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AnnotatedFrame, ClassLabel};
use crate::seed::stream_rng;
use crate::{Error, Result};

/// `train : val` proportions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: u32,
    pub val: u32,
}

impl SplitRatio {
    pub const DETECTION: SplitRatio = SplitRatio { train: 9, val: 1 };
    pub const RECOGNITION: SplitRatio = SplitRatio { train: 8, val: 2 };

    pub fn validate(self) -> Result<()> {
        if self.train + self.val == 0 {
            return Err(Error::Config("split ratio 0:0".into()));
        }
        Ok(())
    }

    pub fn train_fraction(self) -> f64 {
        self.train as f64 / (self.train + self.val) as f64
    }
}

/// Shuffles each stratum with a seeded stream and hands out training slots
/// by largest remainder, so the overall training count is
/// `round(n * train_fraction)` and each stratum is within one item of its
/// exact share.
pub fn stratified_split<T>(
    items: Vec<T>,
    key: impl Fn(&T) -> usize,
    ratio: SplitRatio,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    ratio.validate()?;
    if items.is_empty() {
        return Err(Error::EmptyInput("nothing to split".into()));
    }
    let frac = ratio.train_fraction();
    let n = items.len();
    let mut groups: BTreeMap<usize, Vec<T>> = BTreeMap::new();
    for item in items {
        groups.entry(key(&item)).or_default().push(item);
    }
    let total_train = (n as f64 * frac).round() as usize;
    let mut quotas: Vec<(usize, usize, f64)> = groups
        .iter()
        .map(|(&k, g)| {
            let exact = g.len() as f64 * frac;
            (k, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut remaining = total_train - quotas.iter().map(|q| q.1).sum::<usize>();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for i in order {
        if remaining == 0 {
            break;
        }
        if quotas[i].2 > 0.0 {
            quotas[i].1 += 1;
            remaining -= 1;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for ((k, mut group), (_, quota, _)) in groups.into_iter().zip(quotas) {
        group.shuffle(&mut stream_rng(seed, &[k as u64]));
        let rest = group.split_off(quota.min(group.len()));
        train.extend(group);
        val.extend(rest);
    }
    Ok((train, val))
}

/// Stratum of a frame: its first label in class order, or a separate
/// stratum for frames without objects.
pub fn frame_stratum(frame: &AnnotatedFrame) -> usize {
    frame
        .objects
        .iter()
        .map(|o| o.label.index())
        .min()
        .unwrap_or(ClassLabel::COUNT)
}

/// Deterministic 9:1 (by default) split preserving per-class proportions.
pub fn split_detection(
    frames: Vec<AnnotatedFrame>,
    ratio: SplitRatio,
    seed: u64,
) -> Result<(Vec<AnnotatedFrame>, Vec<AnnotatedFrame>)> {
    stratified_split(frames, frame_stratum, ratio, seed)
}
