use serde::{Deserialize, Serialize};

use super::{iou, overlap_fraction, BBox};
use crate::data::ClassLabel;
use crate::{Error, Result};

/// Rule deciding whether a proposal overlaps a ground-truth box enough to
/// count as matched.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatchCriterion {
    /// IoU at least `threshold` (and strictly positive).
    Iou { threshold: f64 },
    /// Intersection over ground-truth area strictly above `threshold`.
    OverlapFraction { threshold: f64 },
}

impl Default for MatchCriterion {
    fn default() -> Self {
        MatchCriterion::Iou { threshold: 0.6 }
    }
}

impl MatchCriterion {
    pub fn threshold(&self) -> f64 {
        match *self {
            MatchCriterion::Iou { threshold } | MatchCriterion::OverlapFraction { threshold } => {
                threshold
            }
        }
    }

    pub fn with_threshold(self, threshold: f64) -> Self {
        match self {
            MatchCriterion::Iou { .. } => MatchCriterion::Iou { threshold },
            MatchCriterion::OverlapFraction { .. } => MatchCriterion::OverlapFraction { threshold },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.threshold();
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("match threshold {t} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn statistic(&self, proposal: &BBox, gt: &BBox) -> Result<f64> {
        match self {
            MatchCriterion::Iou { .. } => Ok(iou(proposal, gt)),
            MatchCriterion::OverlapFraction { .. } => overlap_fraction(proposal, gt),
        }
    }

    pub fn passes(&self, statistic: f64) -> bool {
        match *self {
            MatchCriterion::Iou { threshold } => statistic > 0.0 && statistic >= threshold,
            MatchCriterion::OverlapFraction { threshold } => {
                statistic > 0.0 && statistic > threshold
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Matched ground-truth index per proposal; `None` is background.
    pub assignments: Vec<Option<usize>>,
    /// Best statistic per proposal, whether or not it passed.
    pub best_statistic: Vec<f64>,
    /// Whether any proposal matched each ground truth.
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn matched_count(&self) -> usize {
        self.assignments.iter().filter(|a| a.is_some()).count()
    }
}

/// Assigns each proposal to the ground truth maximizing the criterion
/// statistic when it passes the threshold. Ties go to the lower gt index.
pub fn match_proposals(
    proposals: &[BBox],
    gts: &[(BBox, ClassLabel)],
    criterion: &MatchCriterion,
) -> Result<MatchResult> {
    criterion.validate()?;
    for p in proposals {
        p.validate()?;
    }
    for (g, _) in gts {
        g.validate()?;
    }
    let mut assignments = Vec::with_capacity(proposals.len());
    let mut best_statistic = Vec::with_capacity(proposals.len());
    let mut gt_matched = vec![false; gts.len()];
    for p in proposals {
        let mut best: Option<(usize, f64)> = None;
        for (gi, (g, _)) in gts.iter().enumerate() {
            let s = criterion.statistic(p, g)?;
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((gi, s));
            }
        }
        match best {
            Some((gi, s)) if criterion.passes(s) => {
                gt_matched[gi] = true;
                assignments.push(Some(gi));
                best_statistic.push(s);
            }
            Some((_, s)) => {
                assignments.push(None);
                best_statistic.push(s);
            }
            None => {
                assignments.push(None);
                best_statistic.push(0.0);
            }
        }
    }
    Ok(MatchResult {
        assignments,
        best_statistic,
        gt_matched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn identical_proposal_matches() {
        let g = b(10.0, 10.0, 30.0, 30.0);
        let r = match_proposals(&[g], &[(g, ClassLabel::SpaceOccupying)], &MatchCriterion::default())
            .unwrap();
        assert_eq!(r.assignments, vec![Some(0)]);
        assert_eq!(r.gt_matched, vec![true]);
    }

    #[test]
    fn below_threshold_is_background() {
        // width 20 gt vs proposal shifted so IoU = 0.55:
        // inter = 20*(20 - s), union = 800 - inter  => s = 20*(1 - 2*0.55/1.55)
        let s = 20.0 * (1.0 - 1.1 / 1.55);
        let g = b(0.0, 0.0, 20.0, 20.0);
        let p = b(s, 0.0, 20.0 + s, 20.0);
        assert!((iou(&p, &g) - 0.55).abs() < 1e-9);
        let r = match_proposals(&[p], &[(g, ClassLabel::SpaceOccupying)], &MatchCriterion::default())
            .unwrap();
        assert_eq!(r.assignments, vec![None]);
        assert_eq!(r.gt_matched, vec![false]);
    }

    #[test]
    fn zero_threshold_requires_positive_overlap() {
        let g = b(0.0, 0.0, 10.0, 10.0);
        let touching = b(9.0, 9.0, 40.0, 40.0);
        let far = b(50.0, 50.0, 60.0, 60.0);
        let r = match_proposals(
            &[touching, far],
            &[(g, ClassLabel::Bubble)],
            &MatchCriterion::Iou { threshold: 0.0 },
        )
        .unwrap();
        assert_eq!(r.assignments, vec![Some(0), None]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let g = b(0.0, 0.0, 10.0, 10.0);
        let r = match_proposals(
            &[g],
            &[(g, ClassLabel::Bubble), (g, ClassLabel::Ulcer)],
            &MatchCriterion::default(),
        )
        .unwrap();
        assert_eq!(r.assignments, vec![Some(0)]);
        assert_eq!(r.gt_matched, vec![true, false]);
    }

    #[test]
    fn overlap_fraction_rule_is_strict() {
        let g = b(0.0, 0.0, 10.0, 10.0);
        let p = b(0.0, 0.0, 6.0, 10.0);
        let c = MatchCriterion::OverlapFraction { threshold: 0.6 };
        let r = match_proposals(&[p], &[(g, ClassLabel::SpaceOccupying)], &c).unwrap();
        assert_eq!(r.assignments, vec![None]);
        let p = b(0.0, 0.0, 7.0, 10.0);
        let r = match_proposals(&[p], &[(g, ClassLabel::SpaceOccupying)], &c).unwrap();
        assert_eq!(r.assignments, vec![Some(0)]);
    }
}
