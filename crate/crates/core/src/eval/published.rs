//! Published clinical-scale confusion matrices and the metric triples
//! reported for them, used as fixed reference checks for [`metrics`].

use serde::Serialize;

use super::metrics::{metrics, ConfusionMatrix};

/// Allowed gap, in percentage points, between a computed metric and its
/// two-decimal published value.
pub const TOLERANCE_PP: f64 = 0.05;

/// Published (sensitivity, FPR, accuracy) triple, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PercentTriple {
    pub sensitivity: f64,
    pub fpr: f64,
    pub accuracy: f64,
}

/// Row and column totals as printed next to a matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrintedTotals {
    pub predicted_positive: u64,
    pub predicted_negative: u64,
    pub actual_positive: u64,
    pub actual_negative: u64,
    pub grand: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PublishedMatrix {
    pub name: &'static str,
    pub cm: ConfusionMatrix,
    pub totals: PrintedTotals,
    pub reported: PercentTriple,
}

pub const PUBLISHED: [PublishedMatrix; 4] = [
    PublishedMatrix {
        name: "detection stage, original test set",
        cm: ConfusionMatrix { tp: 2873, fp: 53822, tn: 799617, fn_: 50 },
        totals: PrintedTotals {
            predicted_positive: 56695,
            predicted_negative: 799667,
            actual_positive: 2923,
            // FP + TN is 853,439; this printed value is a transcription slip.
            actual_negative: 853499,
            grand: 856362,
        },
        reported: PercentTriple { sensitivity: 98.28, fpr: 6.3, accuracy: 93.71 },
    },
    PublishedMatrix {
        name: "recognition stage, original test set",
        cm: ConfusionMatrix { tp: 2863, fp: 46516, tn: 806923, fn_: 60 },
        totals: PrintedTotals {
            predicted_positive: 49379,
            predicted_negative: 806983,
            actual_positive: 2923,
            actual_negative: 853439,
            grand: 856362,
        },
        reported: PercentTriple { sensitivity: 97.95, fpr: 5.45, accuracy: 94.56 },
    },
    PublishedMatrix {
        name: "recognition stage, added test set",
        cm: ConfusionMatrix { tp: 2221, fp: 61138, tn: 1026521, fn_: 28 },
        totals: PrintedTotals {
            predicted_positive: 63359,
            predicted_negative: 1026549,
            actual_positive: 2249,
            actual_negative: 1087659,
            grand: 1089908,
        },
        reported: PercentTriple { sensitivity: 98.75, fpr: 5.62, accuracy: 94.39 },
    },
    PublishedMatrix {
        name: "full cascade, combined test set",
        cm: ConfusionMatrix { tp: 5084, fp: 107654, tn: 1833444, fn_: 88 },
        totals: PrintedTotals {
            predicted_positive: 112738,
            predicted_negative: 1833532,
            actual_positive: 5172,
            actual_negative: 1941098,
            grand: 1946270,
        },
        reported: PercentTriple { sensitivity: 98.30, fpr: 5.55, accuracy: 94.46 },
    },
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Computed (sensitivity, FPR, accuracy) in percent.
pub fn computed_triple(cm: &ConfusionMatrix) -> Option<PercentTriple> {
    let m = metrics(cm);
    Some(PercentTriple {
        sensitivity: 100.0 * m.sensitivity?,
        fpr: 100.0 * m.false_positive_rate?,
        accuracy: 100.0 * m.accuracy?,
    })
}

/// Metric triple of `p` within [`TOLERANCE_PP`] of its reported values.
pub fn check_metrics(p: &PublishedMatrix) -> CheckResult {
    let (passed, detail) = match computed_triple(&p.cm) {
        Some(c) => {
            let ok = |a: f64, b: f64| (a - b).abs() <= TOLERANCE_PP;
            let r = p.reported;
            (
                ok(c.sensitivity, r.sensitivity) && ok(c.fpr, r.fpr) && ok(c.accuracy, r.accuracy),
                format!(
                    "sen {:.3} vs {:.2}, FPR {:.3} vs {:.2}, acc {:.3} vs {:.2} (tolerance {TOLERANCE_PP} pp)",
                    c.sensitivity, r.sensitivity, c.fpr, r.fpr, c.accuracy, r.accuracy
                ),
            )
        }
        None => (false, "undefined metric".into()),
    };
    CheckResult { name: format!("metrics of {}", p.name), passed, detail }
}

/// The four cell counts reproduce the printed row totals, the actual-positive
/// total and the grand total. The actual-negative total is implied by these
/// and is reported separately by [`printed_negative_total_note`].
pub fn check_totals(p: &PublishedMatrix) -> CheckResult {
    let (cm, t) = (&p.cm, &p.totals);
    let passed = cm.predicted_positive() == t.predicted_positive
        && cm.predicted_negative() == t.predicted_negative
        && cm.actual_positive() == t.actual_positive
        && cm.total() == t.grand;
    CheckResult {
        name: format!("totals of {}", p.name),
        passed,
        detail: format!(
            "rows {}/{} vs {}/{}, actual positive {} vs {}, grand {} vs {}",
            cm.predicted_positive(),
            cm.predicted_negative(),
            t.predicted_positive,
            t.predicted_negative,
            cm.actual_positive(),
            t.actual_positive,
            cm.total(),
            t.grand
        ),
    }
}

/// Describes a printed actual-negative total that disagrees with FP + TN.
pub fn printed_negative_total_note(p: &PublishedMatrix) -> Option<String> {
    (p.cm.actual_negative() != p.totals.actual_negative).then(|| {
        format!(
            "note: {} prints an actual-negative total of {} but FP + TN = {}",
            p.name,
            p.totals.actual_negative,
            p.cm.actual_negative()
        )
    })
}

/// All eight reference checks: one metric triple and one totals check per
/// published matrix.
pub fn all_checks() -> Vec<CheckResult> {
    PUBLISHED
        .iter()
        .flat_map(|p| [check_metrics(p), check_totals(p)])
        .collect()
}
