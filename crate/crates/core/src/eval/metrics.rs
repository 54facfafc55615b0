use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Binary confusion counts at one evaluation level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    /// Builds a matrix from signed counts, rejecting negatives.
    pub fn from_signed(tp: i64, fp: i64, tn: i64, fn_: i64) -> Result<Self> {
        let conv = |name: &str, v: i64| {
            u64::try_from(v).map_err(|_| Error::Metric(format!("negative {name} count {v}")))
        };
        Ok(Self {
            tp: conv("tp", tp)?,
            fp: conv("fp", fp)?,
            tn: conv("tn", tn)?,
            fn_: conv("fn", fn_)?,
        })
    }

    /// Adds one observation.
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn actual_positive(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn actual_negative(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn predicted_positive(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn predicted_negative(&self) -> u64 {
        self.fn_ + self.tn
    }
}

impl Add for ConfusionMatrix {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.tn + o.tn, self.fn_ + o.fn_)
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tp={} fp={} tn={} fn={}", self.tp, self.fp, self.tn, self.fn_)
    }
}

/// Rates in `[0, 1]`. A rate whose denominator is zero is `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub sensitivity: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> MetricSet {
    MetricSet {
        sensitivity: ratio(cm.tp, cm.actual_positive()),
        false_positive_rate: ratio(cm.fp, cm.actual_negative()),
        specificity: ratio(cm.tn, cm.actual_negative()),
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalLevel {
    Rpn,
    Image,
    Patient,
}

impl EvalLevel {
    pub const ALL: [EvalLevel; 3] = [EvalLevel::Rpn, EvalLevel::Image, EvalLevel::Patient];

    pub fn name(self) -> &'static str {
        match self {
            EvalLevel::Rpn => "rpn",
            EvalLevel::Image => "image",
            EvalLevel::Patient => "patient",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            EvalLevel::Rpn => "RPN level",
            EvalLevel::Image => "Image level",
            EvalLevel::Patient => "Patient level",
        }
    }
}

impl fmt::Display for EvalLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
