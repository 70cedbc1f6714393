use crate::error::{contract, Result};
use crate::harness::kv::KvMap;

/// Binary confusion summary with class 1 as the positive class.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Rows are actual class (0, 1), columns predicted class (0, 1).
    pub rates: [[f64; 2]; 2],
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl MetricsReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Result<Self> {
        let total = tp + fp + fn_ + tn;
        if total == 0 {
            return contract("metrics over an empty dataset");
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        let row = |correct: u64, wrong: u64, correct_first: bool| {
            let n = correct + wrong;
            let (c, w) = (ratio(correct, n), ratio(wrong, n));
            if correct_first {
                [c, w]
            } else {
                [w, c]
            }
        };
        Ok(Self {
            tp,
            fp,
            fn_,
            tn,
            accuracy: ratio(tp + tn, total),
            precision,
            recall,
            f1,
            rates: [row(tn, fp, true), row(tp, fn_, false)],
        })
    }

    pub fn from_predictions(predicted: &[usize], actual: &[usize]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return contract(format!("{} predictions for {} labels", predicted.len(), actual.len()));
        }
        let mut c = [0u64; 4];
        for (&p, &a) in predicted.iter().zip(actual) {
            if p > 1 || a > 1 {
                return contract(format!("class index outside {{0,1}}: predicted {p}, actual {a}"));
            }
            c[a * 2 + p] += 1;
        }
        Self::from_counts(c[3], c[1], c[2], c[0])
    }

    /// Report for `per_class` examples of each class at the given per-class
    /// true rates (rounded to whole counts).
    pub fn from_rates(true_positive_rate: f64, true_negative_rate: f64, per_class: u64) -> Result<Self> {
        let tp = (true_positive_rate * per_class as f64).round() as u64;
        let tn = (true_negative_rate * per_class as f64).round() as u64;
        Self::from_counts(tp, per_class - tn, per_class - tp, tn)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        for (k, v) in [("tp", self.tp), ("fp", self.fp), ("fn", self.fn_), ("tn", self.tn)] {
            kv.set(k, v);
        }
        for (k, v) in
            [("accuracy", self.accuracy), ("precision", self.precision), ("recall", self.recall), ("f1", self.f1)]
        {
            kv.set(k, v);
        }
        for (r, row) in self.rates.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                kv.set(&format!("rate_{r}_{c}"), v);
            }
        }
        kv
    }
}
