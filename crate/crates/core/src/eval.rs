//! ROC-AUC, threshold calibration and confusion-matrix metrics.
//!
//! Decision rule everywhere: an image is predicted anomalous iff
//! `score >= threshold`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Above this many scores `roc_auc` switches from exact pair counting to
/// the sorted trapezoidal sweep.
pub const PAIR_COUNT_LIMIT: usize = 10_000;

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::rejected(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::rejected(format!("score {s} is not a number")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::rejected(format!("label {l} is not binary")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

fn both_classes(scores: &[f64], labels: &[u8], what: &str) -> Result<(usize, usize)> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "{what} needs both classes, got {pos} anomalous and {neg} normal"
        )));
    }
    Ok((pos, neg))
}

/// Probability that a random anomalous score exceeds a random normal one,
/// ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    both_classes(scores, labels, "AUC")?;
    if scores.len() <= PAIR_COUNT_LIMIT {
        auc_pair_count(scores, labels)
    } else {
        auc_trapezoid(scores, labels)
    }
}

/// Exact Mann–Whitney pair counting, `O(P·N)`.
pub fn auc_pair_count(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = both_classes(scores, labels, "AUC")?;
    let positives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&s, _)| s)
        .collect();
    let negatives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    // Twice the win count keeps half-credit ties integral.
    let mut twice_wins: u64 = 0;
    for &p in &positives {
        for &n in &negatives {
            twice_wins += match p.partial_cmp(&n) {
                Some(Ordering::Greater) => 2,
                Some(Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    Ok(twice_wins as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Area under the empirical ROC curve by trapezoids over tie groups, sorted
/// by descending score. Equal to the pair-counting AUC.
pub fn auc_trapezoid(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = both_classes(scores, labels, "AUC")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut dtp, mut dfp) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                dtp += 1;
            } else {
                dfp += 1;
            }
            i += 1;
        }
        // trapezoid in count units: dfp · (tp + tp + dtp) / 2
        twice_area += dfp * (2 * tp + dtp);
        tp += dtp;
        fp += dfp;
    }
    debug_assert_eq!((tp as usize, fp as usize), (pos, neg));
    Ok(twice_area as f64 / (2.0 * pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn at(scores: &[f64], labels: &[u8], threshold: f64) -> Self {
        let mut c = Counts::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// F1 as the exact fraction `2TP / (2TP + FP + FN)` (0/0 reads as 0).
    fn f1_fraction(&self) -> (u128, u128) {
        let num = 2 * self.tp as u128;
        let den = num + self.fp as u128 + self.fn_ as u128;
        if den == 0 {
            (0, 1)
        } else {
            (num, den)
        }
    }

    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn f1(&self) -> f64 {
        let (n, d) = self.f1_fraction();
        n as f64 / d as f64
    }
}

/// Which quantity threshold calibration maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationRule {
    #[default]
    MaxF1,
    /// Youden's J = TPR − FPR.
    MaxYouden,
}

/// Candidate cut-points: −∞, midpoints between adjacent distinct sorted
/// scores, +∞.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out = Vec::with_capacity(sorted.len() + 1);
    out.push(f64::NEG_INFINITY);
    for w in sorted.windows(2) {
        out.push(w[0] + (w[1] - w[0]) / 2.0);
    }
    out.push(f64::INFINITY);
    out
}

/// Picks the cut-point maximizing the rule's objective; ties go to higher
/// recall, then to the lower threshold.
pub fn calibrate_threshold(scores: &[f64], labels: &[u8], rule: CalibrationRule) -> Result<f64> {
    let (pos, neg) = both_classes(scores, labels, "threshold calibration")?;
    let mut sorted: Vec<(f64, u8)> = scores.iter().cloned().zip(labels.iter().cloned()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sweep thresholds upward; `idx` = number of scores strictly below.
    let mut best: Option<(Counts, f64)> = None;
    let mut c = Counts {
        tp: pos,
        fp: neg,
        tn: 0,
        fn_: 0,
    };
    let mut idx = 0;
    let candidates = candidate_thresholds(scores);
    for &t in &candidates {
        while idx < sorted.len() && sorted[idx].0 < t {
            if sorted[idx].1 == 1 {
                c.tp -= 1;
                c.fn_ += 1;
            } else {
                c.fp -= 1;
                c.tn += 1;
            }
            idx += 1;
        }
        let better = match &best {
            None => true,
            Some((b, _)) => match compare_objective(&c, b, rule, pos, neg) {
                Ordering::Greater => true,
                Ordering::Equal => c.tp > b.tp,
                Ordering::Less => false,
            },
        };
        if better {
            best = Some((c, t));
        }
    }
    Ok(best.expect("at least two candidates").1)
}

fn compare_objective(a: &Counts, b: &Counts, rule: CalibrationRule, pos: usize, neg: usize) -> Ordering {
    match rule {
        CalibrationRule::MaxF1 => {
            let (an, ad) = a.f1_fraction();
            let (bn, bd) = b.f1_fraction();
            (an * bd).cmp(&(bn * ad))
        }
        CalibrationRule::MaxYouden => {
            // TP/P − FP/N compared as TP·N − FP·P
            let ja = a.tp as i128 * neg as i128 - a.fp as i128 * pos as i128;
            let jb = b.tp as i128 * neg as i128 - b.fp as i128 * pos as i128;
            ja.cmp(&jb)
        }
    }
}

mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad threshold {other}"))),
            },
        }
    }
}

/// Test-split metrics at a fixed threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` when the test split holds a single class.
    pub auc: Option<f64>,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_test: usize,
    pub config_digest: String,
    /// Metrics whose denominator was zero and are reported as 0.
    pub undefined: Vec<String>,
}

pub fn confusion_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::rejected("confusion metrics of an empty test set"));
    }
    let c = Counts::at(scores, labels, threshold);
    let mut undefined = Vec::new();
    let precision = c.precision().unwrap_or_else(|| {
        undefined.push("precision".to_string());
        0.0
    });
    let recall = c.recall().unwrap_or_else(|| {
        undefined.push("recall".to_string());
        0.0
    });
    let auc = if pos > 0 && neg > 0 {
        Some(roc_auc(scores, labels)?)
    } else {
        undefined.push("auc".to_string());
        None
    };
    Ok(MetricsReport {
        auc,
        f1: c.f1(),
        precision,
        recall,
        threshold,
        tp: c.tp,
        fp: c.fp,
        tn: c.tn,
        fn_: c.fn_,
        n_test: c.total(),
        config_digest: String::new(),
        undefined,
    })
}
