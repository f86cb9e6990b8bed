//! Biometric evaluation: accuracy, confusion counts, ROC/AUC and CMC.
//!
//! The positive class is the attack ("fake") class, label 1. A sample is
//! flagged as an attack when its attack probability is strictly above 0.5,
//! which matches the lower-index tie rule of [`crate::train::predict`].

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("ROC needs both classes; got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("binary label must be 0 or 1, got {0}")]
    BadLabel(usize),
    #[error("score at index {0} is not finite")]
    NonFinite(usize),
    #[error("probe {probe} has {got} class scores, expected {expected}")]
    MissingClassScore {
        probe: usize,
        expected: usize,
        got: usize,
    },
    #[error("probe {probe} names class {class}, but only {classes} classes are scored")]
    ClassOutOfRange {
        probe: usize,
        class: usize,
        classes: usize,
    },
    #[error("{scores} score rows for {labels} true classes")]
    ProbeCount { scores: usize, labels: usize },
}

/// Attack samples detected as attacks are true positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples scoring at or above this are flagged positive.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Sorted by threshold descending, so fpr and tpr ascend.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    pub error_rate: f64,
    pub confusion: Confusion,
    /// `None` when only one class is present.
    pub roc: Option<RocCurve>,
    /// `(rank, identification rate)`, empty unless class scores were given.
    pub cmc: Vec<(usize, f64)>,
}

impl EvalReport {
    pub fn auc(&self) -> Option<f64> {
        self.roc.as_ref().map(|r| r.auc)
    }
}

fn check_binary(scores: &[(f64, usize)]) -> Result<(usize, usize), MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut pos = 0;
    for (i, &(s, label)) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(MetricsError::NonFinite(i));
        }
        match label {
            0 => {}
            1 => pos += 1,
            other => return Err(MetricsError::BadLabel(other)),
        }
    }
    Ok((pos, scores.len() - pos))
}

/// Exact ROC: one point per distinct score plus the +inf and -inf sentinels.
/// The area is the trapezoid sum, which counts tied pairs as one half.
pub fn roc_curve(scores: &[(f64, usize)]) -> Result<RocCurve, MetricsError> {
    let (positives, negatives) = check_binary(scores)?;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass {
            positives,
            negatives,
        });
    }
    let mut sorted: Vec<(f64, usize)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    // twice the trapezoid area in units of (negatives x positives)
    let mut doubled_area: u128 = 0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        let (tp0, fp0) = (tp, fp);
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        doubled_area += ((fp - fp0) * (tp + tp0)) as u128;
        points.push(RocPoint {
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
            threshold,
        });
    }
    points.push(RocPoint {
        fpr: 1.0,
        tpr: 1.0,
        threshold: f64::NEG_INFINITY,
    });
    let auc = doubled_area as f64 / (2.0 * p * n);
    Ok(RocCurve { points, auc })
}

/// Binary evaluation of attack probabilities. Accuracy is always
/// computed; the ROC is left out when only one class is present.
pub fn evaluate(scores: &[(f64, usize)]) -> Result<EvalReport, MetricsError> {
    check_binary(scores)?;
    let mut confusion = Confusion::default();
    for &(s, label) in scores {
        match (label == 1, s > 0.5) {
            (true, true) => confusion.tp += 1,
            (true, false) => confusion.fn_ += 1,
            (false, true) => confusion.fp += 1,
            (false, false) => confusion.tn += 1,
        }
    }
    let accuracy = (confusion.tp + confusion.tn) as f64 / scores.len() as f64;
    let roc = match roc_curve(scores) {
        Ok(roc) => Some(roc),
        Err(MetricsError::SingleClass { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        samples: scores.len(),
        accuracy,
        error_rate: 1.0 - accuracy,
        confusion,
        roc,
        cmc: Vec::new(),
    })
}

/// Cumulative match characteristic. The rate at rank `r` is the fraction of
/// probes whose true class is among their `r` best-scoring classes; equal
/// scores rank the lower class index first.
pub fn cmc(
    score_matrix: &[Vec<f64>],
    true_class: &[usize],
) -> Result<Vec<(usize, f64)>, MetricsError> {
    if score_matrix.is_empty() {
        return Err(MetricsError::Empty);
    }
    if score_matrix.len() != true_class.len() {
        return Err(MetricsError::ProbeCount {
            scores: score_matrix.len(),
            labels: true_class.len(),
        });
    }
    let classes = score_matrix[0].len();
    let mut hits_at_rank = vec![0usize; classes + 1];
    for (probe, (row, &truth)) in score_matrix.iter().zip(true_class).enumerate() {
        if row.len() != classes || classes == 0 {
            return Err(MetricsError::MissingClassScore {
                probe,
                expected: classes,
                got: row.len(),
            });
        }
        if truth >= classes {
            return Err(MetricsError::ClassOutOfRange {
                probe,
                class: truth,
                classes,
            });
        }
        if let Some(j) = row.iter().position(|s| !s.is_finite()) {
            return Err(MetricsError::NonFinite(probe * classes + j));
        }
        let target = row[truth];
        let ahead = row
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > target || (s == target && j < truth))
            .count();
        hits_at_rank[ahead + 1] += 1;
    }
    let probes = score_matrix.len() as f64;
    let mut cumulative = 0;
    Ok((1..=classes)
        .map(|rank| {
            cumulative += hits_at_rank[rank];
            (rank, cumulative as f64 / probes)
        })
        .collect())
}
