use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("metric needs at least one sample")]
    EmptyInput,
    #[error("AUC needs both classes present")]
    SingleClassInput,
    #[error("prediction and truth lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label {0} outside 0..{1}; masked rows must be removed first")]
    LabelOutOfRange(i64, usize),
}

type Result<T> = std::result::Result<T, MetricError>;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(MetricError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

/// Rank-based (Mann–Whitney) area under the ROC curve; tied scores share the
/// average of their ranks.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClassInput);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn accuracy<L: PartialEq>(pred: &[L], truth: &[L]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 of the positive class `1`; 0 when undefined.
pub fn f1_binary(pred: &[u8], truth: &[u8]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(f1(tp, fp, fn_))
}

/// Per-class `(f1, support)` over every class present in truth or predictions.
fn per_class(pred: &[i64], truth: &[i64], n_classes: usize) -> Result<BTreeMap<i64, (f64, usize)>> {
    check_lengths(pred.len(), truth.len())?;
    for &l in pred.iter().chain(truth) {
        if l < 0 || l as usize >= n_classes {
            return Err(MetricError::LabelOutOfRange(l, n_classes));
        }
    }
    let mut counts: BTreeMap<i64, (usize, usize, usize)> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            counts.entry(t).or_default().0 += 1;
        } else {
            counts.entry(p).or_default().1 += 1;
            counts.entry(t).or_default().2 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(c, (tp, fp, fn_))| (c, (f1(tp, fp, fn_), tp + fn_)))
        .collect())
}

/// Unweighted mean of per-class F1 over the classes that appear in truth or
/// predictions.
pub fn f1_macro(pred: &[i64], truth: &[i64], n_classes: usize) -> Result<f64> {
    let classes = per_class(pred, truth, n_classes)?;
    Ok(classes.values().map(|(f, _)| f).sum::<f64>() / classes.len() as f64)
}

/// Support-weighted mean of per-class F1.
pub fn f1_weighted(pred: &[i64], truth: &[i64], n_classes: usize) -> Result<f64> {
    let classes = per_class(pred, truth, n_classes)?;
    let total: usize = classes.values().map(|(_, s)| s).sum();
    Ok(classes.values().map(|(f, s)| f * *s as f64).sum::<f64>() / total as f64)
}

/// Number of classes entering [`f1_macro`].
pub fn class_universe(pred: &[i64], truth: &[i64]) -> usize {
    pred.iter()
        .chain(truth)
        .collect::<std::collections::BTreeSet<_>>()
        .len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_extremes_and_ties() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert_eq!(
            roc_auc(&[0.5, 0.7], &[1, 1]),
            Err(MetricError::SingleClassInput)
        );
        assert_eq!(roc_auc(&[], &[]), Err(MetricError::EmptyInput));
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1_macro(&[0, 1, 2], &[0, 1, 2], 86).unwrap(), 1.0);
        assert_eq!(f1_macro(&[1, 0, 1], &[0, 1, 0], 86).unwrap(), 0.0);
        assert_eq!(accuracy(&[3, 3], &[3, 3]).unwrap(), 1.0);
        assert_eq!(f1_binary(&[0, 0], &[0, 0]).unwrap(), 0.0);
        assert_eq!(f1_weighted(&[0, 0, 1], &[0, 0, 1], 2).unwrap(), 1.0);
        assert_eq!(
            f1_macro(&[-1], &[0], 86),
            Err(MetricError::LabelOutOfRange(-1, 86))
        );
        assert_eq!(f1_macro(&[], &[], 86), Err(MetricError::EmptyInput));
    }
}
