use crate::error::{Error, Result};

use super::{LabeledScores, LinearClassifier};

/// Mann-Whitney AUC of `values` for separating label 1 from label 0; tied
/// pairs count one half.
pub fn auc(values: &[f64], labels: &[u8]) -> Result<f64> {
    if values.len() != labels.len() {
        return Err(Error::CaseMismatch(format!(
            "{} values for {} labels",
            values.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|l| **l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassTest);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    // average ranks (1-based) over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// AUC of a classifier's decision values on a test set.
pub fn roc_auc(clf: &LinearClassifier, test: &LabeledScores) -> Result<f64> {
    auc(&clf.decision_values(&test.features)?, &test.labels)
}
