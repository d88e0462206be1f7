use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann-Whitney statistic with midranks for
/// ties, i.e. `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {i} passed to auc_roc")));
    }
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::UndefinedMetric(format!("AUC needs both classes, got n0={n0}, n1={n1}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives keeps midranks integral.
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        let pos = order[i..=j].iter().filter(|&&o| labels[o] == 1).count() as u128;
        rank2_pos += mid2 * pos;
        i = j + 1;
    }
    let (n1, n0) = (n1 as u128, n0 as u128);
    let u2 = rank2_pos - n1 * (n1 + 1);
    Ok(u2 as f64 / (2 * n1 * n0) as f64)
}
