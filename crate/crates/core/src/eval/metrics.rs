use crate::error::{Error, Result};

/// Area under the ROC curve via the rank-sum statistic; tied scores get
/// their average rank, so ties count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(
            "auc",
            format!("{} scores for {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("auc: NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "auc needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            if labels[k] == 1 {
                rank_sum += mean_rank;
            }
        }
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn rmse(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(
            "rmse",
            format!("{} scores for {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("rmse over no predictions".into()));
    }
    let sse: f64 = scores
        .iter()
        .zip(labels)
        .map(|(s, &l)| (s - l as f64).powi(2))
        .sum();
    Ok((sse / scores.len() as f64).sqrt())
}
