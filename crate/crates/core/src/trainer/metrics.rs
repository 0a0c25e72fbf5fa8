// SPDX-License-Identifier: Apache-2.0

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    /// One-vs-rest AUC; `None` when the class has no positives or no
    /// negatives in the data.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean of the defined per-class AUCs.
    pub mean_auc: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Predicted class per sample.
    pub predictions: Vec<usize>,
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Mann-Whitney AUC with tied scores sharing their average rank.
pub fn auc_rank(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group i..=j shares the mean rank.
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = idx[i..=j].iter().filter(|&&k| positive[k]).count();
        rank_sum += mean_rank * pos_in_group as f64;
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Some((rank_sum - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Area under the ROC curve by trapezoidal integration over thresholds.
pub fn auc_trapezoid(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if positive[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp / n_pos, fp / n_neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Some(area)
}

/// Accuracy and one-vs-rest metrics from per-sample class scores.
pub fn classification_metrics(scores: &[Vec<f64>], labels: &[usize], class_count: usize) -> Evaluation {
    let predictions: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    let per_class: Vec<ClassMetrics> = (0..class_count)
        .map(|k| {
            let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            let class_scores: Vec<f64> = scores.iter().map(|s| s[k]).collect();
            let support = positive.iter().filter(|&&p| p).count();
            let predicted = predictions.iter().filter(|&&p| p == k).count();
            let hits = predictions
                .iter()
                .zip(labels)
                .filter(|(&p, &l)| p == k && l == k)
                .count();
            ClassMetrics {
                class: k,
                support,
                precision: if predicted == 0 { 0.0 } else { hits as f64 / predicted as f64 },
                recall: if support == 0 { 0.0 } else { hits as f64 / support as f64 },
                auc: auc_rank(&class_scores, &positive),
            }
        })
        .collect();
    let aucs: Vec<f64> = per_class.iter().filter_map(|c| c.auc).collect();
    Evaluation {
        accuracy: if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 },
        mean_auc: if aucs.is_empty() { f64::NAN } else { aucs.iter().sum::<f64>() / aucs.len() as f64 },
        per_class,
        predictions,
    }
}
