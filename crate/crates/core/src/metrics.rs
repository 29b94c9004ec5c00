// SPDX-License-Identifier: Apache-2.0

//! Detection metrics with ID samples as the positive class: a sample is
//! accepted as ID when its score is at or above the threshold.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::linalg::cmp_f64;

pub const TPR_TARGET: f64 = 0.95;

fn check_scores(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(OodError::EmptyInput(
            "detection metrics need ID and OOD scores",
        ));
    }
    if id.iter().chain(ood).any(|s| s.is_nan()) {
        return Err(OodError::NonFinite("score vector contains NaN".into()));
    }
    Ok(())
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(id > ood) + ½ P(id == ood)`, via mid-ranks over the pooled sort.
///
/// Ranks are tracked doubled so the rank sum stays an exact integer.
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(id, ood)?;
    let mut pooled: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, true))
        .chain(ood.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| cmp_f64(&a.0, &b.0));

    // doubled mid-rank of a tie block spanning 1-based ranks [lo, hi] is lo + hi
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start + 1;
        while end < pooled.len() && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        let doubled_mid = (start + 1 + end) as u128;
        let ids_in_block = pooled[start..end].iter().filter(|p| p.1).count() as u128;
        doubled_rank_sum += doubled_mid * ids_in_block;
        start = end;
    }
    let (n, m) = (id.len() as u128, ood.len() as u128);
    // 2·U = 2·R - n(n+1)
    let doubled_u = doubled_rank_sum - n * (n + 1);
    Ok(doubled_u as f64 / (2 * n * m) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FprAtTpr {
    pub fpr: f64,
    pub threshold: f64,
}

/// Largest threshold `t` with `fraction(id >= t) >= tpr_target`, and the
/// fraction of OOD scores at or above it.
pub fn fpr_at_tpr(id: &[f64], ood: &[f64], tpr_target: f64) -> Result<FprAtTpr> {
    check_scores(id, ood)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(OodError::InvalidConfig(format!(
            "TPR target {tpr_target} outside (0, 1]"
        )));
    }
    let mut sorted = id.to_vec();
    sorted.sort_by(|a, b| cmp_f64(b, a));
    let n = sorted.len();
    let accepted = |k: usize| k as f64 / n as f64 >= tpr_target;
    let mut k = ((tpr_target * n as f64).ceil() as usize).clamp(1, n);
    while k > 1 && accepted(k - 1) {
        k -= 1;
    }
    while k < n && !accepted(k) {
        k += 1;
    }
    let threshold = sorted[k - 1];
    let false_accepts = ood.iter().filter(|&&s| s >= threshold).count();
    Ok(FprAtTpr {
        fpr: false_accepts as f64 / ood.len() as f64,
        threshold,
    })
}

/// Equal-width bins over the pooled range of the finite scores. Bins are
/// right-open except the last; non-finite scores land in the first or
/// last bin by sign. If every finite score is equal there is one bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub id_counts: Vec<usize>,
    pub ood_counts: Vec<usize>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,id_count,ood_count\n");
        for (i, (a, b)) in self.id_counts.iter().zip(&self.ood_counts).enumerate() {
            let _ = writeln!(
                out,
                "{},{},{a},{b}",
                self.bin_edges[i],
                self.bin_edges[i + 1]
            );
        }
        out
    }
}

pub fn histogram(id: &[f64], ood: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(OodError::InvalidConfig(
            "histogram needs at least one bin".into(),
        ));
    }
    let finite = id.iter().chain(ood).copied().filter(|s| s.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s), hi.max(s))
    });
    if lo > hi {
        // no finite scores at all
        return Ok(Histogram {
            bin_edges: vec![0.0, 0.0],
            id_counts: vec![id.len()],
            ood_counts: vec![ood.len()],
        });
    }
    let bins = if lo == hi { 1 } else { bins };
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let locate = |s: f64| -> usize {
        if s.is_nan() || s <= lo {
            return 0;
        }
        bin_edges
            .partition_point(|&edge| edge <= s)
            .saturating_sub(1)
            .min(bins - 1)
    };
    let count = |scores: &[f64]| {
        let mut counts = vec![0usize; bins];
        for &s in scores {
            counts[locate(s)] += 1;
        }
        counts
    };
    Ok(Histogram {
        id_counts: count(id),
        ood_counts: count(ood),
        bin_edges,
    })
}

/// How many samples fell back to the most-OOD surrogate score, by cause.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreWarnings {
    pub unusable_class: usize,
    pub zero_norm_feature: usize,
    pub nonpositive_logit_score: usize,
    pub all_pruned: usize,
}

impl ScoreWarnings {
    pub fn total(&self) -> usize {
        self.unusable_class
            + self.zero_norm_feature
            + self.nonpositive_logit_score
            + self.all_pruned
    }

    pub fn merge(self, other: ScoreWarnings) -> ScoreWarnings {
        ScoreWarnings {
            unusable_class: self.unusable_class + other.unusable_class,
            zero_norm_feature: self.zero_norm_feature + other.zero_norm_feature,
            nonpositive_logit_score: self.nonpositive_logit_score + other.nonpositive_logit_score,
            all_pruned: self.all_pruned + other.all_pruned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub method: String,
    pub id_split: String,
    pub ood_split: String,
    pub auroc: f64,
    pub fpr95: f64,
    pub threshold_at_tpr95: f64,
    pub n_id: usize,
    pub n_ood: usize,
    pub warnings: ScoreWarnings,
}

impl DetectionReport {
    pub fn evaluate(
        method: &str,
        id_split: &str,
        ood_split: &str,
        id_scores: &[f64],
        ood_scores: &[f64],
        warnings: ScoreWarnings,
    ) -> Result<Self> {
        let roc = auroc(id_scores, ood_scores)?;
        let at95 = fpr_at_tpr(id_scores, ood_scores, TPR_TARGET)?;
        Ok(DetectionReport {
            method: method.to_string(),
            id_split: id_split.to_string(),
            ood_split: ood_split.to_string(),
            auroc: roc,
            fpr95: at95.fpr,
            threshold_at_tpr95: at95.threshold,
            n_id: id_scores.len(),
            n_ood: ood_scores.len(),
            warnings,
        })
    }
}

/// One JSON object per line.
pub fn reports_to_jsonl(reports: &[DetectionReport]) -> String {
    reports
        .iter()
        .map(|r| serde_json::to_string(r).expect("report serializes") + "\n")
        .collect()
}

/// Methods as rows, OOD splits as column pairs (AUROC / FPR95, in percent),
/// plus a trailing average. Row order follows first appearance in `reports`.
pub fn reports_to_markdown(reports: &[DetectionReport]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    let mut splits: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(&str, &str), &DetectionReport> = BTreeMap::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if !splits.contains(&r.ood_split.as_str()) {
            splits.push(&r.ood_split);
        }
        cells.insert((r.method.as_str(), r.ood_split.as_str()), r);
    }
    let mut out = String::from("| Method |");
    for s in &splits {
        let _ = write!(out, " {s} AUROC | {s} FPR95 |");
    }
    out.push_str(" Average AUROC | Average FPR95 |\n|---|");
    out.push_str(&"---:|".repeat(2 * splits.len() + 2));
    out.push('\n');
    for m in &methods {
        let _ = write!(out, "| {m} |");
        let (mut au, mut fp, mut n) = (0.0, 0.0, 0usize);
        for s in &splits {
            match cells.get(&(*m, *s)) {
                Some(r) => {
                    let _ = write!(out, " {:.2} | {:.2} |", 100.0 * r.auroc, 100.0 * r.fpr95);
                    au += r.auroc;
                    fp += r.fpr95;
                    n += 1;
                }
                None => out.push_str(" - | - |"),
            }
        }
        if n > 0 {
            let _ = writeln!(
                out,
                " {:.2} | {:.2} |",
                100.0 * au / n as f64,
                100.0 * fp / n as f64
            );
        } else {
            out.push_str(" - | - |\n");
        }
    }
    out
}
