//! Scores for discovered causal graphs and recovered segmentations.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::clustering::RegimeSegmentation;
use crate::error::{Error, Result};
use crate::synth::GroundTruth;
use crate::var::CausalGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphScores {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f_score: f64,
    /// Some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl GraphScores {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let mut degenerate = false;
        let precision = ratio(tp, tp + fp, &mut degenerate);
        let recall = ratio(tp, tp + fn_, &mut degenerate);
        let accuracy = ratio(tp + tn, tp + fp + tn + fn_, &mut degenerate);
        if precision + recall == 0.0 {
            degenerate = true;
        }
        GraphScores {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            accuracy,
            f_score: f_score(precision, recall),
            degenerate,
        }
    }
}

/// Confusion counts over ordered off-diagonal pairs.
pub fn score_adjacency(found: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<GraphScores> {
    let n = truth.len();
    if found.len() != n || found.iter().chain(truth).any(|r| r.len() != n) {
        return Err(Error::usage("adjacency matrices must both be N×N with the same N"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            match (found[i][j], truth[i][j]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    Ok(GraphScores::from_counts(tp, fp, tn, fn_))
}

pub fn score_graph(found: &CausalGraph, truth_names: &[String], truth: &[Vec<bool>]) -> Result<GraphScores> {
    if found.nodes != truth_names {
        return Err(Error::usage(format!(
            "node mismatch: graph has {:?}, truth has {:?}",
            found.nodes, truth_names
        )));
    }
    score_adjacency(&found.adjacency()?, truth)
}

/// Unweighted mean of the ratios across regimes. Counts are summed, so for a
/// mean row they add up to `regimes · N(N−1)`.
pub fn mean_regime_scores(per_regime: &[GraphScores]) -> Result<GraphScores> {
    if per_regime.is_empty() {
        return Err(Error::usage("no regime scores to average"));
    }
    let n = per_regime.len() as f64;
    let avg = |f: fn(&GraphScores) -> f64| per_regime.iter().map(f).sum::<f64>() / n;
    Ok(GraphScores {
        tp: per_regime.iter().map(|s| s.tp).sum(),
        fp: per_regime.iter().map(|s| s.fp).sum(),
        tn: per_regime.iter().map(|s| s.tn).sum(),
        fn_: per_regime.iter().map(|s| s.fn_).sum(),
        precision: avg(|s| s.precision),
        recall: avg(|s| s.recall),
        accuracy: avg(|s| s.accuracy),
        f_score: avg(|s| s.f_score),
        degenerate: per_regime.iter().any(|s| s.degenerate),
    })
}

/// Aligned text table in the column order Precision, Recall, Accuracy, F-score.
pub fn scores_table(rows: &[(String, GraphScores)]) -> String {
    let width = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(0).max("Methods".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>6}  {:>8}  {:>7}",
        "Methods", "Precision", "Recall", "Accuracy", "F-score"
    );
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.2}  {:>6.2}  {:>8.2}  {:>7.2}",
            name, s.precision, s.recall, s.accuracy, s.f_score
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    pub rcp_recall_at_margin: f64,
    pub rcp_precision_at_margin: f64,
    /// Chance-corrected agreement (Cohen's kappa) of per-step labels under the
    /// best matching of found to true regime ids.
    pub label_agreement: f64,
    pub margin: usize,
    pub degenerate: bool,
}

fn within(a: usize, b: usize, margin: usize) -> bool {
    a.abs_diff(b) <= margin
}

pub fn score_segmentation(found: &RegimeSegmentation, truth: &GroundTruth, margin: usize) -> SegmentationScores {
    let mut degenerate = false;
    let found_cps = &found.change_points;
    let true_cps = &truth.rcps;
    let (recall, precision) = if found_cps.is_empty() && true_cps.is_empty() {
        (1.0, 1.0)
    } else {
        let hit = true_cps
            .iter()
            .filter(|&&t| found_cps.iter().any(|&f| within(f, t, margin)))
            .count();
        let precise = found_cps
            .iter()
            .filter(|&&f| true_cps.iter().any(|&t| within(f, t, margin)))
            .count();
        (
            ratio(hit, true_cps.len(), &mut degenerate),
            ratio(precise, found_cps.len(), &mut degenerate),
        )
    };
    let steps = found.covered_len().min(truth.regime_labels.len());
    let found_labels = found.step_labels();
    let label_agreement = matched_kappa(&found_labels[..steps], &truth.regime_labels[..steps]);
    SegmentationScores {
        rcp_recall_at_margin: recall,
        rcp_precision_at_margin: precision,
        label_agreement,
        margin,
        degenerate,
    }
}

fn best_assignment(table: &[Vec<usize>]) -> Vec<usize> {
    let k = table.len();
    let mut perm: Vec<usize> = (0..k).collect();
    let score = |p: &[usize]| p.iter().enumerate().map(|(f, &t)| table[f][t]).sum::<usize>();
    if k > 8 {
        // greedy on the largest remaining cell
        let mut assigned = vec![usize::MAX; k];
        let mut used = vec![false; k];
        let mut cells: Vec<(usize, usize, usize)> = (0..k)
            .flat_map(|f| (0..k).map(move |t| (f, t, table[f][t])))
            .collect();
        cells.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        for (f, t, _) in cells {
            if assigned[f] == usize::MAX && !used[t] {
                assigned[f] = t;
                used[t] = true;
            }
        }
        return assigned;
    }
    let mut best = perm.clone();
    let mut best_score = score(&perm);
    // Heap's algorithm
    let mut c = vec![0usize; k];
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let s = score(&perm);
            if s > best_score {
                best_score = s;
                best = perm.clone();
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Cohen's kappa after relabeling `found` to best match `truth`.
pub fn matched_kappa(found: &[usize], truth: &[usize]) -> f64 {
    let n = found.len().min(truth.len());
    if n == 0 {
        return 0.0;
    }
    let k = found[..n]
        .iter()
        .chain(&truth[..n])
        .max()
        .map_or(1, |m| m + 1);
    let mut table = vec![vec![0usize; k]; k];
    for (&f, &t) in found[..n].iter().zip(&truth[..n]) {
        table[f][t] += 1;
    }
    let map = best_assignment(&table);
    let total = n as f64;
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64 / total).collect();
    let col: Vec<f64> = (0..k)
        .map(|t| table.iter().map(|r| r[t]).sum::<usize>() as f64 / total)
        .collect();
    let observed = (0..k).map(|f| table[f][map[f]] as f64).sum::<f64>() / total;
    let expected: f64 = (0..k).map(|f| row[f] * col[map[f]]).sum();
    if (1.0 - expected).abs() < 1e-15 {
        return if observed >= 1.0 - 1e-15 { 1.0 } else { 0.0 };
    }
    ((observed - expected) / (1.0 - expected)).clamp(-1.0, 1.0)
}
