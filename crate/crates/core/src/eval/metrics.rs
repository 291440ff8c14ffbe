use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One patient's summary score and true label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredOutcome {
    pub id: String,
    pub score: f64,
    pub label: bool,
}

fn class_counts(outcomes: &[ScoredOutcome]) -> Result<(u64, u64)> {
    if outcomes.iter().any(|o| !o.score.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let pos = outcomes.iter().filter(|o| o.label).count() as u64;
    let neg = outcomes.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("both classes must be present".into()));
    }
    Ok((pos, neg))
}

/// Mann–Whitney AUC: the fraction of positive/negative pairs ranked
/// correctly, ties counting one half.
pub fn roc_auc(outcomes: &[ScoredOutcome]) -> Result<f64> {
    let (pos, neg) = class_counts(outcomes)?;
    let mut sorted: Vec<(f64, bool)> = outcomes.iter().map(|o| (o.score, o.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the number of correctly ordered pairs, kept in integers
    let mut twice_wins: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        twice_wins += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(twice_wins as f64 / (2 * pos as u128 * neg as u128) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tpr: f64,
    pub ppv: f64,
}

/// TPR and PPV of the rule `score >= threshold` at every distinct score, in
/// increasing threshold order.
pub fn tpr_ppv_curve(outcomes: &[ScoredOutcome]) -> Result<Vec<CurvePoint>> {
    let (pos, _) = class_counts(outcomes)?;
    let mut sorted: Vec<(f64, bool)> = outcomes.iter().map(|o| (o.score, o.label)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    // sweep from the highest score down, then reverse
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(CurvePoint { threshold: t, tpr: tp as f64 / pos as f64, ppv: tp as f64 / (tp + fp) as f64 });
    }
    points.reverse();
    Ok(points)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("labelings have {} and {} items", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().flatten().map(|&x| c2(x)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        // both labelings put everything in one cluster, or each item alone
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
