use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    /// Patient indices per fold, ascending.
    pub folds: Vec<Vec<usize>>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Every index outside fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut idx: Vec<usize> =
            self.folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, s)| s.iter().copied()).collect();
        idx.sort_unstable();
        idx
    }
}

/// Stratified `k`-fold split of a cohort by outcome.
pub fn stratified_kfold(cohort: &Cohort, k: usize, seed: u64) -> Result<FoldPlan> {
    let labels: Vec<bool> = cohort.patients.iter().map(|p| p.outcome.is_positive()).collect();
    stratified_kfold_labels(&labels, k, seed)
}

/// Each class is shuffled with its own seeded stream and dealt round-robin;
/// negatives start where the positives stopped so fold sizes stay balanced.
pub fn stratified_kfold_labels(labels: &[bool], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Stratification(format!("need at least 2 folds, got {k}")));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < k || neg.len() < k {
        return Err(Error::Stratification(format!(
            "{k} folds need at least {k} patients per class; have {} deteriorating and {} stable",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    rng.set_stream(1);
    neg.shuffle(&mut rng);

    let mut folds = vec![Vec::new(); k];
    let mut positives = vec![0; k];
    let mut negatives = vec![0; k];
    for (j, &i) in pos.iter().enumerate() {
        folds[j % k].push(i);
        positives[j % k] += 1;
    }
    let offset = pos.len() % k;
    for (j, &i) in neg.iter().enumerate() {
        let f = (j + offset) % k;
        folds[f].push(i);
        negatives[f] += 1;
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { folds, positives, negatives })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_division() {
        let labels: Vec<bool> = (0..100).map(|i| i < 10).collect();
        let plan = stratified_kfold_labels(&labels, 10, 3).unwrap();
        assert!(plan.positives.iter().all(|&p| p == 1));
        assert!(plan.negatives.iter().all(|&n| n == 9));
    }

    #[test]
    fn remainder_and_determinism() {
        let labels = vec![true, false, true, false, true, false];
        let plan = stratified_kfold_labels(&labels, 2, 9).unwrap();
        let mut p = plan.positives.clone();
        p.sort();
        assert_eq!(p, vec![1, 2]);
        assert_eq!(plan, stratified_kfold_labels(&labels, 2, 9).unwrap());
        assert!(stratified_kfold_labels(&labels, 4, 9).is_err());
    }
}
