use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Trial-level assignment to `k` cross-validation folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<u16, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, trial_id: u16) -> Option<usize> {
        self.assignments.get(&trial_id).copied()
    }

    /// Trial ids held out in `fold`, ascending.
    pub fn test_trials(&self, fold: usize) -> Vec<u16> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(&t, _)| t)
            .collect()
    }

    pub fn train_trials(&self, fold: usize) -> Vec<u16> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(&t, _)| t)
            .collect()
    }
}

/// Stratified k-fold at trial granularity.
///
/// Each class is shuffled with the seeded generator; the concatenation
/// (class 0 then class 1) is dealt round-robin over a seeded permutation of
/// the fold ids. Fold sizes therefore differ by at most one and each fold's
/// class counts are within one of perfect stratification. With a single
/// class this is plain shuffled k-fold (a warning is logged).
pub fn stratified_folds(trials: &[(u16, u8)], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::invalid(format!("need k >= 2 folds, got {k}")));
    }
    if trials.len() < k {
        return Err(Error::invalid(format!(
            "{} trials cannot fill {k} folds",
            trials.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some((dup, _)) = trials.iter().find(|(t, _)| !seen.insert(*t)) {
        return Err(Error::invalid(format!("duplicate trial id {dup}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: [Vec<u16>; 2] = [Vec::new(), Vec::new()];
    for &(t, y) in trials {
        by_class[usize::from(y.min(1))].push(t);
    }
    if by_class.iter().any(|c| c.is_empty()) {
        log::warn!("stratified_folds: only one class present, using plain k-fold");
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    for class in &mut by_class {
        class.sort_unstable();
        class.shuffle(&mut rng);
    }
    let assignments = by_class
        .iter()
        .flatten()
        .enumerate()
        .map(|(i, &t)| (t, order[i % k]))
        .collect();
    Ok(FoldSplit { k, seed, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(n: u16) -> Vec<(u16, u8)> {
        (0..n).map(|t| (t, (t % 2) as u8)).collect()
    }

    #[test]
    fn thirty_four_trials() {
        let trials = balanced(34);
        let split = stratified_folds(&trials, 5, 7).unwrap();
        let mut sizes: Vec<usize> = (0..5).map(|f| split.test_trials(f).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![6, 7, 7, 7, 7]);
        for f in 0..5 {
            let pos = split
                .test_trials(f)
                .iter()
                .filter(|&&t| trials[t as usize].1 == 1)
                .count();
            assert!((3..=4).contains(&pos), "fold {f}: {pos} positives");
        }
    }

    #[test]
    fn five_trials_one_each() {
        let split = stratified_folds(&balanced(5), 5, 1).unwrap();
        for f in 0..5 {
            assert_eq!(split.test_trials(f).len(), 1);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let trials = balanced(34);
        assert_eq!(stratified_folds(&trials, 5, 3).unwrap(), stratified_folds(&trials, 5, 3).unwrap());
        assert_ne!(
            stratified_folds(&trials, 5, 3).unwrap().assignments,
            stratified_folds(&trials, 5, 4).unwrap().assignments
        );
    }

    #[test]
    fn too_few_trials() {
        assert!(stratified_folds(&balanced(4), 5, 0).is_err());
    }

    #[test]
    fn single_class_degrades() {
        let trials: Vec<(u16, u8)> = (0..12).map(|t| (t, 1)).collect();
        let split = stratified_folds(&trials, 5, 0).unwrap();
        assert_eq!(split.assignments.len(), 12);
    }
}
