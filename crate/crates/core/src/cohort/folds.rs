use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Cohort, Diagnosis};
use crate::error::{Error, Result};

/// Stratified k-fold split over subject ids. Per-class shuffles are seeded;
/// ids are dealt round-robin so per-class fold counts differ by at most one.
/// Returns (train_ids, test_ids) per fold.
pub fn stratified_kfold(
    cohort: &Cohort,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    if k < 2 {
        return Err(Error::Stratification(format!("k must be >= 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_folds: Vec<Vec<String>> = vec![Vec::new(); k];
    for class in [Diagnosis::Cn, Diagnosis::Ad] {
        let mut ids: Vec<String> = cohort
            .records()
            .iter()
            .filter(|r| r.diagnosis == class)
            .map(|r| r.subject_id.clone())
            .collect();
        if ids.is_empty() {
            continue;
        }
        if ids.len() < k {
            return Err(Error::Stratification(format!(
                "class {} has {} members, fewer than k={k}",
                class.as_str(),
                ids.len()
            )));
        }
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            test_folds[i % k].push(id);
        }
    }
    let all: Vec<String> = cohort
        .records()
        .iter()
        .map(|r| r.subject_id.clone())
        .collect();
    Ok(test_folds
        .into_iter()
        .map(|test| {
            let test_set: std::collections::HashSet<&str> =
                test.iter().map(|s| s.as_str()).collect();
            let train: Vec<String> = all
                .iter()
                .filter(|id| !test_set.contains(id.as_str()))
                .cloned()
                .collect();
            (train, test)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_synthetic_cohort, SyntheticSpec};
    use std::collections::HashSet;

    fn small_cohort(n_cn: usize, n_ad: usize) -> Cohort {
        let spec = SyntheticSpec {
            n_cn,
            n_ad,
            missing_fnc_fraction: 0.0,
            volume_shape: [4, 4, 4],
            n_components: 3,
            ..Default::default()
        };
        generate_synthetic_cohort(&spec).unwrap().0
    }

    #[test]
    fn exact_divisibility_balances_folds() {
        let cohort = small_cohort(10, 10);
        let folds = stratified_kfold(&cohort, 5, 1).unwrap();
        for (_, test) in &folds {
            let cn = test.iter().filter(|id| id.starts_with("cn")).count();
            let ad = test.iter().filter(|id| id.starts_with("ad")).count();
            assert_eq!(cn, 2);
            assert_eq!(ad, 2);
        }
    }

    #[test]
    fn folds_partition_cohort() {
        let cohort = small_cohort(13, 9);
        let folds = stratified_kfold(&cohort, 4, 3).unwrap();
        let mut seen = HashSet::new();
        for (_, test) in &folds {
            for id in test {
                assert!(seen.insert(id.clone()), "{id} in two test folds");
            }
        }
        assert_eq!(seen.len(), 22);
        // train = complement of test
        for (train, test) in &folds {
            assert_eq!(train.len() + test.len(), 22);
        }
    }

    #[test]
    fn table_shaped_ad_counts() {
        // 207 CN + 195 AD paired subjects, k=5 -> AD test counts all 39.
        let cohort = small_cohort(207, 195);
        let folds = stratified_kfold(&cohort, 5, 9).unwrap();
        for (_, test) in &folds {
            let ad = test.iter().filter(|id| id.starts_with("ad")).count();
            assert_eq!(ad, 39);
        }
    }

    #[test]
    fn class_smaller_than_k_errors() {
        let cohort = small_cohort(3, 10);
        assert!(stratified_kfold(&cohort, 5, 0).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let cohort = small_cohort(11, 7);
        assert_eq!(
            stratified_kfold(&cohort, 3, 42).unwrap(),
            stratified_kfold(&cohort, 3, 42).unwrap()
        );
        assert_ne!(
            stratified_kfold(&cohort, 3, 42).unwrap(),
            stratified_kfold(&cohort, 3, 43).unwrap()
        );
    }
}
