//! Stratified k-fold splitting.

use crate::error::{Error, Result};
use crate::manifest::Sex;
use crate::rng::SplitMix64;

/// Partition indices into k folds preserving class proportions: per class the
/// (seeded) shuffled indices are dealt round-robin, so per-fold class counts
/// differ by at most one from exact proportionality.
pub fn stratified_kfold(labels: &[Sex], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &sex) in labels.iter().enumerate() {
        match sex {
            Sex::M => by_class[0].push(i),
            Sex::F => by_class[1].push(i),
        }
    }
    for class in &by_class {
        if !class.is_empty() && class.len() < k {
            return Err(Error::DegenerateInput(format!(
                "a class has {} members, fewer than k = {k}",
                class.len()
            )));
        }
    }
    let mut rng = SplitMix64::substream(seed, 0x6b66_6f6c_6473);
    let mut folds = vec![Vec::new(); k];
    // The dealing cursor persists across classes so the per-class remainders
    // land on different folds, keeping total fold sizes within one of each
    // other as well.
    let mut cursor = 0usize;
    for class in by_class.iter_mut() {
        rng.shuffle(class);
        for (j, &idx) in class.iter().enumerate() {
            folds[(cursor + j) % k].push(idx);
        }
        cursor = (cursor + class.len()) % k;
    }
    for fold in folds.iter_mut() {
        fold.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n_m: usize, n_f: usize) -> Vec<Sex> {
        let mut v = vec![Sex::M; n_m];
        v.extend(vec![Sex::F; n_f]);
        v
    }

    fn class_counts(fold: &[usize], labels: &[Sex]) -> (usize, usize) {
        let f = fold.iter().filter(|&&i| labels[i] == Sex::F).count();
        (fold.len() - f, f)
    }

    #[test]
    fn balanced_cohort_splits_exactly() {
        let y = labels(10, 10);
        let folds = stratified_kfold(&y, 5, 1).unwrap();
        for fold in &folds {
            assert_eq!(class_counts(fold, &y), (2, 2));
        }
    }

    #[test]
    fn study_sized_cohort_fold_counts() {
        // 89 M + 97 F over 5 folds: fold sizes {38,37,37,37,37} with female
        // counts in {19, 20} and male counts in {17, 18}.
        let y = labels(89, 97);
        let folds = stratified_kfold(&y, 5, 7).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![37, 37, 37, 37, 38]);
        for fold in &folds {
            let (m, f) = class_counts(fold, &y);
            assert!(f == 19 || f == 20, "female count {f}");
            assert!(m == 17 || m == 18, "male count {m}");
        }
    }

    #[test]
    fn folds_partition_all_indices() {
        let y = labels(13, 21);
        let folds = stratified_kfold(&y, 4, 3).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..34).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_per_seed() {
        let y = labels(20, 25);
        assert_eq!(
            stratified_kfold(&y, 5, 11).unwrap(),
            stratified_kfold(&y, 5, 11).unwrap()
        );
        assert_ne!(
            stratified_kfold(&y, 5, 11).unwrap(),
            stratified_kfold(&y, 5, 12).unwrap()
        );
    }

    #[test]
    fn class_smaller_than_k_is_rejected() {
        let y = labels(3, 20);
        assert!(matches!(stratified_kfold(&y, 5, 0), Err(Error::DegenerateInput(_))));
    }
}
