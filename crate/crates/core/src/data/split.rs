use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::ImageDataset;
use crate::error::{Error, Result};

/// Index lists of a one-class experiment.
///
/// For [`make_one_class_split`] `train`/`val` index the training dataset and
/// `test_in`/`test_out` the test dataset; fold splits index a single pool.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneClassSplit {
    pub inlier_class: u8,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test_in: Vec<usize>,
    pub test_out: Vec<usize>,
    pub seed: u64,
}

impl OneClassSplit {
    /// Test indices followed by labels (1 = outlier).
    pub fn test_indices(&self) -> (Vec<usize>, Vec<bool>) {
        let mut idx = self.test_in.clone();
        idx.extend_from_slice(&self.test_out);
        let mut labels = vec![false; self.test_in.len()];
        labels.resize(idx.len(), true);
        (idx, labels)
    }
}

fn sample_sorted(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out: Vec<usize> = rand::seq::index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    out.sort_unstable();
    out
}

/// Inlier training images minus a 10% validation hold-out, inlier test images,
/// and an equal number of outliers drawn without replacement from the other classes.
pub fn make_one_class_split(
    train: &ImageDataset,
    test: &ImageDataset,
    inlier_class: u8,
    seed: u64,
) -> Result<OneClassSplit> {
    let mut pool = train.indices_of_class(inlier_class);
    let test_in = test.indices_of_class(inlier_class);
    if pool.is_empty() || test_in.is_empty() {
        return Err(Error::Data(format!("class {inlier_class} absent from dataset")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let n_val = (pool.len() as f64 * 0.1).round() as usize;
    let mut val = pool[..n_val].to_vec();
    let mut tr = pool[n_val..].to_vec();
    val.sort_unstable();
    tr.sort_unstable();
    let others: Vec<usize> = (0..test.len()).filter(|&i| test.labels()[i] != inlier_class).collect();
    if others.len() < test_in.len() {
        return Err(Error::Data(format!(
            "need {} outliers, only {} other-class test images",
            test_in.len(),
            others.len()
        )));
    }
    let test_out = sample_sorted(&others, test_in.len(), &mut rng);
    Ok(OneClassSplit {
        inlier_class,
        train: tr,
        val,
        test_in,
        test_out,
        seed,
    })
}

fn chunk_bounds(n: usize, folds: usize, f: usize) -> (usize, usize) {
    (n * f / folds, n * (f + 1) / folds)
}

/// Every class is shuffled and cut into `fold_count` parts. Fold `f` tests on
/// part `f`, validates on part `f + 1` and trains on the rest; outliers come
/// from part `f` of the other classes so that they make up `outlier_ratio`
/// of the test set.
pub fn make_fmnist_folds(
    dataset: &ImageDataset,
    inlier_class: u8,
    fold_count: usize,
    outlier_ratio: f64,
    seed: u64,
) -> Result<Vec<OneClassSplit>> {
    if fold_count < 3 {
        return Err(Error::config("fold_count", "need at least 3 folds"));
    }
    if !(outlier_ratio > 0.0 && outlier_ratio < 1.0) {
        return Err(Error::config("outlier_ratio", format!("{outlier_ratio} not in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<Vec<usize>> = (0..=9u8).map(|c| dataset.indices_of_class(c)).collect();
    for c in classes.iter_mut() {
        c.shuffle(&mut rng);
    }
    let inliers = &classes[inlier_class as usize];
    if inliers.len() < fold_count {
        return Err(Error::Data(format!("class {inlier_class} has too few images for {fold_count} folds")));
    }
    let mut out = Vec::with_capacity(fold_count);
    for f in 0..fold_count {
        let part = |idx: &[usize], p: usize| {
            let (a, b) = chunk_bounds(idx.len(), fold_count, p);
            idx[a..b].to_vec()
        };
        let mut test_in = part(inliers, f);
        let mut val = part(inliers, (f + 1) % fold_count);
        let mut train: Vec<usize> = (0..fold_count)
            .filter(|&p| p != f && p != (f + 1) % fold_count)
            .flat_map(|p| part(inliers, p))
            .collect();
        let others: Vec<usize> = classes
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != inlier_class as usize)
            .flat_map(|(_, idx)| part(idx, f))
            .collect();
        let k = (test_in.len() as f64 * outlier_ratio / (1.0 - outlier_ratio)).round() as usize;
        if k > others.len() {
            return Err(Error::Data(format!(
                "ratio {outlier_ratio} needs {k} outliers, fold {f} has {}",
                others.len()
            )));
        }
        let test_out = sample_sorted(&others, k, &mut rng);
        test_in.sort_unstable();
        val.sort_unstable();
        train.sort_unstable();
        out.push(OneClassSplit {
            inlier_class,
            train,
            val,
            test_in,
            test_out,
            seed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Provenance;
    use crate::tensor::Tensor;
    use std::collections::HashSet;

    fn toy(n: usize) -> ImageDataset {
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        ImageDataset::new(Tensor::zeros(&[n, 1, 2, 2]).unwrap(), labels, Provenance::Synthetic).unwrap()
    }

    #[test]
    fn one_class_counts_and_disjointness() {
        let (tr, te) = (toy(500), toy(200));
        let s = make_one_class_split(&tr, &te, 1, 3).unwrap();
        assert_eq!(s.val.len(), 5);
        assert_eq!(s.train.len(), 45);
        assert_eq!(s.test_in.len(), 20);
        assert_eq!(s.test_out.len(), 20);
        let a: HashSet<_> = s.train.iter().collect();
        assert!(s.val.iter().all(|i| !a.contains(i)));
        assert!(s.test_out.iter().all(|&i| te.labels()[i] != 1));
        assert!(s.test_in.iter().all(|&i| te.labels()[i] == 1));
        let uniq: HashSet<_> = s.test_out.iter().collect();
        assert_eq!(uniq.len(), 20);
        assert_eq!(s, make_one_class_split(&tr, &te, 1, 3).unwrap());
        assert_ne!(s.test_out, make_one_class_split(&tr, &te, 1, 4).unwrap().test_out);
    }

    #[test]
    fn one_class_errors() {
        let tr = toy(500);
        let te = ImageDataset::new(Tensor::zeros(&[3, 1, 2, 2]).unwrap(), vec![1, 1, 2], Provenance::Synthetic).unwrap();
        assert!(make_one_class_split(&tr, &te, 1, 0).is_err());
        let te2 = toy(5);
        assert!(make_one_class_split(&tr, &te2, 7, 0).is_err());
    }

    #[test]
    fn folds_partition_and_ratios() {
        let ds = toy(1000);
        for (ratio, expect) in [(0.5, 20usize), (0.1, 2)] {
            let folds = make_fmnist_folds(&ds, 4, 5, ratio, 11).unwrap();
            assert_eq!(folds.len(), 5);
            let mut seen = HashSet::new();
            for s in &folds {
                assert_eq!(s.train.len(), 60);
                assert_eq!(s.val.len(), 20);
                assert_eq!(s.test_in.len(), 20);
                assert_eq!(s.test_out.len(), expect);
                for i in &s.test_in {
                    assert!(seen.insert(*i));
                }
                let tr: HashSet<_> = s.train.iter().collect();
                assert!(s.val.iter().chain(&s.test_in).all(|i| !tr.contains(i)));
            }
            assert_eq!(seen.len(), 100);
        }
    }

    #[test]
    fn fold_ratio_validation() {
        assert!(make_fmnist_folds(&toy(100), 0, 5, 1.0, 0).is_err());
        assert!(make_fmnist_folds(&toy(100), 0, 5, 0.0, 0).is_err());
    }
}
