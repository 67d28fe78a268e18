//! Dataset ingestion, train/test splitting, IID client shards, and the
//! synthetic quadratic problems used as consensus oracles.

mod csv;
mod idx;
mod quadratic;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

pub use self::csv::load_matrix_csv;
pub use idx::{load_idx, write_idx_images, write_idx_labels};
pub use quadratic::{make_quadratic, QuadraticProblem};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::topology::NodeId;

/// Labeled samples with features scaled into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::InvalidArgument(
                "input_dim and num_classes must be positive".into(),
            ));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::LengthMismatch {
                expected: labels.len() * input_dim,
                actual: features.len(),
            });
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Range(format!(
                "label {l} at sample {i} outside 0..{num_classes}"
            )));
        }
        Ok(Self {
            features,
            labels,
            input_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// A new dataset made of the given rows, in order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.input_dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Dataset {
            features,
            labels,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        }
    }

    /// Seeded shuffle, then keep the first `max` samples. Returns a clone
    /// when `max >= len`.
    pub fn truncate_shuffled<R: Rng + ?Sized>(&self, max: usize, rng: &mut R) -> Dataset {
        if max >= self.len() {
            return self.clone();
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order.truncate(max);
        self.subset(&order)
    }

    pub fn to_batch(&self) -> Batch {
        Batch::from_dense(&self.features, self.input_dim, &self.labels)
            .expect("dataset invariants guarantee a well-formed batch")
    }

    pub fn batch_for(&self, rows: &[usize]) -> Batch {
        let mut b = Batch::empty(self.input_dim);
        for &r in rows {
            b.push_row(self.row(r), self.labels[r]);
        }
        b
    }
}

/// The sample indices owned by one client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub owner: NodeId,
    pub indices: Vec<usize>,
}

/// Stratified split into `(train, test)`.
///
/// Each class contributes `round(count * test_fraction)` test samples,
/// clamped so that both sides keep at least one sample of the class.
pub fn split_train_test<R: Rng + ?Sized>(
    d: &Dataset,
    test_fraction: f64,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in d.labels().iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut rows) in by_class {
        if rows.len() < 2 {
            return Err(Error::Stratification {
                class,
                count: rows.len(),
            });
        }
        rows.shuffle(rng);
        let k = ((rows.len() as f64) * test_fraction).round() as usize;
        let k = k.clamp(1, rows.len() - 1);
        test.extend_from_slice(&rows[..k]);
        train.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((d.subset(&train), d.subset(&test)))
}

/// Seeded shuffle followed by round-robin assignment to `n_clients` shards.
pub fn partition_iid<R: Rng + ?Sized>(
    num_samples: usize,
    n_clients: usize,
    rng: &mut R,
) -> Result<Vec<Shard>> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument("n_clients must be positive".into()));
    }
    if n_clients > num_samples {
        return Err(Error::InvalidArgument(format!(
            "{n_clients} clients but only {num_samples} samples"
        )));
    }
    let mut order: Vec<usize> = (0..num_samples).collect();
    order.shuffle(rng);
    let mut shards: Vec<Shard> = (0..n_clients)
        .map(|c| Shard {
            owner: NodeId(c),
            indices: Vec::with_capacity(num_samples / n_clients + 1),
        })
        .collect();
    for (k, idx) in order.into_iter().enumerate() {
        shards[k % n_clients].indices.push(idx);
    }
    Ok(shards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn rng(s: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(s)
    }

    fn labeled(labels: Vec<usize>, classes: usize) -> Dataset {
        let n = labels.len();
        let feats = (0..n).map(|i| i as f64 / n as f64).collect();
        Dataset::new(feats, labels, 1, classes).unwrap()
    }

    #[test]
    fn partition_sizes() {
        let s = partition_iid(10, 10, &mut rng(1)).unwrap();
        assert!(s.iter().all(|s| s.indices.len() == 1));
        let s = partition_iid(5, 2, &mut rng(1)).unwrap();
        assert_eq!(s[0].indices.len(), 3);
        assert_eq!(s[1].indices.len(), 2);
    }

    #[test]
    fn partition_thousand_is_disjoint_cover() {
        let s = partition_iid(1000, 10, &mut rng(4)).unwrap();
        let mut seen = HashSet::new();
        for shard in &s {
            assert_eq!(shard.indices.len(), 100);
            for &i in &shard.indices {
                assert!(seen.insert(i));
            }
        }
        assert_eq!(seen.len(), 1000);
    }

    #[test]
    fn partition_rejects_zero_clients() {
        assert!(partition_iid(5, 0, &mut rng(0)).is_err());
        assert!(partition_iid(3, 4, &mut rng(0)).is_err());
    }

    #[test]
    fn stratified_split_forty_classes() {
        let labels = (0..400).map(|i| i / 10).collect();
        let d = labeled(labels, 40);
        let (train, test) = split_train_test(&d, 0.2, &mut rng(3)).unwrap();
        assert_eq!((train.len(), test.len()), (320, 80));
        for c in 0..40 {
            assert_eq!(test.labels().iter().filter(|&&l| l == c).count(), 2);
        }
    }

    #[test]
    fn half_split_of_pairs() {
        let d = labeled(vec![0, 0, 1, 1, 2, 2], 3);
        let (train, test) = split_train_test(&d, 0.5, &mut rng(8)).unwrap();
        for c in 0..3 {
            assert_eq!(train.labels().iter().filter(|&&l| l == c).count(), 1);
            assert_eq!(test.labels().iter().filter(|&&l| l == c).count(), 1);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let d = labeled((0..60).map(|i| i % 3).collect(), 3);
        let a = split_train_test(&d, 0.3, &mut rng(2)).unwrap();
        let b = split_train_test(&d, 0.3, &mut rng(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_singleton_class() {
        let d = labeled(vec![0, 0, 1], 2);
        assert!(matches!(
            split_train_test(&d, 0.5, &mut rng(0)),
            Err(Error::Stratification { class: 1, count: 1 })
        ));
    }

    #[test]
    fn dataset_rejects_out_of_range_label() {
        assert!(matches!(
            Dataset::new(vec![0.0], vec![40], 1, 40),
            Err(Error::Range(_))
        ));
    }

    proptest! {
        #[test]
        fn partition_is_a_partition(n in 1usize..300, k in 1usize..20, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let shards = partition_iid(n, k, &mut rng(seed)).unwrap();
            let sizes: Vec<usize> = shards.iter().map(|s| s.indices.len()).collect();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let all: HashSet<usize> = shards.iter().flat_map(|s| s.indices.iter().copied()).collect();
            prop_assert_eq!(all.len(), n);
        }
    }
}
