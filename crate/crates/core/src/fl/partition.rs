//! Non-IID data partitioning across clients via per-class Dirichlet draws.

use crate::fl::data::Dataset;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

/// Dirichlet partition parameters. Smaller `alpha` concentrates each class on
/// fewer clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub alpha: f64,
    pub n_clients: usize,
}

/// Split `dataset` into one index set per client.
///
/// For each class, proportions over clients are sampled from
/// `Dirichlet(alpha * 1)` via per-component `Gamma(alpha, 1)` draws and the
/// class's samples are dealt accordingly. The index sets are disjoint and
/// cover the dataset; empty shards are possible at small `alpha`.
pub fn dirichlet_partition<R: Rng>(
    dataset: &Dataset,
    spec: &PartitionSpec,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    assert!(spec.alpha > 0.0, "alpha must be > 0");
    assert!(spec.n_clients >= 1, "need at least one client");
    assert!(!dataset.is_empty(), "dataset must be non-empty");

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); spec.n_clients];
    if spec.n_clients == 1 {
        shards[0] = (0..dataset.len()).collect();
        return shards;
    }

    let gamma = Gamma::new(spec.alpha, 1.0).expect("valid gamma shape");
    for class in 0..dataset.n_classes {
        let mut indices: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == class)
            .collect();
        if indices.is_empty() {
            continue;
        }
        indices.shuffle(rng);

        // Gamma draws at very small alpha mostly underflow to zero; the
        // normalized maximum still dominates, which is the intended extreme
        // heterogeneity. Redraw in the (measure-zero) all-zero case.
        let mut draws = vec![0.0f64; spec.n_clients];
        loop {
            for d in draws.iter_mut() {
                *d = gamma.sample(rng);
            }
            if draws.iter().sum::<f64>() > 0.0 {
                break;
            }
        }
        let total: f64 = draws.iter().sum();

        // Largest-remainder rounding of proportions to integer counts.
        let n = indices.len();
        let mut counts = vec![0usize; spec.n_clients];
        let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(spec.n_clients);
        let mut assigned = 0usize;
        for (c, d) in draws.iter().enumerate() {
            let exact = d / total * n as f64;
            let floor = exact.floor() as usize;
            counts[c] = floor;
            assigned += floor;
            remainders.push((exact - floor as f64, c));
        }
        remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, c) in remainders.iter().take(n - assigned) {
            counts[c] += 1;
        }

        let mut cursor = 0usize;
        for (c, &count) in counts.iter().enumerate() {
            shards[c].extend_from_slice(&indices[cursor..cursor + count]);
            cursor += count;
        }
    }
    shards
}

/// Shannon entropy (nats) of a client's label distribution.
pub fn label_entropy(labels: &[usize], n_classes: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mean label entropy over clients with at least one sample.
pub fn mean_shard_entropy(dataset: &Dataset, shards: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    let mut populated = 0usize;
    for shard in shards {
        if shard.is_empty() {
            continue;
        }
        let labels: Vec<usize> = shard.iter().map(|&i| dataset.labels[i]).collect();
        total += label_entropy(&labels, dataset.n_classes);
        populated += 1;
    }
    if populated == 0 {
        0.0
    } else {
        total / populated as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::data::synth_dataset;
    use crate::rng::{stream, StreamId};
    use std::collections::BTreeSet;

    fn fixture(seed: u64) -> Dataset {
        let mut rng = stream(seed, StreamId::DatasetGen { service: 0 });
        synth_dataset(10, 64, 8, &mut rng).unwrap()
    }

    #[test]
    fn single_client_gets_everything() {
        let ds = fixture(0);
        let mut rng = stream(0, StreamId::Partition { service: 0 });
        let shards = dirichlet_partition(
            &ds,
            &PartitionSpec {
                alpha: 1.0,
                n_clients: 1,
            },
            &mut rng,
        );
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].len(), ds.len());
    }

    #[test]
    fn shards_partition_the_index_range() {
        let ds = fixture(1);
        for alpha in [0.01, 1.0, 100.0] {
            let mut rng = stream(7, StreamId::Partition { service: 1 });
            let shards = dirichlet_partition(
                &ds,
                &PartitionSpec {
                    alpha,
                    n_clients: 16,
                },
                &mut rng,
            );
            let mut seen = BTreeSet::new();
            for shard in &shards {
                for &i in shard {
                    assert!(seen.insert(i), "index {i} dealt twice at alpha {alpha}");
                }
            }
            assert_eq!(seen.len(), ds.len());
        }
    }

    #[test]
    fn huge_alpha_approaches_global_distribution() {
        let ds = fixture(2);
        let global: Vec<f64> = (0..ds.n_classes)
            .map(|c| ds.labels.iter().filter(|&&l| l == c).count() as f64 / ds.len() as f64)
            .collect();
        for seed in 0..5u64 {
            let mut rng = stream(seed, StreamId::Partition { service: 2 });
            let shards = dirichlet_partition(
                &ds,
                &PartitionSpec {
                    alpha: 1e6,
                    n_clients: 16,
                },
                &mut rng,
            );
            for shard in &shards {
                let mut counts = vec![0usize; ds.n_classes];
                for &i in shard {
                    counts[ds.labels[i]] += 1;
                }
                let tv: f64 = counts
                    .iter()
                    .zip(&global)
                    .map(|(&c, &g)| (c as f64 / shard.len() as f64 - g).abs())
                    .sum::<f64>()
                    / 2.0;
                assert!(tv < 0.05, "total variation {tv} too large");
            }
        }
    }

    #[test]
    fn tiny_alpha_is_highly_heterogeneous() {
        let ds = fixture(3);
        let mut entropies = Vec::new();
        for seed in 0..5u64 {
            let mut rng = stream(seed, StreamId::Partition { service: 3 });
            let shards = dirichlet_partition(
                &ds,
                &PartitionSpec {
                    alpha: 0.01,
                    n_clients: 16,
                },
                &mut rng,
            );
            entropies.push(mean_shard_entropy(&ds, &shards));
        }
        let mean = entropies.iter().sum::<f64>() / entropies.len() as f64;
        assert!(mean < 0.5, "mean shard entropy {mean} nats");
    }

    #[test]
    fn entropy_monotone_in_alpha() {
        let ds = fixture(4);
        let mut means = Vec::new();
        for alpha in [0.01, 1.0, 10.0] {
            let mut acc = 0.0;
            for seed in 0..5u64 {
                let mut rng = stream(seed, StreamId::Partition { service: 4 });
                let shards = dirichlet_partition(
                    &ds,
                    &PartitionSpec { alpha, n_clients: 16 },
                    &mut rng,
                );
                acc += mean_shard_entropy(&ds, &shards);
            }
            means.push(acc / 5.0);
        }
        assert!(means[0] <= means[1] && means[1] <= means[2], "{means:?}");
    }
}
