//! Noisy pseudo-label refinement.
//!
//! For every threshold-selected sample, the top-K most cosine-similar other
//! samples vote on its label; the agreement score is the fraction of
//! neighbors sharing its pseudo-label. Per pseudo-class, samples at or above
//! the alpha-fractile of agreement whose corrected label confirms the pseudo
//! label form the clean set used for supervised contrastive learning.

use ndarray::Array2;

use crate::error::{CatError, Result};
use crate::threshold::PseudoLabelBatch;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub k_neighbors: usize,
    /// Per-class agreement fractile used as the selection cutoff.
    pub alpha: f64,
    /// Pseudo-classes with fewer members contribute no clean samples.
    pub min_class_size: usize,
    /// Compute one cutoff over all classes instead of per class.
    pub global_fractile: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 10,
            alpha: 0.5,
            min_class_size: 2,
            global_fractile: false,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(CatError::Config("k_neighbors must be >= 1".into()));
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(CatError::Config("alpha must be in (0, 1)".into()));
        }
        if self.min_class_size == 0 {
            return Err(CatError::Config("min_class_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Neighbor-vote outcome for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub corrected_label: usize,
    /// Fraction of neighbors sharing the sample's own pseudo-label.
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanMember {
    pub example_id: u64,
    pub corrected_label: usize,
    pub agreement: f64,
}

/// The refined subset and its complement (ids of selected pseudo-labeled
/// samples that did not make the cut).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CleanSet {
    pub members: Vec<CleanMember>,
    pub complement: Vec<u64>,
}

impl CleanSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Cosine similarity `a.b / (|a| |b|)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CatError::Contract(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm_a = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a <= 0.0 || norm_b <= 0.0 {
        return Err(CatError::Numeric(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok(dot / (norm_a * norm_b))
}

/// Majority label among `votes`; ties keep `own`.
fn majority_vote(votes: &[usize], num_classes: usize, own: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    for &v in votes {
        counts[v] += 1;
    }
    let best = counts.iter().cloned().max().unwrap_or(0);
    let winners: Vec<usize> = (0..num_classes).filter(|&c| counts[c] == best).collect();
    if winners.len() == 1 {
        winners[0]
    } else {
        own
    }
}

/// For each sample, finds its K most-similar other samples by cosine
/// similarity over the (unit-norm) embeddings and aggregates their
/// pseudo-labels. Similarity ties prefer the lower example id.
pub fn knn_aggregate(
    embeddings: &Array2<f64>,
    pseudo_labels: &[usize],
    example_ids: &[u64],
    config: &RefineConfig,
) -> Result<Vec<Aggregate>> {
    config.validate()?;
    let n = embeddings.nrows();
    if pseudo_labels.len() != n || example_ids.len() != n {
        return Err(CatError::Contract(
            "labels and ids must align with embedding rows".into(),
        ));
    }
    if config.k_neighbors >= n {
        return Err(CatError::Config(format!(
            "k_neighbors = {} requires more than {} samples",
            config.k_neighbors, n
        )));
    }
    let num_classes = pseudo_labels.iter().max().map_or(1, |&m| m + 1);

    // Unit-norm rows make the Gram matrix the full cosine-similarity matrix.
    let sims = embeddings.dot(&embeddings.t());
    let k = config.k_neighbors;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = sims.row(i);
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_unstable_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| example_ids[a].cmp(&example_ids[b]))
        });
        let neighbors = &order[..k];
        let votes: Vec<usize> = neighbors.iter().map(|&j| pseudo_labels[j]).collect();
        let own = pseudo_labels[i];
        let agreement = votes.iter().filter(|&&v| v == own).count() as f64 / k as f64;
        out.push(Aggregate {
            corrected_label: majority_vote(&votes, num_classes, own),
            agreement,
        });
    }
    Ok(out)
}

/// Linear-interpolation quantile of `sorted` (ascending) at fraction `q`.
fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Per pseudo-class, keeps samples whose agreement reaches the class's
/// alpha-fractile and whose corrected label confirms the pseudo-label.
pub fn select_clean(
    aggregates: &[Aggregate],
    pseudo_labels: &[usize],
    example_ids: &[u64],
    config: &RefineConfig,
) -> Result<CleanSet> {
    config.validate()?;
    if aggregates.len() != pseudo_labels.len() || aggregates.len() != example_ids.len() {
        return Err(CatError::Contract(
            "aggregates, labels, and ids must align".into(),
        ));
    }
    if aggregates.is_empty() {
        return Ok(CleanSet::default());
    }
    let num_classes = pseudo_labels.iter().max().map_or(1, |&m| m + 1);

    let cutoff_of = |scores: &mut Vec<f64>| -> f64 {
        scores.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        interpolated_quantile(scores, config.alpha)
    };

    let mut cutoffs = vec![f64::INFINITY; num_classes];
    if config.global_fractile {
        let mut scores: Vec<f64> = aggregates.iter().map(|a| a.agreement).collect();
        let cutoff = cutoff_of(&mut scores);
        cutoffs.fill(cutoff);
    } else {
        for (c, cutoff) in cutoffs.iter_mut().enumerate() {
            let mut scores: Vec<f64> = aggregates
                .iter()
                .zip(pseudo_labels)
                .filter(|(_, &l)| l == c)
                .map(|(a, _)| a.agreement)
                .collect();
            if !scores.is_empty() {
                *cutoff = cutoff_of(&mut scores);
            }
        }
    }

    let mut class_sizes = vec![0usize; num_classes];
    for &l in pseudo_labels {
        class_sizes[l] += 1;
    }

    let mut clean = CleanSet::default();
    for ((aggregate, &label), &id) in aggregates.iter().zip(pseudo_labels).zip(example_ids) {
        let eligible = class_sizes[label] >= config.min_class_size
            && aggregate.agreement >= cutoffs[label]
            && aggregate.corrected_label == label;
        if eligible {
            clean.members.push(CleanMember {
                example_id: id,
                corrected_label: aggregate.corrected_label,
                agreement: aggregate.agreement,
            });
        } else {
            clean.complement.push(id);
        }
    }
    Ok(clean)
}

/// Runs kNN aggregation and clean-set selection on the threshold-selected
/// subset of `batch`. `embeddings` rows align with `batch.entries`.
pub fn refine(
    embeddings: &Array2<f64>,
    batch: &PseudoLabelBatch,
    config: &RefineConfig,
) -> Result<CleanSet> {
    if embeddings.nrows() != batch.entries.len() {
        return Err(CatError::Contract(
            "embeddings must align with the pseudo-label batch".into(),
        ));
    }
    let selected: Vec<usize> = batch
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.selected)
        .map(|(i, _)| i)
        .collect();
    if selected.is_empty() {
        return Ok(CleanSet::default());
    }
    let rows: Vec<_> = selected.iter().map(|&i| embeddings.row(i)).collect();
    let sub = ndarray::stack(ndarray::Axis(0), &rows)
        .map_err(|e| CatError::Contract(format!("embedding stack failed: {e}")))?;
    let labels: Vec<usize> = selected
        .iter()
        .map(|&i| batch.entries[i].pseudo_label)
        .collect();
    let ids: Vec<u64> = selected
        .iter()
        .map(|&i| batch.entries[i].example_id)
        .collect();
    let aggregates = knn_aggregate(&sub, &labels, &ids, config)?;
    select_clean(&aggregates, &labels, &ids, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::threshold::PseudoLabelEntry;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_rows(raw: Vec<Vec<f64>>) -> Array2<f64> {
        let d = raw[0].len();
        let mut m = Array2::zeros((raw.len(), d));
        for (i, row) in raw.iter().enumerate() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (j, &v) in row.iter().enumerate() {
                m[[i, j]] = v / norm;
            }
        }
        m
    }

    fn cfg(k: usize, alpha: f64) -> RefineConfig {
        RefineConfig {
            k_neighbors: k,
            alpha,
            min_class_size: 1,
            global_fractile: false,
        }
    }

    #[test]
    fn cosine_identities() {
        let a = vec![0.3, -0.4, 1.0];
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let x = vec![1.0, 0.0];
        let y = vec![0.0, 2.0];
        assert_eq!(cosine_similarity(&x, &y).unwrap(), 0.0);
        let z = vec![1.0, 1.0];
        assert!((cosine_similarity(&x, &z).unwrap() - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_is_a_numeric_error() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(CatError::Numeric(_))
        ));
    }

    #[test]
    fn majority_vote_with_six_samples() {
        // Anchor plus five others: all five are its neighbors at K=5.
        let embeddings = unit_rows(vec![
            vec![1.0, 0.0],
            vec![0.9, 0.1],
            vec![0.9, -0.1],
            vec![0.8, 0.2],
            vec![0.0, 1.0],
            vec![-0.1, 1.0],
        ]);
        let labels = [1, 1, 1, 1, 2, 2];
        let ids: Vec<u64> = (0..6).collect();
        let aggregates = knn_aggregate(&embeddings, &labels, &ids, &cfg(5, 0.5)).unwrap();
        assert_eq!(aggregates[0].corrected_label, 1);
        assert!((aggregates[0].agreement - 0.6).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_batch_has_full_agreement() {
        let embeddings = unit_rows(vec![vec![1.0, 1.0]; 8]);
        let labels = [3usize; 8];
        let ids: Vec<u64> = (0..8).collect();
        let aggregates = knn_aggregate(&embeddings, &labels, &ids, &cfg(4, 0.5)).unwrap();
        for a in aggregates {
            assert_eq!(a.corrected_label, 3);
            assert_eq!(a.agreement, 1.0);
        }
    }

    #[test]
    fn k_must_be_below_sample_count() {
        let embeddings = unit_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(
            knn_aggregate(&embeddings, &[0, 1], &[0, 1], &cfg(2, 0.5)),
            Err(CatError::Config(_))
        ));
    }

    /// Independent O(n^2) oracle: scalar cosine per pair, full stable sort.
    fn oracle_aggregate(
        embeddings: &Array2<f64>,
        labels: &[usize],
        ids: &[u64],
        k: usize,
    ) -> Vec<Aggregate> {
        let n = embeddings.nrows();
        let num_classes = labels.iter().max().map_or(1, |&m| m + 1);
        let mut out = Vec::new();
        for i in 0..n {
            let mut scored: Vec<(f64, u64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let a = embeddings.row(i);
                    let b = embeddings.row(j);
                    let sim =
                        cosine_similarity(a.as_slice().unwrap(), b.as_slice().unwrap()).unwrap();
                    (sim, ids[j], j)
                })
                .collect();
            scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then_with(|| x.1.cmp(&y.1)));
            let votes: Vec<usize> = scored[..k].iter().map(|&(_, _, j)| labels[j]).collect();
            let mut counts = vec![0usize; num_classes];
            for &v in &votes {
                counts[v] += 1;
            }
            let best = *counts.iter().max().unwrap();
            let winners: Vec<usize> = (0..num_classes).filter(|&c| counts[c] == best).collect();
            let corrected = if winners.len() == 1 {
                winners[0]
            } else {
                labels[i]
            };
            let agreement = votes.iter().filter(|&&v| v == labels[i]).count() as f64 / k as f64;
            out.push(Aggregate {
                corrected_label: corrected,
                agreement,
            });
        }
        out
    }

    #[test]
    fn knn_matches_exhaustive_oracle() {
        let mut rng = stream_rng(42, 0);
        for n in [20usize, 60, 200] {
            let raw: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..8).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let embeddings = unit_rows(raw);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 1).collect();
            let config = cfg(7, 0.5);
            let ours = knn_aggregate(&embeddings, &labels, &ids, &config).unwrap();
            let oracle = oracle_aggregate(&embeddings, &labels, &ids, 7);
            assert_eq!(ours, oracle, "mismatch at n={n}");
        }
    }

    #[test]
    fn quantile_cutoff_matches_hand_computation() {
        let aggregates = vec![
            Aggregate {
                corrected_label: 0,
                agreement: 0.9,
            },
            Aggregate {
                corrected_label: 0,
                agreement: 0.8,
            },
            Aggregate {
                corrected_label: 0,
                agreement: 0.4,
            },
            Aggregate {
                corrected_label: 0,
                agreement: 0.2,
            },
        ];
        let labels = [0usize; 4];
        let ids: Vec<u64> = (0..4).collect();
        // Sorted scores [0.2, 0.4, 0.8, 0.9]; the interpolated median is 0.6.
        let clean = select_clean(&aggregates, &labels, &ids, &cfg(1, 0.5)).unwrap();
        let mut kept: Vec<u64> = clean.members.iter().map(|m| m.example_id).collect();
        kept.sort_unstable();
        assert_eq!(kept, vec![0, 1]);
    }

    #[test]
    fn tiny_alpha_with_agreeing_labels_selects_everything() {
        let aggregates: Vec<Aggregate> = (0..5)
            .map(|i| Aggregate {
                corrected_label: 1,
                agreement: 0.2 + 0.1 * i as f64,
            })
            .collect();
        let labels = [1usize; 5];
        let ids: Vec<u64> = (0..5).collect();
        // In the alpha -> 0+ limit the interpolated cutoff collapses onto the
        // minimum score, so the >= rule admits every sample.
        let clean = select_clean(&aggregates, &labels, &ids, &cfg(1, 1e-300)).unwrap();
        assert_eq!(clean.len(), 5);
        assert!(clean.complement.is_empty());
    }

    #[test]
    fn equal_agreements_select_all_or_none() {
        let aggregates = vec![
            Aggregate {
                corrected_label: 2,
                agreement: 0.7
            };
            6
        ];
        let labels = [2usize; 6];
        let ids: Vec<u64> = (0..6).collect();
        for alpha in [0.1, 0.5, 0.9] {
            let clean = select_clean(&aggregates, &labels, &ids, &cfg(1, alpha)).unwrap();
            // Cutoff equals the common value, and selection uses >=.
            assert_eq!(clean.len(), 6, "alpha {alpha}");
        }
    }

    #[test]
    fn small_classes_contribute_no_members() {
        let aggregates = vec![
            Aggregate {
                corrected_label: 0,
                agreement: 1.0,
            },
            Aggregate {
                corrected_label: 1,
                agreement: 1.0,
            },
            Aggregate {
                corrected_label: 1,
                agreement: 1.0,
            },
        ];
        let labels = [0, 1, 1];
        let ids = [0u64, 1, 2];
        let config = RefineConfig {
            k_neighbors: 1,
            alpha: 0.5,
            min_class_size: 2,
            global_fractile: false,
        };
        let clean = select_clean(&aggregates, &labels, &ids, &config).unwrap();
        let kept: Vec<u64> = clean.members.iter().map(|m| m.example_id).collect();
        assert_eq!(kept, vec![1, 2]);
        assert_eq!(clean.complement, vec![0]);
    }

    #[test]
    fn label_disagreement_excludes_members() {
        let aggregates = vec![
            Aggregate {
                corrected_label: 1,
                agreement: 0.9,
            },
            Aggregate {
                corrected_label: 0,
                agreement: 0.9,
            },
        ];
        let labels = [0, 0];
        let ids = [5u64, 6];
        let clean = select_clean(&aggregates, &labels, &ids, &cfg(1, 0.1)).unwrap();
        let kept: Vec<u64> = clean.members.iter().map(|m| m.example_id).collect();
        assert_eq!(kept, vec![6]);
        assert_eq!(clean.complement, vec![5]);
    }

    #[test]
    fn member_count_is_monotone_in_alpha() {
        let mut rng = stream_rng(17, 0);
        let aggregates: Vec<Aggregate> = (0..40)
            .map(|_| Aggregate {
                corrected_label: 0,
                agreement: rng.random::<f64>(),
            })
            .collect();
        let labels = vec![0usize; 40];
        let ids: Vec<u64> = (0..40).collect();
        let mut previous = usize::MAX;
        for alpha in [0.05, 0.2, 0.4, 0.6, 0.8, 0.95] {
            let clean = select_clean(&aggregates, &labels, &ids, &cfg(1, alpha)).unwrap();
            assert!(
                clean.len() <= previous,
                "alpha {alpha}: {} members after {previous}",
                clean.len()
            );
            previous = clean.len();
        }
    }

    fn batch_from(ids: &[u64], labels: &[usize], selected: &[bool]) -> PseudoLabelBatch {
        PseudoLabelBatch {
            domain_id: 0,
            entries: ids
                .iter()
                .zip(labels)
                .zip(selected)
                .map(
                    |((&example_id, &pseudo_label), &selected)| PseudoLabelEntry {
                        example_id,
                        distribution: vec![0.5, 0.5],
                        pseudo_label,
                        confidence: 0.9,
                        local_threshold: 0.5,
                        selected,
                    },
                )
                .collect(),
        }
    }

    #[test]
    fn no_selected_samples_means_empty_clean_set() {
        let embeddings = unit_rows(vec![vec![1.0, 0.0]; 3]);
        let batch = batch_from(&[0, 1, 2], &[0, 0, 0], &[false, false, false]);
        let clean = refine(&embeddings, &batch, &cfg(1, 0.5)).unwrap();
        assert!(clean.is_empty());
        assert!(clean.complement.is_empty());
    }

    #[test]
    fn members_and_complement_partition_the_selected_set() {
        let mut rng = stream_rng(23, 0);
        let n = 30;
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let embeddings = unit_rows(raw);
        let ids: Vec<u64> = (0..n as u64).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let selected: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.7).collect();
        let batch = batch_from(&ids, &labels, &selected);
        let clean = refine(&embeddings, &batch, &cfg(5, 0.5)).unwrap();
        let mut all: Vec<u64> = clean
            .members
            .iter()
            .map(|m| m.example_id)
            .chain(clean.complement.iter().copied())
            .collect();
        all.sort_unstable();
        let mut expected: Vec<u64> = batch.selected().map(|e| e.example_id).collect();
        expected.sort_unstable();
        assert_eq!(all, expected);
    }

    #[test]
    fn refinement_is_permutation_invariant() {
        let mut rng = stream_rng(31, 0);
        let n = 24;
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..5).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let embeddings = unit_rows(raw.clone());
        let ids: Vec<u64> = (0..n as u64).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let selected = vec![true; n];
        let batch = batch_from(&ids, &labels, &selected);
        let clean = refine(&embeddings, &batch, &cfg(6, 0.4)).unwrap();

        // Reverse the input order.
        let rev_embeddings = unit_rows(raw.into_iter().rev().collect());
        let rev_ids: Vec<u64> = ids.iter().rev().copied().collect();
        let rev_labels: Vec<usize> = labels.iter().rev().copied().collect();
        let rev_batch = batch_from(&rev_ids, &rev_labels, &selected);
        let rev_clean = refine(&rev_embeddings, &rev_batch, &cfg(6, 0.4)).unwrap();

        let set = |c: &CleanSet| -> Vec<u64> {
            let mut v: Vec<u64> = c.members.iter().map(|m| m.example_id).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(set(&clean), set(&rev_clean));
    }

    #[test]
    fn two_cluster_noise_is_reduced() {
        // Two well-separated clusters with 30% symmetric pseudo-label noise:
        // the clean set must be more accurate than the raw pseudo-labels.
        for seed in 0..5u64 {
            let mut rng = stream_rng(seed, 0);
            let n_per = 60usize;
            let mut raw = Vec::new();
            let mut truth = Vec::new();
            for c in 0..2usize {
                let center = if c == 0 {
                    [4.0, 0.0, 0.0]
                } else {
                    [-4.0, 0.0, 3.0]
                };
                for _ in 0..n_per {
                    let point: Vec<f64> = center
                        .iter()
                        .map(|&m| {
                            let n: f64 = StandardNormal.sample(&mut rng);
                            m + 0.5 * n
                        })
                        .collect();
                    raw.push(point);
                    truth.push(c);
                }
            }
            let embeddings = unit_rows(raw);
            let pseudo: Vec<usize> = truth
                .iter()
                .map(|&c| if rng.random::<f64>() < 0.3 { 1 - c } else { c })
                .collect();
            let ids: Vec<u64> = (0..truth.len() as u64).collect();
            let config = RefineConfig {
                k_neighbors: 10,
                alpha: 0.5,
                min_class_size: 2,
                global_fractile: false,
            };
            let aggregates = knn_aggregate(&embeddings, &pseudo, &ids, &config).unwrap();
            let clean = select_clean(&aggregates, &pseudo, &ids, &config).unwrap();
            assert!(!clean.is_empty());

            let raw_accuracy = pseudo.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64
                / truth.len() as f64;
            let clean_accuracy = clean
                .members
                .iter()
                .filter(|m| m.corrected_label == truth[m.example_id as usize])
                .count() as f64
                / clean.len() as f64;
            assert!(
                clean_accuracy > raw_accuracy,
                "seed {seed}: clean {clean_accuracy} <= raw {raw_accuracy}"
            );
        }
    }
}
