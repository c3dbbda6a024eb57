//! Core dataset types, label-budget splitting, and leave-one-domain-out folds.
//!
//! Ground-truth labels of unlabeled examples are held in an evaluation-only
//! [`HiddenLabels`] table so training code can never read them: trainer code
//! paths receive `Example`s whose `label` is `None`.

use std::collections::{HashMap, HashSet};

use ndarray::Array2;
use rand::seq::index::sample;

use crate::error::{CatError, Result};
use crate::rng::{derive_seed, stream_rng};

/// One sample: a feature vector, an optional class label, and its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: Option<usize>,
    pub domain_id: usize,
    pub example_id: u64,
}

/// A multi-domain dataset with dense class indices `0..num_classes` and
/// dense domain ids `0..num_domains`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    domains: Vec<Vec<Example>>,
    num_classes: usize,
    feature_dim: usize,
}

impl DomainDataset {
    /// Validates shapes, label ranges, domain ids, and id uniqueness.
    pub fn new(domains: Vec<Vec<Example>>, num_classes: usize, feature_dim: usize) -> Result<Self> {
        if num_classes < 1 {
            return Err(CatError::Data("num_classes must be >= 1".into()));
        }
        let mut seen_ids = HashSet::new();
        for (k, domain) in domains.iter().enumerate() {
            for ex in domain {
                if ex.domain_id != k {
                    return Err(CatError::Data(format!(
                        "example {} stored under domain {} but carries domain_id {}",
                        ex.example_id, k, ex.domain_id
                    )));
                }
                if ex.features.len() != feature_dim {
                    return Err(CatError::Data(format!(
                        "example {} has {} features, expected {}",
                        ex.example_id,
                        ex.features.len(),
                        feature_dim
                    )));
                }
                if let Some(label) = ex.label {
                    if label >= num_classes {
                        return Err(CatError::Data(format!(
                            "example {} has label {} outside [0, {})",
                            ex.example_id, label, num_classes
                        )));
                    }
                }
                if !seen_ids.insert(ex.example_id) {
                    return Err(CatError::Data(format!(
                        "duplicate example_id {}",
                        ex.example_id
                    )));
                }
            }
        }
        Ok(Self {
            domains,
            num_classes,
            feature_dim,
        })
    }

    pub fn domains(&self) -> &[Vec<Example>] {
        &self.domains
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.domains.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stacks example features into a row-per-sample matrix.
pub fn features_matrix(examples: &[Example], feature_dim: usize) -> Array2<f64> {
    let mut x = Array2::zeros((examples.len(), feature_dim));
    for (i, ex) in examples.iter().enumerate() {
        for (j, &v) in ex.features.iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    x
}

/// Evaluation-only view of the true labels of unlabeled examples.
///
/// Constructed during splitting; training code never holds one.
#[derive(Debug, Clone)]
pub struct HiddenLabels {
    map: HashMap<u64, usize>,
}

impl HiddenLabels {
    pub fn true_label(&self, example_id: u64) -> Option<usize> {
        self.map.get(&example_id).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// One leave-one-domain-out fold: labeled + unlabeled source data and the
/// held-out target domain.
#[derive(Debug, Clone)]
pub struct SsdgSplit {
    /// Labeled source examples (all carry `Some(label)`).
    pub labeled: Vec<Example>,
    /// Unlabeled source examples (`label` is `None`).
    pub unlabeled: Vec<Example>,
    /// Held-out target examples; labels retained for evaluation only.
    pub target: Vec<Example>,
    pub held_out_domain: usize,
    /// Source domain ids actually used (may be a subset under `num_sources`).
    pub source_domains: Vec<usize>,
    pub num_classes: usize,
    pub feature_dim: usize,
    hidden: HiddenLabels,
}

impl SsdgSplit {
    /// Evaluation-only access to the hidden labels of `unlabeled`.
    pub fn eval_labels(&self) -> &HiddenLabels {
        &self.hidden
    }
}

/// Controls label budgets and source selection for fold construction.
#[derive(Debug, Clone)]
pub struct SplitOptions {
    /// Labeled examples per class per source domain (n_L).
    pub labels_per_class: usize,
    /// Restrict each fold to this many source domains, chosen by seeded draw
    /// from the non-target domains. `None` uses all of them.
    pub num_sources: Option<usize>,
    pub seed: u64,
}

const SOURCE_DRAW_SALT: u64 = 0x51;

/// Labeled picks, label-erased remainder, and the hidden-label table that
/// records the erased ground truth for evaluation.
pub type LabelSplit = (Vec<Example>, Vec<Example>, HashMap<u64, usize>);

/// Splits one domain's examples into exactly `labels_per_class` labeled
/// examples per class (deterministic under `seed`) and the unlabeled rest.
///
/// Returned unlabeled examples have `label` erased; the true labels go into
/// the per-example map handed back for evaluation.
pub fn split_labels(
    examples: &[Example],
    labels_per_class: usize,
    num_classes: usize,
    seed: u64,
) -> Result<LabelSplit> {
    if labels_per_class == 0 {
        return Err(CatError::Config("labels_per_class must be >= 1".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (idx, ex) in examples.iter().enumerate() {
        if let Some(c) = ex.label {
            by_class[c].push(idx);
        }
    }

    let domain = examples.first().map(|e| e.domain_id).unwrap_or(0);
    let mut rng = stream_rng(derive_seed(seed, domain as u64), 0);
    let mut labeled_idx: HashSet<usize> = HashSet::new();
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < labels_per_class {
            return Err(CatError::Data(format!(
                "class {} in domain {} has {} labeled candidates, need {}",
                class,
                domain,
                members.len(),
                labels_per_class
            )));
        }
        for pick in sample(&mut rng, members.len(), labels_per_class) {
            labeled_idx.insert(members[pick]);
        }
    }

    let mut labeled = Vec::with_capacity(labels_per_class * num_classes);
    let mut unlabeled = Vec::new();
    let mut hidden = HashMap::new();
    for (idx, ex) in examples.iter().enumerate() {
        if labeled_idx.contains(&idx) {
            labeled.push(ex.clone());
        } else {
            let mut masked = ex.clone();
            if let Some(label) = masked.label.take() {
                hidden.insert(masked.example_id, label);
            }
            unlabeled.push(masked);
        }
    }
    debug_assert_eq!(examples.len(), labeled.len() + unlabeled.len());
    Ok((labeled, unlabeled, hidden))
}

/// Builds one fold per domain: fold `k` holds domain `k` out as target and
/// trains on the remaining domains (optionally a seeded subset of them).
pub fn build_lodo_folds(dataset: &DomainDataset, opts: &SplitOptions) -> Result<Vec<SsdgSplit>> {
    let num_domains = dataset.num_domains();
    if num_domains < 2 {
        return Err(CatError::Config(format!(
            "leave-one-domain-out needs >= 2 domains, got {num_domains}"
        )));
    }
    if let Some(k) = opts.num_sources {
        if k == 0 || k > num_domains - 1 {
            return Err(CatError::Config(format!(
                "num_sources must be in [1, {}], got {k}",
                num_domains - 1
            )));
        }
    }

    let mut folds = Vec::with_capacity(num_domains);
    for target_domain in 0..num_domains {
        let mut candidates: Vec<usize> = (0..num_domains).filter(|&d| d != target_domain).collect();
        let source_domains = match opts.num_sources {
            Some(k) if k < candidates.len() => {
                let mut rng = stream_rng(
                    derive_seed(opts.seed, SOURCE_DRAW_SALT),
                    target_domain as u64,
                );
                let mut chosen: Vec<usize> = sample(&mut rng, candidates.len(), k)
                    .iter()
                    .map(|i| candidates[i])
                    .collect();
                chosen.sort_unstable();
                chosen
            }
            _ => {
                candidates.sort_unstable();
                candidates
            }
        };

        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        let mut hidden = HashMap::new();
        for &d in &source_domains {
            let (l, u, h) = split_labels(
                &dataset.domains()[d],
                opts.labels_per_class,
                dataset.num_classes(),
                opts.seed,
            )?;
            labeled.extend(l);
            unlabeled.extend(u);
            hidden.extend(h);
        }
        folds.push(SsdgSplit {
            labeled,
            unlabeled,
            target: dataset.domains()[target_domain].clone(),
            held_out_domain: target_domain,
            source_domains,
            num_classes: dataset.num_classes(),
            feature_dim: dataset.feature_dim(),
            hidden: HiddenLabels { map: hidden },
        });
    }
    Ok(folds)
}
