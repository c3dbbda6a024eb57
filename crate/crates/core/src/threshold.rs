//! Adaptive confidence thresholding for pseudo-label selection.
//!
//! Each source domain owns an EMA state: a global threshold `tau_g` tracking
//! the model's mean max-confidence on that domain's unlabeled batches, and a
//! per-class expectation vector tracking the mean predicted distribution.
//! Class-specific thresholds are the max-normalized expectations scaled by
//! `tau_g`, so the hardest-learned classes get the lowest bar. A fixed-tau
//! selector provides the baseline comparator.

use ndarray::Array2;

use crate::error::{CatError, Result};

/// Per-domain EMA state.
#[derive(Debug, Clone, PartialEq)]
struct DomainState {
    tau_global: f64,
    expectations: Vec<f64>,
    step: u64,
    empty_batches: u64,
}

impl DomainState {
    fn new(num_classes: usize) -> Self {
        let uniform = 1.0 / num_classes as f64;
        Self {
            tau_global: uniform,
            expectations: vec![uniform; num_classes],
            step: 0,
            empty_batches: 0,
        }
    }
}

/// Threshold controller over a fixed set of source domains.
///
/// With `per_domain` set (the default), every domain id gets independent EMA
/// state; otherwise all ids share a single state, which reproduces the
/// single-domain adaptive-threshold behaviour for ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    lambda: f64,
    num_classes: usize,
    per_domain: bool,
    domain_ids: Vec<usize>,
    slots: Vec<DomainState>,
}

/// One pseudo-labeled sample: the predicted distribution, its argmax label
/// and confidence, and whether it cleared the local threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelEntry {
    pub example_id: u64,
    pub distribution: Vec<f64>,
    pub pseudo_label: usize,
    pub confidence: f64,
    pub local_threshold: f64,
    pub selected: bool,
}

/// Selection outcome for one unlabeled batch from one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelBatch {
    pub domain_id: usize,
    pub entries: Vec<PseudoLabelEntry>,
}

impl PseudoLabelBatch {
    pub fn num_selected(&self) -> usize {
        self.entries.iter().filter(|e| e.selected).count()
    }

    /// Fraction of the batch that cleared its threshold.
    pub fn yield_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            0.0
        } else {
            self.num_selected() as f64 / self.entries.len() as f64
        }
    }

    pub fn selected(&self) -> impl Iterator<Item = &PseudoLabelEntry> {
        self.entries.iter().filter(|e| e.selected)
    }
}

/// Argmax with ties broken by the lowest class index.
fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_value = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    (best, best_value)
}

fn validate_distributions(probs: &Array2<f64>, num_classes: usize) -> Result<()> {
    if probs.ncols() != num_classes {
        return Err(CatError::Contract(format!(
            "distributions have {} classes, state expects {}",
            probs.ncols(),
            num_classes
        )));
    }
    for (i, row) in probs.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(CatError::Contract(format!(
                "row {i} is not a distribution (sum {sum})"
            )));
        }
    }
    Ok(())
}

impl ThresholdState {
    /// Fresh state: `tau_g = 1/C` and uniform expectations for every domain.
    pub fn new(
        num_classes: usize,
        domain_ids: &[usize],
        lambda: f64,
        per_domain: bool,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(CatError::Config("num_classes must be >= 2".into()));
        }
        if domain_ids.is_empty() {
            return Err(CatError::Config(
                "at least one source domain required".into(),
            ));
        }
        let mut unique = domain_ids.to_vec();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != domain_ids.len() {
            return Err(CatError::Config("duplicate domain ids".into()));
        }
        if !(0.0..1.0).contains(&lambda) || lambda <= 0.0 {
            return Err(CatError::Config(format!(
                "EMA momentum must be in (0, 1), got {lambda}"
            )));
        }
        let slot_count = if per_domain { domain_ids.len() } else { 1 };
        Ok(Self {
            lambda,
            num_classes,
            per_domain,
            domain_ids: domain_ids.to_vec(),
            slots: vec![DomainState::new(num_classes); slot_count],
        })
    }

    /// Test/inspection constructor with explicit per-slot state.
    #[cfg(test)]
    pub(crate) fn from_parts(
        num_classes: usize,
        domain_ids: &[usize],
        lambda: f64,
        per_domain: bool,
        states: Vec<(f64, Vec<f64>)>,
    ) -> Self {
        let mut state = Self::new(num_classes, domain_ids, lambda, per_domain).unwrap();
        assert_eq!(states.len(), state.slots.len());
        for (slot, (tau, e)) in state.slots.iter_mut().zip(states) {
            slot.tau_global = tau;
            assert_eq!(e.len(), num_classes);
            slot.expectations = e;
        }
        state
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn domain_ids(&self) -> &[usize] {
        &self.domain_ids
    }

    fn slot_index(&self, domain_id: usize) -> Result<usize> {
        let position = self
            .domain_ids
            .iter()
            .position(|&d| d == domain_id)
            .ok_or_else(|| CatError::Contract(format!("unknown domain_id {domain_id}")))?;
        Ok(if self.per_domain { position } else { 0 })
    }

    pub fn tau_global(&self, domain_id: usize) -> Result<f64> {
        Ok(self.slots[self.slot_index(domain_id)?].tau_global)
    }

    pub fn expectations(&self, domain_id: usize) -> Result<&[f64]> {
        Ok(&self.slots[self.slot_index(domain_id)?].expectations)
    }

    pub fn step(&self, domain_id: usize) -> Result<u64> {
        Ok(self.slots[self.slot_index(domain_id)?].step)
    }

    /// Batches skipped because they were empty (warnings).
    pub fn empty_batches(&self, domain_id: usize) -> Result<u64> {
        Ok(self.slots[self.slot_index(domain_id)?].empty_batches)
    }

    /// EMA update of the global threshold from the batch's max-confidences:
    /// `tau_g <- lambda tau_g + (1 - lambda) mean(confidences)`.
    pub fn update_global(&mut self, domain_id: usize, confidences: &[f64]) -> Result<()> {
        let slot = self.slot_index(domain_id)?;
        if confidences.is_empty() {
            log::warn!("empty confidence batch for domain {domain_id}; threshold unchanged");
            self.slots[slot].empty_batches += 1;
            return Ok(());
        }
        if confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(CatError::Contract("confidences must lie in [0, 1]".into()));
        }
        let mean = confidences.iter().sum::<f64>() / confidences.len() as f64;
        let state = &mut self.slots[slot];
        state.tau_global = self.lambda * state.tau_global + (1.0 - self.lambda) * mean;
        state.step += 1;
        Ok(())
    }

    /// EMA update of the per-class expectations from the batch-mean
    /// predicted distribution.
    pub fn update_expectations(&mut self, domain_id: usize, probs: &Array2<f64>) -> Result<()> {
        let slot = self.slot_index(domain_id)?;
        if probs.nrows() == 0 {
            log::warn!("empty distribution batch for domain {domain_id}; expectations unchanged");
            self.slots[slot].empty_batches += 1;
            return Ok(());
        }
        validate_distributions(probs, self.num_classes)?;
        let n = probs.nrows() as f64;
        let state = &mut self.slots[slot];
        for (c, e) in state.expectations.iter_mut().enumerate() {
            let mean = probs.column(c).sum() / n;
            *e = self.lambda * *e + (1.0 - self.lambda) * mean;
        }
        Ok(())
    }

    /// Class-specific thresholds `tau_g(c) = (E(c) / max E) * tau_g`.
    ///
    /// Degenerate all-zero expectations fall back to a uniform `tau_g`.
    pub fn local_thresholds(&self, domain_id: usize) -> Result<Vec<f64>> {
        let state = &self.slots[self.slot_index(domain_id)?];
        let max = state
            .expectations
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if max <= 0.0 {
            log::warn!("all-zero expectations for domain {domain_id}; using uniform tau_g");
            return Ok(vec![state.tau_global; self.num_classes]);
        }
        Ok(state
            .expectations
            .iter()
            .map(|e| (e / max) * state.tau_global)
            .collect())
    }

    /// Pseudo-labels one batch: a sample is selected iff its confidence
    /// strictly exceeds the local threshold of its argmax class.
    pub fn select(
        &self,
        domain_id: usize,
        example_ids: &[u64],
        probs: &Array2<f64>,
    ) -> Result<PseudoLabelBatch> {
        let thresholds = self.local_thresholds(domain_id)?;
        validate_distributions(probs, self.num_classes)?;
        if example_ids.len() != probs.nrows() {
            return Err(CatError::Contract(
                "example_ids must align with distribution rows".into(),
            ));
        }
        let entries = probs
            .rows()
            .into_iter()
            .zip(example_ids)
            .map(|(row, &example_id)| {
                let slice = row.as_slice().expect("contiguous row");
                let (pseudo_label, confidence) = argmax(slice);
                let local_threshold = thresholds[pseudo_label];
                PseudoLabelEntry {
                    example_id,
                    distribution: slice.to_vec(),
                    pseudo_label,
                    confidence,
                    local_threshold,
                    selected: confidence > local_threshold,
                }
            })
            .collect();
        Ok(PseudoLabelBatch { domain_id, entries })
    }
}

/// FixMatch-style selection against one constant threshold.
pub fn fixed_select(
    tau: f64,
    domain_id: usize,
    example_ids: &[u64],
    probs: &Array2<f64>,
) -> Result<PseudoLabelBatch> {
    if !(0.0 < tau && tau < 1.0) {
        return Err(CatError::Config(format!(
            "tau must be in (0, 1), got {tau}"
        )));
    }
    if example_ids.len() != probs.nrows() {
        return Err(CatError::Contract(
            "example_ids must align with distribution rows".into(),
        ));
    }
    let entries = probs
        .rows()
        .into_iter()
        .zip(example_ids)
        .map(|(row, &example_id)| {
            let slice = row.as_slice().expect("contiguous row");
            let (pseudo_label, confidence) = argmax(slice);
            PseudoLabelEntry {
                example_id,
                distribution: slice.to_vec(),
                pseudo_label,
                confidence,
                local_threshold: tau,
                selected: confidence > tau,
            }
        })
        .collect();
    Ok(PseudoLabelBatch { domain_id, entries })
}
