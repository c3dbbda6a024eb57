//! The training loop: warm-up, per-step supervised / unsupervised /
//! contrastive losses, threshold EMA updates, periodic pseudo-label
//! refinement, baseline trainers, and leave-one-domain-out evaluation.
//!
//! Pseudo-labels and selection masks are decided from the weak-view
//! predictions at the current parameters and then treated as constants; the
//! differentiable part of a step is a pure function of the parameters given
//! those decisions, which is what the finite-difference suite checks.

use std::collections::HashMap;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::contrastive::{supcon_loss, unsup_nce_loss, ContrastiveConfig};
use crate::data::{
    build_lodo_folds, features_matrix, DomainDataset, Example, SplitOptions, SsdgSplit,
};
use crate::error::{CatError, Result};
use crate::model::{
    backward, cross_entropy, forward, masked_cross_entropy, Gradients, ModelConfig, ModelParams,
    SgdOptimizer,
};
use crate::refine::{knn_aggregate, select_clean, RefineConfig};
use crate::rng::{derive_seed, stream_rng};
use crate::threshold::{fixed_select, PseudoLabelBatch, ThresholdState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cat,
    FixmatchBaseline,
    SupervisedOnly,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Method::Cat => "cat",
            Method::FixmatchBaseline => "fixmatch_baseline",
            Method::SupervisedOnly => "supervised_only",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Method {
    type Err = CatError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cat" => Ok(Method::Cat),
            "fixmatch_baseline" => Ok(Method::FixmatchBaseline),
            "supervised_only" => Ok(Method::SupervisedOnly),
            other => Err(CatError::Config(format!(
                "unknown method `{other}`; expected cat, fixmatch_baseline, or supervised_only"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Labeled samples drawn per source domain per step (B).
    pub labeled_batch_per_domain: usize,
    /// Unlabeled-to-labeled batch ratio (mu); mu*B unlabeled per domain.
    pub unlabeled_ratio: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Weight of the unsupervised consistency loss.
    pub lambda_u: f64,
    /// Weight of the contrastive loss block.
    pub lambda_scl: f64,
    /// EMA momentum of the threshold controller.
    pub ema_lambda: f64,
    /// Refinement cadence in steps; 0 disables refinement and with it the
    /// whole contrastive stage of the main loop.
    pub refine_interval: usize,
    /// Constant threshold for the fixmatch_baseline method.
    pub fixed_tau: f64,
    /// Independent threshold state per source domain (the adaptive method's
    /// default); false shares one state across domains.
    pub per_domain_thresholds: bool,
    /// Average the unsupervised loss per domain before combining instead of
    /// pooling all domains into one denominator.
    pub per_domain_unsup_loss: bool,
    pub labels_per_class: usize,
    /// Restrict folds to this many source domains (seeded draw).
    pub num_sources: Option<usize>,
    pub seed: u64,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub refine: RefineConfig,
    pub contrastive: ContrastiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Cat,
            epochs: 12,
            steps_per_epoch: 40,
            labeled_batch_per_domain: 16,
            unlabeled_ratio: 1,
            lr: 0.003,
            momentum: 0.9,
            lambda_u: 1.0,
            lambda_scl: 1.0,
            ema_lambda: 0.99,
            refine_interval: 40,
            fixed_tau: 0.95,
            per_domain_thresholds: true,
            per_domain_unsup_loss: false,
            labels_per_class: 10,
            num_sources: None,
            seed: 0,
            model: ModelConfig::default(),
            augment: AugmentConfig::default(),
            refine: RefineConfig::default(),
            contrastive: ContrastiveConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(CatError::Config(
                "epochs and steps_per_epoch must be >= 1".into(),
            ));
        }
        if self.labeled_batch_per_domain == 0 || self.unlabeled_ratio == 0 {
            return Err(CatError::Config("batch sizes must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(CatError::Config("lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CatError::Config("momentum must be in [0, 1)".into()));
        }
        if self.lambda_u < 0.0 || self.lambda_scl < 0.0 {
            return Err(CatError::Config("loss weights must be >= 0".into()));
        }
        if !(0.0 < self.ema_lambda && self.ema_lambda < 1.0) {
            return Err(CatError::Config("ema_lambda must be in (0, 1)".into()));
        }
        if !(0.0 < self.fixed_tau && self.fixed_tau < 1.0) {
            return Err(CatError::Config("fixed_tau must be in (0, 1)".into()));
        }
        if self.labels_per_class == 0 {
            return Err(CatError::Config("labels_per_class must be >= 1".into()));
        }
        self.augment.validate()?;
        self.refine.validate()?;
        self.contrastive.validate()?;
        Ok(())
    }
}

/// One per-epoch metrics record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub warmup: bool,
    pub target_accuracy: f64,
    pub source_accuracy: f64,
    pub loss_supervised: f64,
    pub loss_unsupervised: f64,
    pub loss_contrastive: f64,
    pub loss_total: f64,
    /// Per source domain, ordered as `source_domains`.
    pub yield_per_domain: Vec<f64>,
    pub precision_per_domain: Vec<f64>,
    pub clean_set_size: usize,
    pub clean_set_accuracy: f64,
    pub tau_global_per_domain: Vec<f64>,
}

/// One row of the threshold trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdLogRow {
    pub step: u64,
    pub domain: usize,
    pub tau_global: f64,
    pub expectations: Vec<f64>,
    pub yield_fraction: f64,
    pub precision: f64,
}

/// Loss components of one training step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub supervised: f64,
    pub unsupervised: f64,
    pub contrastive: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLossRow {
    pub step: u64,
    #[serde(flatten)]
    pub parts: LossParts,
}

/// Row of the refinement report for one threshold-selected sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementRow {
    pub example_id: u64,
    pub pseudo_label: usize,
    pub corrected_label: usize,
    pub agreement: f64,
    pub selected: bool,
}

/// Everything one fold produces.
#[derive(Debug, Clone)]
pub struct FoldMetrics {
    pub held_out_domain: usize,
    pub source_domains: Vec<usize>,
    pub epochs: Vec<EpochRecord>,
    /// Mean target accuracy over the last (up to) five main epochs.
    pub final_score: f64,
    pub threshold_log: Vec<ThresholdLogRow>,
    pub step_losses: Vec<StepLossRow>,
    /// Report from the most recent refinement pass, if any ran.
    pub refinement_report: Vec<RefinementRow>,
    pub final_params: ModelParams,
}

/// All folds of one leave-one-domain-out run.
#[derive(Debug, Clone)]
pub struct LodoOutcome {
    pub folds: Vec<FoldMetrics>,
    /// Arithmetic mean of the per-fold final scores.
    pub aggregate: f64,
}

// ---------------------------------------------------------------------------
// Step inputs: everything a step needs besides the parameters.
// ---------------------------------------------------------------------------

/// One domain's unlabeled views for a step.
#[derive(Debug, Clone)]
struct DomainViews {
    domain_id: usize,
    example_ids: Vec<u64>,
    weak: Array2<f64>,
    strong: Array2<f64>,
}

/// Stop-gradient decisions plus batch data; the differentiable loss is a
/// pure function of the parameters given one of these.
#[derive(Debug, Clone)]
struct StepInputs {
    labeled_x: Array2<f64>,
    labeled_y: Vec<usize>,
    unlabeled: Vec<DomainViews>,
    /// Pseudo-label selections per domain (absent during warm-up and for the
    /// supervised baseline).
    selections: Option<Vec<PseudoLabelBatch>>,
    /// (domain index, row, supervision label) triples for the supervised
    /// contrastive term.
    scl_rows: Vec<(usize, usize, usize)>,
    /// (domain index, row) pairs for the unsupervised contrastive term.
    nce_rows: Vec<(usize, usize)>,
}

impl StepInputs {
    fn unsup_active(&self) -> bool {
        self.selections.is_some() && !self.unlabeled.is_empty()
    }
}

/// Computes the composite loss and exact gradients for fixed step inputs.
fn composite_loss(
    params: &ModelParams,
    inputs: &StepInputs,
    config: &TrainConfig,
) -> Result<(LossParts, Gradients)> {
    let mut parts = LossParts::default();
    let labeled_trace = forward(params, &inputs.labeled_x)?;
    let (l_s, dlogits_l) = cross_entropy(&labeled_trace, &inputs.labeled_y)?;
    parts.supervised = l_s;
    let zero_embed = Array2::zeros(labeled_trace.embeddings.raw_dim());
    let mut grads = backward(params, &labeled_trace, &dlogits_l, &zero_embed)?;

    let need_unsup = config.lambda_u != 0.0 && inputs.unsup_active();
    let need_scl = config.lambda_scl != 0.0 && inputs.scl_rows.len() >= 2;
    let need_nce = config.lambda_scl != 0.0 && !inputs.nce_rows.is_empty();

    if !(need_unsup || need_scl || need_nce) {
        parts.total = parts.supervised;
        return Ok((parts, grads));
    }

    // Forward passes for the views that some active term touches.
    let strong_traces: Vec<_> = inputs
        .unlabeled
        .iter()
        .map(|v| forward(params, &v.strong))
        .collect::<Result<_>>()?;
    let weak_traces: Vec<_> = if need_nce {
        inputs
            .unlabeled
            .iter()
            .map(|v| forward(params, &v.weak))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut dlogits_strong: Vec<Array2<f64>> = strong_traces
        .iter()
        .map(|t| Array2::zeros(t.logits.raw_dim()))
        .collect();
    let mut dembed_strong: Vec<Array2<f64>> = strong_traces
        .iter()
        .map(|t| Array2::zeros(t.embeddings.raw_dim()))
        .collect();
    let mut dembed_weak: Vec<Array2<f64>> = weak_traces
        .iter()
        .map(|t| Array2::zeros(t.embeddings.raw_dim()))
        .collect();

    if need_unsup {
        let selections = inputs.selections.as_ref().expect("unsup_active checked");
        let pooled_denom: usize = inputs.unlabeled.iter().map(|v| v.weak.nrows()).sum();
        let mut l_u = 0.0;
        if pooled_denom > 0 {
            let active_domains = inputs
                .unlabeled
                .iter()
                .filter(|v| v.weak.nrows() > 0)
                .count();
            for (d, views) in inputs.unlabeled.iter().enumerate() {
                let n = views.weak.nrows();
                if n == 0 {
                    continue;
                }
                let selection = &selections[d];
                let targets: Vec<usize> =
                    selection.entries.iter().map(|e| e.pseudo_label).collect();
                let mask: Vec<bool> = selection.entries.iter().map(|e| e.selected).collect();
                let denom = if config.per_domain_unsup_loss {
                    n
                } else {
                    pooled_denom
                };
                let (part, mut dlogits) =
                    masked_cross_entropy(&strong_traces[d], &targets, &mask, denom)?;
                if config.per_domain_unsup_loss {
                    let scale = 1.0 / active_domains as f64;
                    l_u += part * scale;
                    dlogits.mapv_inplace(|v| v * scale);
                } else {
                    l_u += part;
                }
                dlogits_strong[d] += &(dlogits * config.lambda_u);
            }
        }
        parts.unsupervised = l_u;
    }

    if need_scl {
        let rows: Vec<_> = inputs
            .scl_rows
            .iter()
            .map(|&(d, row, _)| strong_traces[d].embeddings.row(row))
            .collect();
        let z = ndarray::stack(Axis(0), &rows)
            .map_err(|e| CatError::Contract(format!("embedding stack failed: {e}")))?;
        let labels: Vec<usize> = inputs.scl_rows.iter().map(|&(_, _, l)| l).collect();
        let (l_scl, dz) = supcon_loss(&z, &labels, config.contrastive.temperature)?;
        parts.contrastive += l_scl;
        for (k, &(d, row, _)) in inputs.scl_rows.iter().enumerate() {
            let mut target = dembed_strong[d].row_mut(row);
            target.scaled_add(config.lambda_scl, &dz.row(k));
        }
    }

    if need_nce {
        let anchor_rows: Vec<_> = inputs
            .nce_rows
            .iter()
            .map(|&(d, row)| weak_traces[d].embeddings.row(row))
            .collect();
        let positive_rows: Vec<_> = inputs
            .nce_rows
            .iter()
            .map(|&(d, row)| strong_traces[d].embeddings.row(row))
            .collect();
        let anchors = ndarray::stack(Axis(0), &anchor_rows)
            .map_err(|e| CatError::Contract(format!("embedding stack failed: {e}")))?;
        let positives = ndarray::stack(Axis(0), &positive_rows)
            .map_err(|e| CatError::Contract(format!("embedding stack failed: {e}")))?;
        let (l_nce, da, dp) = unsup_nce_loss(&anchors, &positives, config.contrastive.temperature)?;
        parts.contrastive += l_nce;
        for (k, &(d, row)) in inputs.nce_rows.iter().enumerate() {
            dembed_weak[d]
                .row_mut(row)
                .scaled_add(config.lambda_scl, &da.row(k));
            dembed_strong[d]
                .row_mut(row)
                .scaled_add(config.lambda_scl, &dp.row(k));
        }
    }

    for (d, trace) in strong_traces.iter().enumerate() {
        if trace.batch_size() == 0 {
            continue;
        }
        let touched = dlogits_strong[d].iter().any(|&v| v != 0.0)
            || dembed_strong[d].iter().any(|&v| v != 0.0);
        if touched {
            let g = backward(params, trace, &dlogits_strong[d], &dembed_strong[d])?;
            grads.add_scaled(&g, 1.0);
        }
    }
    for (d, trace) in weak_traces.iter().enumerate() {
        if trace.batch_size() == 0 {
            continue;
        }
        if dembed_weak[d].iter().any(|&v| v != 0.0) {
            let zero_logits = Array2::zeros(trace.logits.raw_dim());
            let g = backward(params, trace, &zero_logits, &dembed_weak[d])?;
            grads.add_scaled(&g, 1.0);
        }
    }

    parts.total = parts.supervised
        + config.lambda_u * parts.unsupervised
        + config.lambda_scl * parts.contrastive;
    Ok((parts, grads))
}

/// Loss-only evaluation of [`composite_loss`] for finite differencing.
#[cfg(test)]
fn composite_loss_value(
    params: &ModelParams,
    inputs: &StepInputs,
    config: &TrainConfig,
) -> Result<f64> {
    composite_loss(params, inputs, config).map(|(parts, _)| parts.total)
}

// ---------------------------------------------------------------------------
// Fold runtime
// ---------------------------------------------------------------------------

struct Pool {
    x: Array2<f64>,
    ids: Vec<u64>,
    labels: Vec<usize>,
}

fn pool_of(examples: &[Example], dim: usize) -> Pool {
    Pool {
        x: features_matrix(examples, dim),
        ids: examples.iter().map(|e| e.example_id).collect(),
        labels: examples.iter().map(|e| e.label.unwrap_or(0)).collect(),
    }
}

fn draw_indices<R: Rng>(rng: &mut R, pool: usize, amount: usize) -> Vec<usize> {
    if pool <= amount {
        (0..pool).collect()
    } else {
        rand::seq::index::sample(rng, pool, amount).into_vec()
    }
}

/// Fraction of `predictions` matching the labels of `examples` (unlabeled
/// rows are skipped).
fn accuracy_against(examples: &[Example], predictions: &[usize]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (ex, &p) in examples.iter().zip(predictions) {
        if let Some(label) = ex.label {
            total += 1;
            if label == p {
                correct += 1;
            }
        }
    }
    if total == 0 {
        log::warn!("no labeled examples to score; reporting 0 accuracy");
        0.0
    } else {
        correct as f64 / total as f64
    }
}

struct FoldRuntime<'a> {
    config: &'a TrainConfig,
    split: &'a SsdgSplit,
    params: ModelParams,
    optimizer: SgdOptimizer,
    thresholds: Option<ThresholdState>,
    /// example_id -> corrected label for current clean-set members.
    clean_map: HashMap<u64, usize>,
    labeled_pools: Vec<Pool>,
    unlabeled_pools: Vec<Pool>,
    rng_labeled: ChaCha8Rng,
    rng_unlabeled: ChaCha8Rng,
    rng_augment: ChaCha8Rng,
}

struct StepOutcome {
    parts: LossParts,
    selections: Option<Vec<PseudoLabelBatch>>,
}

impl<'a> FoldRuntime<'a> {
    fn new(split: &'a SsdgSplit, config: &'a TrainConfig) -> Result<Self> {
        let fold_seed = derive_seed(config.seed, split.held_out_domain as u64);
        let mut rng_init = stream_rng(fold_seed, 0);
        let params = ModelParams::init(
            split.feature_dim,
            &config.model,
            split.num_classes,
            &mut rng_init,
        );
        let optimizer = SgdOptimizer::new(config.lr, config.momentum, &params);
        let thresholds = match config.method {
            Method::Cat => Some(ThresholdState::new(
                split.num_classes,
                &split.source_domains,
                config.ema_lambda,
                config.per_domain_thresholds,
            )?),
            _ => None,
        };
        let labeled_pools = split
            .source_domains
            .iter()
            .map(|&d| {
                let examples: Vec<Example> = split
                    .labeled
                    .iter()
                    .filter(|e| e.domain_id == d)
                    .cloned()
                    .collect();
                pool_of(&examples, split.feature_dim)
            })
            .collect();
        let unlabeled_pools = split
            .source_domains
            .iter()
            .map(|&d| {
                let examples: Vec<Example> = split
                    .unlabeled
                    .iter()
                    .filter(|e| e.domain_id == d)
                    .cloned()
                    .collect();
                pool_of(&examples, split.feature_dim)
            })
            .collect();
        Ok(Self {
            config,
            split,
            params,
            optimizer,
            thresholds,
            clean_map: HashMap::new(),
            labeled_pools,
            unlabeled_pools,
            rng_labeled: stream_rng(fold_seed, 1),
            rng_unlabeled: stream_rng(fold_seed, 2),
            rng_augment: stream_rng(fold_seed, 3),
        })
    }

    fn draw_labeled(&mut self) -> (Array2<f64>, Vec<usize>) {
        let b = self.config.labeled_batch_per_domain;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for pool in &self.labeled_pools {
            let idx = draw_indices(&mut self.rng_labeled, pool.ids.len(), b);
            xs.push(pool.x.select(Axis(0), &idx));
            ys.extend(idx.iter().map(|&i| pool.labels[i]));
        }
        let views: Vec<_> = xs.iter().map(|m| m.view()).collect();
        let x = ndarray::concatenate(Axis(0), &views).expect("labeled batch concat");
        (x, ys)
    }

    fn draw_unlabeled_views(&mut self) -> Vec<DomainViews> {
        let amount = self.config.labeled_batch_per_domain * self.config.unlabeled_ratio;
        let mut out = Vec::with_capacity(self.unlabeled_pools.len());
        for (pool, &domain_id) in self.unlabeled_pools.iter().zip(&self.split.source_domains) {
            let idx = draw_indices(&mut self.rng_unlabeled, pool.ids.len(), amount);
            let base = pool.x.select(Axis(0), &idx);
            let example_ids: Vec<u64> = idx.iter().map(|&i| pool.ids[i]).collect();
            let weak = self
                .config
                .augment
                .weak_matrix(&base, &mut self.rng_augment);
            let strong = self
                .config
                .augment
                .strong_matrix(&base, &mut self.rng_augment);
            out.push(DomainViews {
                domain_id,
                example_ids,
                weak,
                strong,
            });
        }
        out
    }

    /// One optimization step. `warmup` switches the unlabeled machinery to
    /// pure unsupervised contrastive pairs.
    fn train_step(&mut self, step: u64, warmup: bool) -> Result<StepOutcome> {
        let (labeled_x, labeled_y) = self.draw_labeled();
        let mut inputs = StepInputs {
            labeled_x,
            labeled_y,
            unlabeled: Vec::new(),
            selections: None,
            scl_rows: Vec::new(),
            nce_rows: Vec::new(),
        };

        if self.config.method != Method::SupervisedOnly {
            inputs.unlabeled = self.draw_unlabeled_views();
        }

        if warmup {
            for (d, views) in inputs.unlabeled.iter().enumerate() {
                for row in 0..views.weak.nrows() {
                    inputs.nce_rows.push((d, row));
                }
            }
        } else if self.config.method != Method::SupervisedOnly {
            let mut selections = Vec::with_capacity(inputs.unlabeled.len());
            for views in &inputs.unlabeled {
                let trace = forward(&self.params, &views.weak)?;
                let selection = match (&self.thresholds, self.config.method) {
                    (Some(state), Method::Cat) => {
                        state.select(views.domain_id, &views.example_ids, &trace.probs)?
                    }
                    _ => fixed_select(
                        self.config.fixed_tau,
                        views.domain_id,
                        &views.example_ids,
                        &trace.probs,
                    )?,
                };
                selections.push(selection);
            }

            // Contrastive stage: clean members get the supervised loss with
            // their corrected labels, everything else the two-view loss.
            if self.config.method == Method::Cat && self.config.refine_interval > 0 {
                for (d, selection) in selections.iter().enumerate() {
                    for (row, entry) in selection.entries.iter().enumerate() {
                        match self.clean_map.get(&entry.example_id) {
                            Some(&label) => inputs.scl_rows.push((d, row, label)),
                            None => inputs.nce_rows.push((d, row)),
                        }
                    }
                }
                if inputs.scl_rows.len() < 2 {
                    inputs.scl_rows.clear();
                }
            }
            inputs.selections = Some(selections);
        }

        let (parts, grads) = composite_loss(&self.params, &inputs, self.config)?;
        if !parts.total.is_finite() {
            let unlabeled_ids: Vec<Vec<u64>> = inputs
                .unlabeled
                .iter()
                .map(|v| v.example_ids.clone())
                .collect();
            return Err(CatError::Numeric(format!(
                "non-finite loss at step {step}: supervised={}, unsupervised={}, contrastive={}; unlabeled ids per domain {:?}",
                parts.supervised, parts.unsupervised, parts.contrastive, unlabeled_ids
            )));
        }
        self.optimizer.step(&mut self.params, &grads);

        // Threshold EMA updates come from this step's weak-view predictions.
        if let (Some(state), Some(selections)) = (&mut self.thresholds, &inputs.selections) {
            for (views, selection) in inputs.unlabeled.iter().zip(selections) {
                if selection.entries.is_empty() {
                    continue;
                }
                let confidences: Vec<f64> =
                    selection.entries.iter().map(|e| e.confidence).collect();
                let probs = {
                    let c = state.num_classes();
                    let mut m = Array2::zeros((selection.entries.len(), c));
                    for (i, entry) in selection.entries.iter().enumerate() {
                        for (j, &p) in entry.distribution.iter().enumerate() {
                            m[[i, j]] = p;
                        }
                    }
                    m
                };
                state.update_global(views.domain_id, &confidences)?;
                state.update_expectations(views.domain_id, &probs)?;
            }
        }

        Ok(StepOutcome {
            parts,
            selections: inputs.selections,
        })
    }

    /// Re-pseudo-labels the whole unlabeled pool with the current model and
    /// thresholds, refines by neighbor agreement, and caches the clean set.
    fn refresh_clean_set(&mut self) -> Result<Vec<RefinementRow>> {
        let state = match &self.thresholds {
            Some(s) => s,
            None => return Ok(Vec::new()),
        };
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut embedding_rows: Vec<Vec<f64>> = Vec::new();
        for (pool, &domain_id) in self.unlabeled_pools.iter().zip(&self.split.source_domains) {
            if pool.ids.is_empty() {
                continue;
            }
            let trace = forward(&self.params, &pool.x)?;
            let selection = state.select(domain_id, &pool.ids, &trace.probs)?;
            for (row, entry) in selection.entries.iter().enumerate() {
                if entry.selected {
                    ids.push(entry.example_id);
                    labels.push(entry.pseudo_label);
                    embedding_rows.push(trace.embeddings.row(row).to_vec());
                }
            }
        }

        self.clean_map.clear();
        if ids.len() < 2 {
            return Ok(Vec::new());
        }
        let dim = embedding_rows[0].len();
        let mut embeddings = Array2::zeros((ids.len(), dim));
        for (i, row) in embedding_rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                embeddings[[i, j]] = v;
            }
        }
        let mut refine_config = self.config.refine.clone();
        refine_config.k_neighbors = refine_config.k_neighbors.min(ids.len() - 1);
        let aggregates = knn_aggregate(&embeddings, &labels, &ids, &refine_config)?;
        let clean = select_clean(&aggregates, &labels, &ids, &refine_config)?;
        for member in &clean.members {
            self.clean_map
                .insert(member.example_id, member.corrected_label);
        }
        let report = aggregates
            .iter()
            .zip(&ids)
            .zip(&labels)
            .map(|((aggregate, &example_id), &pseudo_label)| RefinementRow {
                example_id,
                pseudo_label,
                corrected_label: aggregate.corrected_label,
                agreement: aggregate.agreement,
                selected: self.clean_map.contains_key(&example_id),
            })
            .collect();
        Ok(report)
    }

    fn evaluate(&self, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let x = features_matrix(examples, self.split.feature_dim);
        let predictions = crate::model::predict(&self.params, &x)?;
        Ok(accuracy_against(examples, &predictions))
    }

    /// Clean-set label accuracy against the hidden ground truth.
    fn clean_set_accuracy(&self) -> f64 {
        if self.clean_map.is_empty() {
            return 0.0;
        }
        let eval = self.split.eval_labels();
        let mut correct = 0usize;
        let mut known = 0usize;
        for (&id, &label) in &self.clean_map {
            if let Some(truth) = eval.true_label(id) {
                known += 1;
                if truth == label {
                    correct += 1;
                }
            }
        }
        if known == 0 {
            0.0
        } else {
            correct as f64 / known as f64
        }
    }
}

/// Trains one fold to completion.
pub fn run_fold(split: &SsdgSplit, config: &TrainConfig) -> Result<FoldMetrics> {
    config.validate()?;
    let mut runtime = FoldRuntime::new(split, config)?;
    let mut epochs = Vec::new();
    let mut threshold_log = Vec::new();
    let mut step_losses = Vec::new();
    let mut refinement_report = Vec::new();
    // `main_step` drives refinement cadence and the threshold log (both
    // start after warm-up); `absolute_step` numbers every step for the loss
    // log.
    let mut main_step = 0u64;
    let mut absolute_step = 0u64;

    let warmup_epochs = if config.method == Method::Cat {
        config.contrastive.warmup_epochs
    } else {
        0
    };

    let domains = split.source_domains.len();
    let num_classes = split.num_classes;
    for phase_epoch in 0..(warmup_epochs + config.epochs) {
        let warmup = phase_epoch < warmup_epochs;
        let mut sums = LossParts::default();
        let mut selected_per_domain = vec![0usize; domains];
        let mut entries_per_domain = vec![0usize; domains];
        let mut correct_per_domain = vec![0usize; domains];
        let mut known_per_domain = vec![0usize; domains];

        for _ in 0..config.steps_per_epoch {
            if !warmup
                && config.method == Method::Cat
                && config.refine_interval > 0
                && main_step.is_multiple_of(config.refine_interval as u64)
            {
                refinement_report = runtime.refresh_clean_set()?;
            }

            let outcome = runtime.train_step(absolute_step, warmup)?;
            sums.supervised += outcome.parts.supervised;
            sums.unsupervised += outcome.parts.unsupervised;
            sums.contrastive += outcome.parts.contrastive;
            sums.total += outcome.parts.total;
            step_losses.push(StepLossRow {
                step: absolute_step,
                parts: outcome.parts,
            });

            if let Some(selections) = &outcome.selections {
                let eval = split.eval_labels();
                for (slot, selection) in selections.iter().enumerate() {
                    entries_per_domain[slot] += selection.entries.len();
                    selected_per_domain[slot] += selection.num_selected();
                    for entry in selection.selected() {
                        if let Some(truth) = eval.true_label(entry.example_id) {
                            known_per_domain[slot] += 1;
                            if truth == entry.pseudo_label {
                                correct_per_domain[slot] += 1;
                            }
                        }
                    }
                    let (tau_global, expectations) = match &runtime.thresholds {
                        Some(state) => (
                            state.tau_global(selection.domain_id)?,
                            state.expectations(selection.domain_id)?.to_vec(),
                        ),
                        None => (
                            config.fixed_tau,
                            vec![1.0 / num_classes as f64; num_classes],
                        ),
                    };
                    let precision = {
                        let known = selection
                            .selected()
                            .filter(|e| eval.true_label(e.example_id).is_some())
                            .count();
                        if known == 0 {
                            0.0
                        } else {
                            selection
                                .selected()
                                .filter(|e| eval.true_label(e.example_id) == Some(e.pseudo_label))
                                .count() as f64
                                / known as f64
                        }
                    };
                    threshold_log.push(ThresholdLogRow {
                        step: main_step,
                        domain: selection.domain_id,
                        tau_global,
                        expectations,
                        yield_fraction: selection.yield_fraction(),
                        precision,
                    });
                }
            }
            absolute_step += 1;
            if !warmup {
                main_step += 1;
            }
        }

        let steps = config.steps_per_epoch as f64;
        let tau_global_per_domain = match &runtime.thresholds {
            Some(state) => split
                .source_domains
                .iter()
                .map(|&d| state.tau_global(d))
                .collect::<Result<Vec<f64>>>()?,
            None => vec![config.fixed_tau; domains],
        };
        epochs.push(EpochRecord {
            epoch: phase_epoch,
            warmup,
            target_accuracy: runtime.evaluate(&split.target)?,
            source_accuracy: runtime.evaluate(&split.labeled)?,
            loss_supervised: sums.supervised / steps,
            loss_unsupervised: sums.unsupervised / steps,
            loss_contrastive: sums.contrastive / steps,
            loss_total: sums.total / steps,
            yield_per_domain: selected_per_domain
                .iter()
                .zip(&entries_per_domain)
                .map(|(&s, &n)| if n == 0 { 0.0 } else { s as f64 / n as f64 })
                .collect(),
            precision_per_domain: correct_per_domain
                .iter()
                .zip(&known_per_domain)
                .map(|(&c, &n)| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                .collect(),
            clean_set_size: runtime.clean_map.len(),
            clean_set_accuracy: runtime.clean_set_accuracy(),
            tau_global_per_domain,
        });
    }

    if config.epochs < 5 {
        log::warn!(
            "only {} main epochs; final score averages over all of them",
            config.epochs
        );
    }
    let main_records: Vec<&EpochRecord> = epochs.iter().filter(|e| !e.warmup).collect();
    let tail = main_records.len().min(5);
    let final_score = main_records[main_records.len() - tail..]
        .iter()
        .map(|e| e.target_accuracy)
        .sum::<f64>()
        / tail as f64;

    Ok(FoldMetrics {
        held_out_domain: split.held_out_domain,
        source_domains: split.source_domains.clone(),
        epochs,
        final_score,
        threshold_log,
        step_losses,
        refinement_report,
        final_params: runtime.params,
    })
}

/// Runs every leave-one-domain-out fold (in parallel) and aggregates.
pub fn run_lodo(dataset: &DomainDataset, config: &TrainConfig) -> Result<LodoOutcome> {
    config.validate()?;
    let opts = SplitOptions {
        labels_per_class: config.labels_per_class,
        num_sources: config.num_sources,
        seed: config.seed,
    };
    let splits = build_lodo_folds(dataset, &opts)?;
    let folds: Vec<FoldMetrics> = splits
        .par_iter()
        .map(|split| run_fold(split, config))
        .collect::<Result<_>>()?;
    let aggregate = folds.iter().map(|f| f.final_score).sum::<f64>() / folds.len() as f64;
    Ok(LodoOutcome { folds, aggregate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LabelsPerClass,
    NumSources,
    Method,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SweepAxis::LabelsPerClass => "labels_per_class",
            SweepAxis::NumSources => "num_sources",
            SweepAxis::Method => "method",
        };
        write!(f, "{name}")
    }
}

/// One sweep cell: a (method, axis value) pair with its fold scores.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub method: Method,
    pub axis: SweepAxis,
    pub value: String,
    pub fold_scores: Vec<f64>,
    pub aggregate: f64,
}

/// Runs one `run_lodo` per (method, axis value) cell.
///
/// All cells share the base seed so methods are compared on identical splits
/// and batch streams.
pub fn sweep(
    dataset: &DomainDataset,
    base: &TrainConfig,
    axis: SweepAxis,
    values: &[usize],
    methods: &[Method],
) -> Result<Vec<SweepCell>> {
    if methods.is_empty() {
        return Err(CatError::Config("sweep needs at least one method".into()));
    }
    if axis != SweepAxis::Method && values.is_empty() {
        return Err(CatError::Config(format!("no values given for axis {axis}")));
    }
    let mut cells = Vec::new();
    match axis {
        SweepAxis::Method => {
            for &method in methods {
                let mut config = base.clone();
                config.method = method;
                let outcome = run_lodo(dataset, &config)?;
                cells.push(SweepCell {
                    method,
                    axis,
                    value: method.to_string(),
                    fold_scores: outcome.folds.iter().map(|f| f.final_score).collect(),
                    aggregate: outcome.aggregate,
                });
            }
        }
        SweepAxis::LabelsPerClass | SweepAxis::NumSources => {
            for &value in values {
                for &method in methods {
                    let mut config = base.clone();
                    config.method = method;
                    match axis {
                        SweepAxis::LabelsPerClass => config.labels_per_class = value,
                        SweepAxis::NumSources => config.num_sources = Some(value),
                        SweepAxis::Method => unreachable!(),
                    }
                    let outcome = run_lodo(dataset, &config)?;
                    cells.push(SweepCell {
                        method,
                        axis,
                        value: value.to_string(),
                        fold_scores: outcome.folds.iter().map(|f| f.final_score).collect(),
                        aggregate: outcome.aggregate,
                    });
                }
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn small_synth() -> DomainDataset {
        generate(&SynthConfig {
            num_classes: 3,
            num_domains: 3,
            feature_dim: 6,
            samples_per_class_per_domain: 24,
            class_separation: 3.0,
            domain_shift: 0.8,
            noise_sigma: 0.8,
            label_noise_rate: 0.0,
            seed: 5,
        })
        .unwrap()
    }

    fn quick_config(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            epochs: 2,
            steps_per_epoch: 5,
            labeled_batch_per_domain: 8,
            labels_per_class: 4,
            refine_interval: 5,
            ema_lambda: 0.9,
            model: crate::model::ModelConfig {
                hidden_layers: vec![16],
                projection_dim: 8,
            },
            contrastive: ContrastiveConfig {
                temperature: 0.1,
                warmup_epochs: 1,
            },
            refine: RefineConfig {
                k_neighbors: 5,
                alpha: 0.5,
                min_class_size: 2,
                global_fractile: false,
            },
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn first_split(dataset: &DomainDataset, config: &TrainConfig) -> SsdgSplit {
        let opts = SplitOptions {
            labels_per_class: config.labels_per_class,
            num_sources: config.num_sources,
            seed: config.seed,
        };
        build_lodo_folds(dataset, &opts).unwrap().remove(0)
    }

    #[test]
    fn disabled_auxiliaries_match_supervised_training_bitwise() {
        let dataset = small_synth();
        let mut ablated = quick_config(Method::Cat);
        ablated.lambda_u = 0.0;
        ablated.refine_interval = 0;
        ablated.contrastive.warmup_epochs = 0;
        let supervised = quick_config(Method::SupervisedOnly);

        let split = first_split(&dataset, &ablated);
        let a = run_fold(&split, &ablated).unwrap();
        let b = run_fold(&split, &supervised).unwrap();
        let flat_a = a.final_params.flatten();
        let flat_b = b.final_params.flatten();
        assert_eq!(flat_a.len(), flat_b.len());
        for (x, y) in flat_a.iter().zip(flat_b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits(), "parameter trajectories diverged");
        }
    }

    #[test]
    fn nothing_selected_still_updates_thresholds() {
        let dataset = small_synth();
        let config = quick_config(Method::Cat);
        let split = first_split(&dataset, &config);
        let mut runtime = FoldRuntime::new(&split, &config).unwrap();
        // Saturate every local threshold so no fresh prediction can clear it.
        if let Some(state) = &mut runtime.thresholds {
            for &d in &split.source_domains.clone() {
                for _ in 0..400 {
                    state.update_global(d, &[1.0]).unwrap();
                }
            }
        }
        let before_steps: Vec<u64> = split
            .source_domains
            .iter()
            .map(|&d| runtime.thresholds.as_ref().unwrap().step(d).unwrap())
            .collect();
        let outcome = runtime.train_step(0, false).unwrap();
        assert_eq!(outcome.parts.unsupervised, 0.0);
        let selections = outcome.selections.unwrap();
        assert!(selections.iter().all(|s| s.num_selected() == 0));
        for (&d, &before) in split.source_domains.iter().zip(&before_steps) {
            let after = runtime.thresholds.as_ref().unwrap().step(d).unwrap();
            assert_eq!(after, before + 1, "threshold state must still advance");
        }
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        // A 10-sample toy instance exercising all three loss terms at once.
        let config = TrainConfig {
            lambda_u: 0.7,
            lambda_scl: 0.5,
            model: crate::model::ModelConfig {
                hidden_layers: vec![8],
                projection_dim: 5,
            },
            ..quick_config(Method::Cat)
        };
        let mut attempt = 0u64;
        let (params, inputs) = loop {
            let mut rng = stream_rng(31 + attempt, 0);
            let params = ModelParams::init(4, &config.model, 3, &mut rng);
            let labeled_x = Array2::from_shape_fn((4, 4), |_| rng.random_range(-1.0..1.0));
            let labeled_y = vec![0, 1, 2, 1];
            let make_views = |rng: &mut ChaCha8Rng, domain_id: usize| DomainViews {
                domain_id,
                example_ids: (0..3).map(|i| (domain_id * 10 + i) as u64).collect(),
                weak: Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0)),
                strong: Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0)),
            };
            let unlabeled = vec![make_views(&mut rng, 0), make_views(&mut rng, 1)];
            // Reject instances with a pre-activation close to the ReLU kink
            // (finite differences would straddle it) or with a degenerate
            // all-dead row.
            let margin_ok = |x: &Array2<f64>| match forward(&params, x) {
                Ok(trace) => trace
                    .pre_activations
                    .iter()
                    .all(|pre| pre.iter().all(|v| v.abs() > 1e-4)),
                Err(_) => false,
            };
            let all_ok = margin_ok(&labeled_x)
                && unlabeled
                    .iter()
                    .all(|v| margin_ok(&v.weak) && margin_ok(&v.strong));
            if !all_ok {
                attempt += 1;
                assert!(attempt < 50, "could not build a well-margined instance");
                continue;
            }
            let state = ThresholdState::new(3, &[0, 1], config.ema_lambda, true).unwrap();
            let selections: Vec<PseudoLabelBatch> = unlabeled
                .iter()
                .map(|v| {
                    let trace = forward(&params, &v.weak).unwrap();
                    state
                        .select(v.domain_id, &v.example_ids, &trace.probs)
                        .unwrap()
                })
                .collect();
            let scl_rows = vec![(0usize, 0usize, 0usize), (0, 1, 1), (1, 0, 0)];
            let nce_rows = vec![(0usize, 2usize), (1, 1), (1, 2)];
            let inputs = StepInputs {
                labeled_x,
                labeled_y,
                unlabeled,
                selections: Some(selections),
                scl_rows,
                nce_rows,
            };
            break (params, inputs);
        };

        let (_, grads) = composite_loss(&params, &inputs, &config).unwrap();
        let analytic = grads.flatten();
        let flat = params.flatten();
        let eps = 1e-6;
        let mut max_rel: f64 = 0.0;
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += eps;
            let mut minus = flat.clone();
            minus[i] -= eps;
            let lp =
                composite_loss_value(&params.from_flat(&plus).unwrap(), &inputs, &config).unwrap();
            let lm =
                composite_loss_value(&params.from_flat(&minus).unwrap(), &inputs, &config).unwrap();
            let numeric = (lp - lm) / (2.0 * eps);
            let rel = (numeric - analytic[i]).abs() / (numeric.abs() + analytic[i].abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel <= 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn supervised_only_never_pseudo_labels() {
        let dataset = small_synth();
        let config = quick_config(Method::SupervisedOnly);
        let split = first_split(&dataset, &config);
        let metrics = run_fold(&split, &config).unwrap();
        assert!(metrics.threshold_log.is_empty());
        for epoch in &metrics.epochs {
            assert!(epoch.yield_per_domain.iter().all(|&y| y == 0.0));
        }
    }

    #[test]
    fn short_runs_average_over_available_epochs() {
        let dataset = small_synth();
        let mut config = quick_config(Method::SupervisedOnly);
        config.epochs = 2;
        let split = first_split(&dataset, &config);
        let metrics = run_fold(&split, &config).unwrap();
        let expected = metrics
            .epochs
            .iter()
            .filter(|e| !e.warmup)
            .map(|e| e.target_accuracy)
            .sum::<f64>()
            / 2.0;
        assert!((metrics.final_score - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_runs_produce_identical_metrics() {
        let dataset = small_synth();
        let config = quick_config(Method::Cat);
        let split = first_split(&dataset, &config);
        let a = run_fold(&split, &config).unwrap();
        let b = run_fold(&split, &config).unwrap();
        let ser_a = serde_json::to_string(&a.epochs).unwrap();
        let ser_b = serde_json::to_string(&b.epochs).unwrap();
        assert_eq!(ser_a, ser_b);
        assert_eq!(a.final_score, b.final_score);
    }

    #[test]
    fn loss_composition_holds_at_every_step() {
        let dataset = small_synth();
        let mut config = quick_config(Method::Cat);
        config.lambda_u = 0.8;
        config.lambda_scl = 0.6;
        let split = first_split(&dataset, &config);
        let metrics = run_fold(&split, &config).unwrap();
        assert!(!metrics.step_losses.is_empty());
        for row in &metrics.step_losses {
            let expected = row.parts.supervised
                + config.lambda_u * row.parts.unsupervised
                + config.lambda_scl * row.parts.contrastive;
            assert!(
                (row.parts.total - expected).abs() < 1e-12,
                "step {}: total {} vs composed {expected}",
                row.step,
                row.parts.total
            );
        }
    }

    #[test]
    fn lodo_aggregates_the_fold_means() {
        let dataset = small_synth();
        let mut config = quick_config(Method::SupervisedOnly);
        config.epochs = 1;
        config.steps_per_epoch = 3;
        let outcome = run_lodo(&dataset, &config).unwrap();
        assert_eq!(outcome.folds.len(), 3);
        let mean = outcome.folds.iter().map(|f| f.final_score).sum::<f64>() / 3.0;
        assert!((outcome.aggregate - mean).abs() < 1e-12);
        for (k, fold) in outcome.folds.iter().enumerate() {
            assert_eq!(fold.held_out_domain, k);
        }
    }

    #[test]
    fn sweep_produces_method_by_value_cells() {
        let dataset = small_synth();
        let mut config = quick_config(Method::Cat);
        config.epochs = 1;
        config.steps_per_epoch = 2;
        config.contrastive.warmup_epochs = 0;
        let cells = sweep(
            &dataset,
            &config,
            SweepAxis::LabelsPerClass,
            &[2, 4],
            &[Method::Cat, Method::SupervisedOnly],
        )
        .unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].fold_scores.len(), 3);
        let values: Vec<&str> = cells.iter().map(|c| c.value.as_str()).collect();
        assert_eq!(values, vec!["2", "2", "4", "4"]);
    }

    #[test]
    fn sweep_rejects_empty_values() {
        let dataset = small_synth();
        let config = quick_config(Method::Cat);
        assert!(matches!(
            sweep(
                &dataset,
                &config,
                SweepAxis::NumSources,
                &[],
                &[Method::Cat]
            ),
            Err(CatError::Config(_))
        ));
    }

    #[test]
    fn exploding_loss_aborts_with_diagnostics() {
        let dataset = small_synth();
        let mut config = quick_config(Method::SupervisedOnly);
        // A learning rate this size overflows the classifier after one
        // update; the linear (no-backbone) model keeps the failure on the
        // loss itself rather than in the activations.
        config.lr = 1e308;
        config.epochs = 1;
        config.steps_per_epoch = 20;
        config.model = crate::model::ModelConfig {
            hidden_layers: vec![],
            projection_dim: 8,
        };
        let split = first_split(&dataset, &config);
        match run_fold(&split, &config) {
            Err(CatError::Numeric(message)) => {
                assert!(message.contains("non-finite loss"), "message: {message}");
            }
            other => panic!("expected a numeric abort, got {other:?}"),
        }
    }

    #[test]
    fn precision_rises_as_thresholds_tighten() {
        // On the standard synthetic regime the adaptive thresholds start
        // permissive and tighten as confidence grows, so end-of-training
        // pseudo-label precision must not fall below the first epoch's.
        let dataset = generate(&SynthConfig::default()).unwrap();
        let config = TrainConfig {
            seed: 3,
            ..TrainConfig::default()
        };
        let split = first_split(&dataset, &config);
        let metrics = run_fold(&split, &config).unwrap();
        let main: Vec<&EpochRecord> = metrics.epochs.iter().filter(|e| !e.warmup).collect();
        let mean = |e: &EpochRecord| {
            e.precision_per_domain.iter().sum::<f64>() / e.precision_per_domain.len() as f64
        };
        let first = mean(main.first().unwrap());
        let last = mean(main.last().unwrap());
        assert!(last >= first, "precision fell from {first:.4} to {last:.4}");
    }

    #[test]
    fn zero_shift_folds_score_alike() {
        let dataset = generate(&SynthConfig {
            domain_shift: 0.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let config = TrainConfig {
            method: Method::SupervisedOnly,
            epochs: 8,
            steps_per_epoch: 30,
            labels_per_class: 20,
            seed: 3,
            ..TrainConfig::default()
        };
        let outcome = run_lodo(&dataset, &config).unwrap();
        let scores: Vec<f64> = outcome.folds.iter().map(|f| f.final_score).collect();
        let spread = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - scores.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            spread <= 0.08,
            "identically distributed domains scored {spread:.3} apart: {scores:?}"
        );
    }

    #[test]
    fn num_sources_restricts_folds() {
        let dataset = small_synth();
        let mut config = quick_config(Method::SupervisedOnly);
        config.epochs = 1;
        config.steps_per_epoch = 2;
        config.num_sources = Some(1);
        let outcome = run_lodo(&dataset, &config).unwrap();
        for fold in &outcome.folds {
            assert_eq!(fold.source_domains.len(), 1);
        }
    }

    use crate::rng::stream_rng;
}
