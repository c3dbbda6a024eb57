//! Finite-difference verification of every loss in the system.
//!
//! Each suite builds randomized small networks and batches, computes analytic
//! parameter gradients through the model for one loss (cross-entropy, masked
//! unsupervised cross-entropy, supervised contrastive, or the two-view
//! contrastive loss), and compares them against central finite differences.
//! Instances whose pre-activations sit too close to the ReLU kink are
//! resampled so the differencing never straddles a non-smooth point.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::contrastive::{supcon_loss, unsup_nce_loss};
use crate::error::Result;
use crate::model::{
    backward, cross_entropy, forward, masked_cross_entropy, Gradients, ModelConfig, ModelParams,
};
use crate::rng::{derive_seed, stream_rng};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
const FD_EPSILON: f64 = 1e-6;
const KINK_MARGIN: f64 = 1e-4;
const TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, serde::Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Parameter block where the worst disagreement lives.
    pub worst_block: String,
    pub passed: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

/// `|a - n| / max(|a| + |n|, 1e-4)`.
///
/// The denominator floor matters: central differences of a loss of magnitude
/// L carry ~eps_machine*L/(2 eps) of roundoff noise (~1e-10 here), so an
/// exactly-zero analytic gradient would otherwise register as disagreement.
/// Gradients at or above the floor are held to the full relative tolerance.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-4)
}

/// Central finite differences of `f` over every parameter.
pub fn finite_diff_params<F>(f: F, params: &ModelParams, eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&ModelParams) -> Result<f64>,
{
    let flat = params.flatten();
    let mut out = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += eps;
        let mut minus = flat.clone();
        minus[i] -= eps;
        let lp = f(&params.from_flat(&plus)?)?;
        let lm = f(&params.from_flat(&minus)?)?;
        out.push((lp - lm) / (2.0 * eps));
    }
    Ok(out)
}

/// Names the parameter block a flat index belongs to.
fn block_of(params: &ModelParams, index: usize) -> String {
    let mut cursor = 0usize;
    for (l, layer) in params.backbone.iter().enumerate() {
        let w = layer.weight.len();
        let b = layer.bias.len();
        if index < cursor + w {
            return format!("backbone[{l}].weight");
        }
        if index < cursor + w + b {
            return format!("backbone[{l}].bias");
        }
        cursor += w + b;
    }
    for (name, layer) in [
        ("classifier", &params.classifier),
        ("projector", &params.projector),
    ] {
        let w = layer.weight.len();
        let b = layer.bias.len();
        if index < cursor + w {
            return format!("{name}.weight");
        }
        if index < cursor + w + b {
            return format!("{name}.bias");
        }
        cursor += w + b;
    }
    "unknown".into()
}

const INPUT_DIM: usize = 4;
const NUM_CLASSES: usize = 3;
const BATCH: usize = 6;

fn test_model_config() -> ModelConfig {
    ModelConfig {
        hidden_layers: vec![8, 6],
        projection_dim: 4,
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, INPUT_DIM), |_| rng.random_range(-1.5..1.5))
}

fn margin_ok(params: &ModelParams, x: &Array2<f64>) -> bool {
    match forward(params, x) {
        Ok(trace) => trace
            .pre_activations
            .iter()
            .all(|pre| pre.iter().all(|v| v.abs() > KINK_MARGIN)),
        Err(_) => false,
    }
}

/// Draws a network and `count` batches with safe kink margins.
fn well_margined_instance(seed: u64, count: usize) -> (ModelParams, Vec<Array2<f64>>, ChaCha8Rng) {
    let mut attempt = 0u64;
    loop {
        let mut rng = stream_rng(derive_seed(seed, attempt), 0);
        let params = ModelParams::init(INPUT_DIM, &test_model_config(), NUM_CLASSES, &mut rng);
        let batches: Vec<Array2<f64>> = (0..count).map(|_| random_batch(&mut rng, BATCH)).collect();
        if batches.iter().all(|x| margin_ok(&params, x)) {
            return (params, batches, rng);
        }
        attempt += 1;
        if attempt > 1000 {
            panic!("could not sample a well-margined gradcheck instance");
        }
    }
}

type LossFn = Box<dyn Fn(&ModelParams) -> Result<f64>>;

struct Instance {
    params: ModelParams,
    analytic: Gradients,
    loss: LossFn,
}

fn cross_entropy_instance(seed: u64) -> Result<Instance> {
    let (params, mut batches, mut rng) = well_margined_instance(seed, 1);
    let x = batches.remove(0);
    let labels: Vec<usize> = (0..BATCH)
        .map(|_| rng.random_range(0..NUM_CLASSES))
        .collect();
    let trace = forward(&params, &x)?;
    let (_, dlogits) = cross_entropy(&trace, &labels)?;
    let zero_embed = Array2::zeros(trace.embeddings.raw_dim());
    let analytic = backward(&params, &trace, &dlogits, &zero_embed)?;
    let loss = Box::new(move |p: &ModelParams| -> Result<f64> {
        let trace = forward(p, &x)?;
        Ok(cross_entropy(&trace, &labels)?.0)
    });
    Ok(Instance {
        params,
        analytic,
        loss,
    })
}

fn masked_unsupervised_instance(seed: u64) -> Result<Instance> {
    let (params, mut batches, mut rng) = well_margined_instance(seed, 1);
    let x = batches.remove(0);
    let targets: Vec<usize> = (0..BATCH)
        .map(|_| rng.random_range(0..NUM_CLASSES))
        .collect();
    let mut mask: Vec<bool> = (0..BATCH).map(|_| rng.random::<f64>() < 0.5).collect();
    mask[0] = true; // at least one selected sample
    let denom = BATCH;
    let trace = forward(&params, &x)?;
    let (_, dlogits) = masked_cross_entropy(&trace, &targets, &mask, denom)?;
    let zero_embed = Array2::zeros(trace.embeddings.raw_dim());
    let analytic = backward(&params, &trace, &dlogits, &zero_embed)?;
    let loss = Box::new(move |p: &ModelParams| -> Result<f64> {
        let trace = forward(p, &x)?;
        Ok(masked_cross_entropy(&trace, &targets, &mask, denom)?.0)
    });
    Ok(Instance {
        params,
        analytic,
        loss,
    })
}

fn supcon_instance(seed: u64) -> Result<Instance> {
    let (params, mut batches, mut rng) = well_margined_instance(seed, 1);
    let x = batches.remove(0);
    // Guaranteed positives: three classes, two members each, shuffled.
    let mut labels = vec![0usize, 0, 1, 1, 2, 2];
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    let trace = forward(&params, &x)?;
    let (_, dz) = supcon_loss(&trace.embeddings, &labels, TEMPERATURE)?;
    let zero_logits = Array2::zeros(trace.logits.raw_dim());
    let analytic = backward(&params, &trace, &zero_logits, &dz)?;
    let loss = Box::new(move |p: &ModelParams| -> Result<f64> {
        let trace = forward(p, &x)?;
        Ok(supcon_loss(&trace.embeddings, &labels, TEMPERATURE)?.0)
    });
    Ok(Instance {
        params,
        analytic,
        loss,
    })
}

fn nt_xent_instance(seed: u64) -> Result<Instance> {
    let (params, mut batches, _) = well_margined_instance(seed, 2);
    let x1 = batches.remove(0);
    let x2 = batches.remove(0);
    let t1 = forward(&params, &x1)?;
    let t2 = forward(&params, &x2)?;
    let (_, da, dp) = unsup_nce_loss(&t1.embeddings, &t2.embeddings, TEMPERATURE)?;
    let zero_logits = Array2::zeros(t1.logits.raw_dim());
    let mut analytic = backward(&params, &t1, &zero_logits, &da)?;
    let g2 = backward(&params, &t2, &zero_logits, &dp)?;
    analytic.add_scaled(&g2, 1.0);
    let loss = Box::new(move |p: &ModelParams| -> Result<f64> {
        let t1 = forward(p, &x1)?;
        let t2 = forward(p, &x2)?;
        Ok(unsup_nce_loss(&t1.embeddings, &t2.embeddings, TEMPERATURE)?.0)
    });
    Ok(Instance {
        params,
        analytic,
        loss,
    })
}

fn run_suite<F>(
    name: &str,
    seed: u64,
    instances: usize,
    tolerance: f64,
    inject_fault: bool,
    build: F,
) -> Result<SuiteResult>
where
    F: Fn(u64) -> Result<Instance>,
{
    let mut max_rel_error = 0.0f64;
    let mut worst_block = String::from("none");
    for k in 0..instances {
        let instance = build(derive_seed(seed, k as u64))?;
        let mut analytic = instance.analytic.flatten();
        if inject_fault {
            analytic[0] += 1e-2;
        }
        let numeric = finite_diff_params(&instance.loss, &instance.params, FD_EPSILON)?;
        for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
            let rel = relative_error(a, n);
            if rel > max_rel_error {
                max_rel_error = rel;
                worst_block = block_of(&instance.params, i);
            }
        }
    }
    Ok(SuiteResult {
        name: name.into(),
        instances,
        max_rel_error,
        tolerance,
        worst_block,
        passed: max_rel_error <= tolerance,
    })
}

/// Runs all four gradient suites. `inject_fault` perturbs one analytic
/// gradient entry per instance so the harness can prove it detects faults.
pub fn run_all(seed: u64, instances: usize, inject_fault: bool) -> Result<GradCheckReport> {
    let tolerance = DEFAULT_TOLERANCE;
    let suites = vec![
        run_suite(
            "cross_entropy",
            derive_seed(seed, 101),
            instances,
            tolerance,
            inject_fault,
            cross_entropy_instance,
        )?,
        run_suite(
            "masked_unsupervised",
            derive_seed(seed, 102),
            instances,
            tolerance,
            inject_fault,
            masked_unsupervised_instance,
        )?,
        run_suite(
            "supcon",
            derive_seed(seed, 103),
            instances,
            tolerance,
            inject_fault,
            supcon_instance,
        )?,
        run_suite(
            "nt_xent",
            derive_seed(seed, 104),
            instances,
            tolerance,
            inject_fault,
            nt_xent_instance,
        )?,
    ];
    let passed = suites.iter().all(|s| s.passed);
    Ok(GradCheckReport {
        seed,
        suites,
        passed,
    })
}
