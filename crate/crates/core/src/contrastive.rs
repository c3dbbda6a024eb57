//! Contrastive objectives over unit-norm embeddings.
//!
//! [`supcon_loss`] treats every same-label sample as a positive and all other
//! samples as candidates; anchors with no positive contribute zero but stay
//! in the mean's denominator so the loss scale does not jump between batches.
//! [`unsup_nce_loss`] is the two-view instance-discrimination objective used
//! for warm-up and for samples outside the clean set. Both return exact
//! gradients with respect to the embeddings.

use ndarray::Array2;

use crate::error::{CatError, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    /// Softmax temperature for both contrastive objectives.
    pub temperature: f64,
    /// Epochs of unsupervised contrastive warm-up before pseudo-labeling.
    pub warmup_epochs: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            warmup_epochs: 1,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(CatError::Config("temperature must be > 0".into()));
        }
        Ok(())
    }
}

fn check_unit_rows(z: &Array2<f64>, what: &str) -> Result<()> {
    for (i, row) in z.rows().into_iter().enumerate() {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(CatError::Contract(format!(
                "{what} row {i} has norm {norm}, expected unit"
            )));
        }
    }
    Ok(())
}

/// Log-sum-exp over `values` at the given indices.
fn lse<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    values.map(|v| (v - max).exp()).sum::<f64>().ln() + max
}

/// Supervised contrastive loss on a temperature-scaled similarity matrix
/// (`sims[i][j] = z_i . z_j / temp`). Returns the loss and its gradient with
/// respect to every off-diagonal similarity entry.
pub(crate) fn supcon_from_similarities(sims: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = sims.nrows();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut dsims = Array2::zeros((n, n));
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&p| p != i && labels[p] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let candidates = (0..n).filter(|&a| a != i);
        let log_denom = lse(candidates.clone().map(|a| sims[[i, a]]));
        let inv_p = 1.0 / positives.len() as f64;
        for &p in &positives {
            loss += inv_n * inv_p * (log_denom - sims[[i, p]]);
            dsims[[i, p]] -= inv_n * inv_p;
        }
        for a in candidates {
            let softmax = (sims[[i, a]] - log_denom).exp();
            dsims[[i, a]] += inv_n * softmax;
        }
    }
    (loss, dsims)
}

/// Supervised contrastive loss over unit-norm embeddings, plus the gradient
/// with respect to every embedding row.
pub fn supcon_loss(
    embeddings: &Array2<f64>,
    labels: &[usize],
    temperature: f64,
) -> Result<(f64, Array2<f64>)> {
    let n = embeddings.nrows();
    if n < 2 {
        return Err(CatError::Contract(
            "supervised contrastive loss needs a batch of >= 2".into(),
        ));
    }
    if labels.len() != n {
        return Err(CatError::Contract(
            "labels must align with embeddings".into(),
        ));
    }
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(CatError::Config("temperature must be > 0".into()));
    }
    check_unit_rows(embeddings, "embedding")?;

    let sims = embeddings.dot(&embeddings.t()) / temperature;
    let (loss, dsims) = supcon_from_similarities(&sims, labels);
    // s_ij depends on both rows: dz = (G + G^T) Z / temp.
    let symmetric = &dsims + &dsims.t();
    let dz = symmetric.dot(embeddings) / temperature;
    Ok((loss, dz))
}

/// Two-view instance-discrimination (NT-Xent) loss. `anchors[i]` and
/// `positives[i]` are two views of the same sample; every other view in the
/// combined batch is a negative, and the loss is symmetric over views.
/// Returns gradients for both views.
pub fn unsup_nce_loss(
    anchors: &Array2<f64>,
    positives: &Array2<f64>,
    temperature: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let n = anchors.nrows();
    if n == 0 {
        return Err(CatError::Contract("empty contrastive batch".into()));
    }
    if positives.raw_dim() != anchors.raw_dim() {
        return Err(CatError::Contract(
            "anchors and positives must be row-aligned".into(),
        ));
    }
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(CatError::Config("temperature must be > 0".into()));
    }
    check_unit_rows(anchors, "anchor")?;
    check_unit_rows(positives, "positive")?;
    if n == 1 {
        log::warn!("contrastive batch of one pair has no negatives; loss is 0");
        return Ok((
            0.0,
            Array2::zeros(anchors.raw_dim()),
            Array2::zeros(positives.raw_dim()),
        ));
    }

    let total = 2 * n;
    let mut z = Array2::zeros((total, anchors.ncols()));
    z.slice_mut(ndarray::s![..n, ..]).assign(anchors);
    z.slice_mut(ndarray::s![n.., ..]).assign(positives);
    let sims = z.dot(&z.t()) / temperature;

    let positive_of = |x: usize| if x < n { x + n } else { x - n };
    let inv = 1.0 / total as f64;
    let mut loss = 0.0;
    let mut dsims = Array2::zeros((total, total));
    for x in 0..total {
        let candidates = (0..total).filter(|&y| y != x);
        let log_denom = lse(candidates.clone().map(|y| sims[[x, y]]));
        let pos = positive_of(x);
        loss += inv * (log_denom - sims[[x, pos]]);
        dsims[[x, pos]] -= inv;
        for y in candidates {
            let softmax = (sims[[x, y]] - log_denom).exp();
            dsims[[x, y]] += inv * softmax;
        }
    }
    let symmetric = &dsims + &dsims.t();
    let dz = symmetric.dot(&z) / temperature;
    let danchors = dz.slice(ndarray::s![..n, ..]).to_owned();
    let dpositives = dz.slice(ndarray::s![n.., ..]).to_owned();
    Ok((loss, danchors, dpositives))
}
