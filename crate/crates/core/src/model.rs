//! The differentiable network: affine+ReLU backbone, classifier head, and an
//! L2-normalized projection head, with hand-written reverse-mode gradients.
//!
//! Everything is 64-bit. Gradients are exact (verified against central
//! finite differences elsewhere in the crate), including the Jacobian of the
//! embedding normalization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CatError, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_layers: Vec<usize>,
    pub projection_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![64, 64],
            projection_dim: 32,
        }
    }
}

/// One affine map; `weight` is `(in, out)` so a batch multiplies on the left.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl AffineLayer {
    fn he_init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let scale = (2.0 / fan_in as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_in, fan_out), |_| {
            let n: f64 = StandardNormal.sample(rng);
            n * scale
        });
        AffineLayer {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        AffineLayer {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Backbone layers with ReLU between them, a classifier head to class
/// logits, and a projector head whose output is L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub backbone: Vec<AffineLayer>,
    pub classifier: AffineLayer,
    pub projector: AffineLayer,
}

/// Shape-congruent with [`ModelParams`]; produced by [`backward`].
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn init<R: Rng>(
        feature_dim: usize,
        config: &ModelConfig,
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        let mut backbone = Vec::with_capacity(config.hidden_layers.len());
        let mut width = feature_dim;
        for &h in &config.hidden_layers {
            backbone.push(AffineLayer::he_init(width, h, rng));
            width = h;
        }
        ModelParams {
            backbone,
            classifier: AffineLayer::he_init(width, num_classes, rng),
            projector: AffineLayer::he_init(width, config.projection_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            backbone: self
                .backbone
                .iter()
                .map(|l| AffineLayer::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
            classifier: AffineLayer::zeros(
                self.classifier.weight.nrows(),
                self.classifier.weight.ncols(),
            ),
            projector: AffineLayer::zeros(
                self.projector.weight.nrows(),
                self.projector.weight.ncols(),
            ),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.backbone
            .first()
            .map(|l| l.weight.nrows())
            .unwrap_or_else(|| self.classifier.weight.nrows())
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.weight.ncols()
    }

    pub fn projection_dim(&self) -> usize {
        self.projector.weight.ncols()
    }

    fn layers(&self) -> impl Iterator<Item = &AffineLayer> {
        self.backbone
            .iter()
            .chain([&self.classifier, &self.projector])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut AffineLayer> {
        self.backbone
            .iter_mut()
            .chain([&mut self.classifier, &mut self.projector])
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters in a fixed order (backbone layers, classifier,
    /// projector; weights row-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in self.layers() {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) against this value's shapes.
    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(CatError::Contract(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut out = self.clone();
        let mut cursor = 0usize;
        for layer in out.layers_mut() {
            for w in layer.weight.iter_mut() {
                *w = flat[cursor];
                cursor += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = flat[cursor];
                cursor += 1;
            }
        }
        Ok(out)
    }

    /// `self += scale * other`, element-wise over congruent shapes.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.layers_mut().zip(other.layers()) {
            dst.weight.scaled_add(scale, &src.weight);
            dst.bias.scaled_add(scale, &src.bias);
        }
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Array2<f64>,
    /// Pre-activation of each backbone layer.
    pub pre_activations: Vec<Array2<f64>>,
    /// Post-ReLU activation of each backbone layer.
    pub activations: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    /// Projector output before normalization.
    pub embed_raw: Array2<f64>,
    /// Row norms of `embed_raw`.
    pub embed_norms: Vec<f64>,
    /// Unit-norm embeddings `z`.
    pub embeddings: Array2<f64>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    /// `max(q)` per row.
    pub fn confidences(&self) -> Vec<f64> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    probs
}

/// Runs the network on a batch (rows are samples).
pub fn forward(params: &ModelParams, batch: &Array2<f64>) -> Result<ForwardTrace> {
    if batch.ncols() != params.input_dim() {
        return Err(CatError::Contract(format!(
            "batch has {} columns, model expects {}",
            batch.ncols(),
            params.input_dim()
        )));
    }
    if batch.iter().any(|v| !v.is_finite()) {
        return Err(CatError::Numeric("non-finite value in input batch".into()));
    }

    let mut pre_activations = Vec::with_capacity(params.backbone.len());
    let mut activations = Vec::with_capacity(params.backbone.len());
    let mut current = batch.clone();
    for layer in &params.backbone {
        let pre = layer.apply(&current);
        let act = pre.mapv(|v| v.max(0.0));
        pre_activations.push(pre);
        activations.push(act.clone());
        current = act;
    }

    let logits = params.classifier.apply(&current);
    let probs = softmax_rows(&logits);

    let embed_raw = params.projector.apply(&current);
    let mut embed_norms = Vec::with_capacity(embed_raw.nrows());
    let mut embeddings = embed_raw.clone();
    for mut row in embeddings.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-300 {
            return Err(CatError::Numeric(
                "projection output has zero norm; cannot normalize".into(),
            ));
        }
        embed_norms.push(norm);
        row.mapv_inplace(|v| v / norm);
    }

    Ok(ForwardTrace {
        input: batch.clone(),
        pre_activations,
        activations,
        logits,
        probs,
        embed_raw,
        embed_norms,
        embeddings,
    })
}

/// Mean `-log p(y_i)` over the batch (log-sum-exp form) and its gradient
/// with respect to the logits: `(p - onehot) / n`.
pub fn cross_entropy(trace: &ForwardTrace, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let n = trace.batch_size();
    if labels.len() != n {
        return Err(CatError::Contract(format!(
            "{} labels for a batch of {}",
            labels.len(),
            n
        )));
    }
    let mask = vec![true; n];
    masked_cross_entropy(trace, labels, &mask, n)
}

/// Cross-entropy summed over masked rows and divided by `denom`; unmasked
/// rows contribute zero loss and zero gradient but are counted by `denom`
/// when the caller says so.
pub fn masked_cross_entropy(
    trace: &ForwardTrace,
    targets: &[usize],
    mask: &[bool],
    denom: usize,
) -> Result<(f64, Array2<f64>)> {
    let n = trace.batch_size();
    if targets.len() != n || mask.len() != n {
        return Err(CatError::Contract(
            "targets/mask must align with the batch".into(),
        ));
    }
    if denom == 0 {
        return Err(CatError::Contract("denominator must be positive".into()));
    }
    let num_classes = trace.logits.ncols();
    let scale = 1.0 / denom as f64;
    let mut loss = 0.0;
    let mut dlogits = Array2::zeros(trace.logits.raw_dim());
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let y = targets[i];
        if y >= num_classes {
            return Err(CatError::Contract(format!(
                "label {y} outside [0, {num_classes})"
            )));
        }
        let row = trace.logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += (lse - row[y]) * scale;
        for c in 0..num_classes {
            let indicator = if c == y { 1.0 } else { 0.0 };
            dlogits[[i, c]] = (trace.probs[[i, c]] - indicator) * scale;
        }
    }
    Ok((loss, dlogits))
}

/// Pulls a gradient on the normalized embedding back to the raw projector
/// output: `du = (dz - z (z . dz)) / ||u||`.
fn normalization_backward(trace: &ForwardTrace, dembed: &Array2<f64>) -> Array2<f64> {
    let mut draw = dembed.clone();
    for (i, mut row) in draw.rows_mut().into_iter().enumerate() {
        let z = trace.embeddings.row(i);
        let inner: f64 = z.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
        let norm = trace.embed_norms[i];
        for (dst, &zi) in row.iter_mut().zip(z.iter()) {
            *dst = (*dst - zi * inner) / norm;
        }
    }
    draw
}

/// Reverse-mode pass from cotangents on the logits and the normalized
/// embeddings down to every parameter. Classifier and projector
/// contributions sum in the shared backbone.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    dlogits: &Array2<f64>,
    dembed: &Array2<f64>,
) -> Result<Gradients> {
    if dlogits.raw_dim() != trace.logits.raw_dim() {
        return Err(CatError::Contract("dlogits shape mismatch".into()));
    }
    if dembed.raw_dim() != trace.embeddings.raw_dim() {
        return Err(CatError::Contract("dembed shape mismatch".into()));
    }

    let mut grads = params.zeros_like();
    let last_act = trace.activations.last().unwrap_or(&trace.input);

    let draw = normalization_backward(trace, dembed);
    grads.classifier.weight = last_act.t().dot(dlogits);
    grads.classifier.bias = dlogits.sum_axis(Axis(0));
    grads.projector.weight = last_act.t().dot(&draw);
    grads.projector.bias = draw.sum_axis(Axis(0));

    let mut dhidden =
        dlogits.dot(&params.classifier.weight.t()) + draw.dot(&params.projector.weight.t());
    for l in (0..params.backbone.len()).rev() {
        let mut dpre = dhidden;
        dpre.zip_mut_with(&trace.pre_activations[l], |d, &pre| {
            if pre <= 0.0 {
                *d = 0.0;
            }
        });
        let below = if l == 0 {
            &trace.input
        } else {
            &trace.activations[l - 1]
        };
        grads.backbone[l].weight = below.t().dot(&dpre);
        grads.backbone[l].bias = dpre.sum_axis(Axis(0));
        dhidden = dpre.dot(&params.backbone[l].weight.t());
    }
    Ok(grads)
}

/// Argmax class per row.
pub fn predict(params: &ModelParams, batch: &Array2<f64>) -> Result<Vec<usize>> {
    let trace = forward(params, batch)?;
    Ok(trace
        .probs
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect())
}

/// SGD with a classical momentum buffer: `v <- m v + g`, `p <- p - lr v`.
#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    pub lr: f64,
    pub momentum: f64,
    velocity: ModelParams,
}

impl SgdOptimizer {
    pub fn new(lr: f64, momentum: f64, params: &ModelParams) -> Self {
        Self {
            lr,
            momentum,
            velocity: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) {
        for ((p, v), g) in params
            .layers_mut()
            .zip(self.velocity.layers_mut())
            .zip(grads.layers())
        {
            v.weight
                .zip_mut_with(&g.weight, |v, &g| *v = self.momentum * *v + g);
            v.bias
                .zip_mut_with(&g.bias, |v, &g| *v = self.momentum * *v + g);
            p.weight.scaled_add(-self.lr, &v.weight);
            p.bias.scaled_add(-self.lr, &v.bias);
        }
    }
}

const CHECKPOINT_MAGIC: &str = "catmodel 1";

fn write_f64_line<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            write!(w, " ")?;
        }
        write!(w, "{:016x}", v.to_bits())?;
        first = false;
    }
    writeln!(w)
}

fn write_affine<W: Write>(w: &mut W, name: &str, layer: &AffineLayer) -> std::io::Result<()> {
    writeln!(
        w,
        "{} {} {}",
        name,
        layer.weight.nrows(),
        layer.weight.ncols()
    )?;
    for row in layer.weight.rows() {
        write_f64_line(w, row.as_slice().expect("contiguous row"))?;
    }
    write_f64_line(w, layer.bias.as_slice().expect("contiguous bias"))
}

/// Saves the parameters as a textual dump: a version header, then each layer
/// as a shape line, hex-encoded weight rows, and a hex-encoded bias line.
/// Hex encoding of the raw f64 bits makes the round trip bit-exact.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CatError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| CatError::io(path.display().to_string(), e);
    writeln!(w, "{CHECKPOINT_MAGIC}").map_err(io_err)?;
    writeln!(w, "backbone {}", params.backbone.len()).map_err(io_err)?;
    for layer in &params.backbone {
        write_affine(&mut w, "layer", layer).map_err(io_err)?;
    }
    write_affine(&mut w, "classifier", &params.classifier).map_err(io_err)?;
    write_affine(&mut w, "projector", &params.projector).map_err(io_err)?;
    w.flush().map_err(io_err)
}

struct CheckpointReader<'p> {
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    path: &'p str,
}

impl CheckpointReader<'_> {
    fn next_line(&mut self) -> Result<String> {
        self.line_no += 1;
        match self.lines.next() {
            Some(Ok(line)) => Ok(line),
            Some(Err(e)) => Err(CatError::io(self.path, e)),
            None => Err(CatError::Parse {
                line: self.line_no,
                message: "unexpected end of checkpoint".into(),
            }),
        }
    }

    fn parse_f64_line(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                u64::from_str_radix(tok, 16)
                    .map(f64::from_bits)
                    .map_err(|_| CatError::Parse {
                        line: self.line_no,
                        message: format!("bad hex float `{tok}`"),
                    })
            })
            .collect::<Result<_>>()?;
        if values.len() != expected {
            return Err(CatError::Parse {
                line: self.line_no,
                message: format!("expected {} values, got {}", expected, values.len()),
            });
        }
        Ok(values)
    }

    fn parse_affine(&mut self, name: &str) -> Result<AffineLayer> {
        let header = self.next_line()?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != name {
            return Err(CatError::Parse {
                line: self.line_no,
                message: format!("expected `{name} <in> <out>`, got `{header}`"),
            });
        }
        let rows: usize = parts[1].parse().map_err(|_| CatError::Parse {
            line: self.line_no,
            message: "bad row count".into(),
        })?;
        let cols: usize = parts[2].parse().map_err(|_| CatError::Parse {
            line: self.line_no,
            message: "bad column count".into(),
        })?;
        let mut weight = Array2::zeros((rows, cols));
        for r in 0..rows {
            let values = self.parse_f64_line(cols)?;
            for (c, v) in values.into_iter().enumerate() {
                weight[[r, c]] = v;
            }
        }
        let bias = Array1::from_vec(self.parse_f64_line(cols)?);
        Ok(AffineLayer { weight, bias })
    }
}

/// Loads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| CatError::io(display.clone(), e))?;
    let mut reader = CheckpointReader {
        lines: BufReader::new(file).lines(),
        line_no: 0,
        path: &display,
    };
    let magic = reader.next_line()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CatError::Parse {
            line: 1,
            message: format!("unsupported checkpoint header `{magic}`"),
        });
    }
    let count_line = reader.next_line()?;
    let count: usize = count_line
        .strip_prefix("backbone ")
        .and_then(|s| s.parse().ok())
        .ok_or(CatError::Parse {
            line: 2,
            message: format!("expected `backbone <n>`, got `{count_line}`"),
        })?;
    let mut backbone = Vec::with_capacity(count);
    for _ in 0..count {
        backbone.push(reader.parse_affine("layer")?);
    }
    let classifier = reader.parse_affine("classifier")?;
    let projector = reader.parse_affine("projector")?;
    Ok(ModelParams {
        backbone,
        classifier,
        projector,
    })
}
