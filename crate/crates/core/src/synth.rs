//! Deterministic synthetic multi-domain data with controllable shift, plus
//! CSV ingestion of externally computed feature embeddings.
//!
//! Each class gets a base centroid at distance `class_separation` from the
//! origin; each domain applies a seeded rotation in a random 2-plane plus a
//! translation of norm `domain_shift` to every centroid, then samples
//! isotropic Gaussians around the shifted centroids. Class topology is
//! preserved across domains, so generalization across them is possible.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::data::{DomainDataset, Example};
use crate::error::{CatError, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub num_domains: usize,
    pub feature_dim: usize,
    pub samples_per_class_per_domain: usize,
    /// Distance from the origin to each base class centroid.
    pub class_separation: f64,
    /// Magnitude of the per-domain rotation + translation.
    pub domain_shift: f64,
    /// Isotropic Gaussian scale around each centroid.
    pub noise_sigma: f64,
    /// Probability that a sample's stored label is resampled among the other
    /// classes.
    pub label_noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            num_domains: 4,
            feature_dim: 20,
            samples_per_class_per_domain: 100,
            class_separation: 3.0,
            domain_shift: 1.5,
            noise_sigma: 1.2,
            label_noise_rate: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(CatError::Config("num_classes must be >= 2".into()));
        }
        if self.num_domains < 2 {
            return Err(CatError::Config("num_domains must be >= 2".into()));
        }
        if self.feature_dim < 2 {
            return Err(CatError::Config("feature_dim must be >= 2".into()));
        }
        if self.samples_per_class_per_domain == 0 {
            return Err(CatError::Config(
                "samples_per_class_per_domain must be >= 1".into(),
            ));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(CatError::Config("noise_sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.label_noise_rate) {
            return Err(CatError::Config(
                "label_noise_rate must be in [0, 1)".into(),
            ));
        }
        if !self.class_separation.is_finite() || !self.domain_shift.is_finite() {
            return Err(CatError::Config(
                "class_separation and domain_shift must be finite".into(),
            ));
        }
        Ok(())
    }
}

// Stream layout per domain k: 2k features, 2k+1 label noise. Keeping label
// noise on its own stream means changing label_noise_rate never perturbs the
// feature draws.
const CENTROID_STREAM: u64 = u64::MAX;

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-domain affine transform: rotation by `angle` in the plane spanned by
/// the orthonormal pair `(e1, e2)`, then translation.
struct DomainTransform {
    e1: Vec<f64>,
    e2: Vec<f64>,
    angle: f64,
    translation: Vec<f64>,
}

impl DomainTransform {
    fn sample(rng: &mut ChaCha8Rng, dim: usize, shift: f64) -> Self {
        let e1 = unit_vec(rng, dim);
        // Gram-Schmidt a second direction against e1.
        let e2 = loop {
            let v = gaussian_vec(rng, dim);
            let proj = dot(&v, &e1);
            let mut w: Vec<f64> = v.iter().zip(&e1).map(|(x, e)| x - proj * e).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                w.iter_mut().for_each(|x| *x /= norm);
                break w;
            }
        };
        let angle_draw = Uniform::new(-1.0f64, 1.0).unwrap().sample(rng);
        let angle = shift * angle_draw * std::f64::consts::FRAC_PI_4;
        let direction = unit_vec(rng, dim);
        let translation = direction.into_iter().map(|x| x * shift).collect();
        Self {
            e1,
            e2,
            angle,
            translation,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let a = dot(x, &self.e1);
        let b = dot(x, &self.e2);
        let (sin, cos) = self.angle.sin_cos();
        let da = (cos - 1.0) * a - sin * b;
        let db = sin * a + (cos - 1.0) * b;
        x.iter()
            .zip(self.e1.iter().zip(self.e2.iter()))
            .zip(self.translation.iter())
            .map(|((xi, (e1i, e2i)), ti)| xi + da * e1i + db * e2i + ti)
            .collect()
    }
}

/// Base centroids followed by each domain's transformed copies.
/// `centroids[k][c]` is class `c`'s centroid in domain `k`.
pub(crate) fn domain_centroids(config: &SynthConfig) -> Vec<Vec<Vec<f64>>> {
    let mut rng = stream_rng(config.seed, CENTROID_STREAM);
    let base: Vec<Vec<f64>> = (0..config.num_classes)
        .map(|_| {
            unit_vec(&mut rng, config.feature_dim)
                .into_iter()
                .map(|x| x * config.class_separation)
                .collect()
        })
        .collect();
    (0..config.num_domains)
        .map(|k| {
            let mut rng = stream_rng(config.seed, 2 * k as u64);
            let transform =
                DomainTransform::sample(&mut rng, config.feature_dim, config.domain_shift);
            base.iter().map(|c| transform.apply(c)).collect()
        })
        .collect()
}

/// Generates the dataset described by `config`; byte-identical under the
/// same seed.
#[allow(clippy::needless_range_loop)] // ids derive from the (k, c, s) indices
pub fn generate(config: &SynthConfig) -> Result<DomainDataset> {
    config.validate()?;
    let centroids = domain_centroids(config);
    let per_domain = config.num_classes * config.samples_per_class_per_domain;
    let mut domains = Vec::with_capacity(config.num_domains);
    for k in 0..config.num_domains {
        // The transform in domain_centroids consumed draws from stream 2k;
        // re-derive and skip it so sample noise is aligned either way.
        let mut feature_rng = stream_rng(config.seed, 2 * k as u64);
        let _ = DomainTransform::sample(&mut feature_rng, config.feature_dim, config.domain_shift);
        let mut label_rng = stream_rng(config.seed, 2 * k as u64 + 1);
        let mut examples = Vec::with_capacity(per_domain);
        for c in 0..config.num_classes {
            for s in 0..config.samples_per_class_per_domain {
                let noise = gaussian_vec(&mut feature_rng, config.feature_dim);
                let features: Vec<f64> = centroids[k][c]
                    .iter()
                    .zip(noise)
                    .map(|(m, n)| m + config.noise_sigma * n)
                    .collect();
                let flip: f64 = label_rng.random();
                let label = if flip < config.label_noise_rate {
                    let shift = label_rng.random_range(1..config.num_classes);
                    (c + shift) % config.num_classes
                } else {
                    c
                };
                let example_id =
                    (k * per_domain + c * config.samples_per_class_per_domain + s) as u64;
                examples.push(Example {
                    features,
                    label: Some(label),
                    domain_id: k,
                    example_id,
                });
            }
        }
        domains.push(examples);
    }
    DomainDataset::new(domains, config.num_classes, config.feature_dim)
}

/// Writes the CSV interchange format: header `domain,label,f0,...,f{d-1}`,
/// one row per example in domain-major order, label -1 for unlabeled rows.
/// Floats use the shortest representation that round-trips exactly.
pub fn write_embeddings_csv(dataset: &DomainDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CatError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| CatError::io(path.display().to_string(), e);
    write!(w, "domain,label").map_err(io_err)?;
    for i in 0..dataset.feature_dim() {
        write!(w, ",f{i}").map_err(io_err)?;
    }
    writeln!(w).map_err(io_err)?;
    for domain in dataset.domains() {
        for ex in domain {
            let label = ex.label.map(|l| l as i64).unwrap_or(-1);
            write!(w, "{},{}", ex.domain_id, label).map_err(io_err)?;
            for f in &ex.features {
                write!(w, ",{f}").map_err(io_err)?;
            }
            writeln!(w).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Loads a dataset from the CSV interchange format.
///
/// `expected_classes` fixes the class count and rejects labels outside
/// `[-1, C)`; with `None` the count is inferred as `max(label) + 1` and every
/// class in that range must appear at least once.
pub fn load_embeddings_csv(path: &Path, expected_classes: Option<usize>) -> Result<DomainDataset> {
    let content =
        std::fs::read_to_string(path).map_err(|e| CatError::io(path.display().to_string(), e))?;
    let mut lines = content.lines().enumerate();

    let (_, header) = lines.next().ok_or(CatError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "domain" || cols[1] != "label" {
        return Err(CatError::Parse {
            line: 1,
            message: format!("expected header `domain,label,f0,...`, got `{header}`"),
        });
    }
    let dim = cols.len() - 2;
    for (i, col) in cols[2..].iter().enumerate() {
        if *col != format!("f{i}") {
            return Err(CatError::Parse {
                line: 1,
                message: format!("feature column {} named `{}`, expected `f{}`", i, col, i),
            });
        }
    }

    struct Row {
        domain: usize,
        label: Option<usize>,
        features: Vec<f64>,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut max_domain = 0usize;
    let mut max_label: Option<usize> = None;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(CatError::Parse {
                line: line_no,
                message: format!("expected {} fields, got {}", dim + 2, fields.len()),
            });
        }
        let domain: usize = fields[0].trim().parse().map_err(|_| CatError::Parse {
            line: line_no,
            message: format!("invalid domain id `{}`", fields[0]),
        })?;
        let raw_label: i64 = fields[1].trim().parse().map_err(|_| CatError::Parse {
            line: line_no,
            message: format!("invalid label `{}`", fields[1]),
        })?;
        let label = match raw_label {
            -1 => None,
            l if l >= 0 => {
                let l = l as usize;
                if let Some(c) = expected_classes {
                    if l >= c {
                        return Err(CatError::Parse {
                            line: line_no,
                            message: format!("label {l} outside [0, {c})"),
                        });
                    }
                }
                max_label = Some(max_label.map_or(l, |m: usize| m.max(l)));
                Some(l)
            }
            l => {
                return Err(CatError::Parse {
                    line: line_no,
                    message: format!("label {l} outside [-1, C)"),
                })
            }
        };
        let mut features = Vec::with_capacity(dim);
        for field in &fields[2..] {
            let v: f64 = field.trim().parse().map_err(|_| CatError::Parse {
                line: line_no,
                message: format!("non-numeric feature `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(CatError::Parse {
                    line: line_no,
                    message: format!("non-finite feature `{field}`"),
                });
            }
            features.push(v);
        }
        max_domain = max_domain.max(domain);
        rows.push(Row {
            domain,
            label,
            features,
        });
    }
    if rows.is_empty() {
        return Err(CatError::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }

    let num_classes = match (expected_classes, max_label) {
        (Some(c), _) => c,
        (None, Some(m)) => m + 1,
        (None, None) => {
            return Err(CatError::Parse {
                line: 1,
                message: "all rows unlabeled; pass the class count explicitly".into(),
            })
        }
    };
    let num_domains = max_domain + 1;
    let mut domains: Vec<Vec<Example>> = vec![Vec::new(); num_domains];
    for (i, row) in rows.into_iter().enumerate() {
        domains[row.domain].push(Example {
            features: row.features,
            label: row.label,
            domain_id: row.domain,
            example_id: i as u64,
        });
    }
    for (k, domain) in domains.iter().enumerate() {
        if domain.is_empty() {
            return Err(CatError::Data(format!(
                "domain ids are not dense: domain {k} has no rows"
            )));
        }
    }
    if expected_classes.is_none() {
        let mut seen = vec![false; num_classes];
        for domain in &domains {
            for ex in domain {
                if let Some(l) = ex.label {
                    seen[l] = true;
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(CatError::Data(format!(
                "class ids are not dense: class {missing} never appears"
            )));
        }
    }
    DomainDataset::new(domains, num_classes, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shift_gives_identical_centroids_across_domains() {
        let config = SynthConfig {
            domain_shift: 0.0,
            ..SynthConfig::default()
        };
        let centroids = domain_centroids(&config);
        for k in 1..config.num_domains {
            for (base, shifted) in centroids[0].iter().zip(&centroids[k]) {
                for (a, b) in base.iter().zip(shifted) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn example_count_matches_config() {
        let config = SynthConfig {
            num_classes: 3,
            num_domains: 4,
            samples_per_class_per_domain: 100,
            ..SynthConfig::default()
        };
        let dataset = generate(&config).unwrap();
        assert_eq!(dataset.len(), 1200);
        assert_eq!(dataset.num_domains(), 4);
    }

    #[test]
    fn label_noise_rate_is_respected() {
        let clean = SynthConfig {
            num_classes: 4,
            num_domains: 2,
            samples_per_class_per_domain: 125, // 1000 samples total
            label_noise_rate: 0.0,
            seed: 21,
            ..SynthConfig::default()
        };
        let noisy = SynthConfig {
            label_noise_rate: 0.3,
            ..clean.clone()
        };
        let a = generate(&clean).unwrap();
        let b = generate(&noisy).unwrap();
        let mut mismatches = 0usize;
        let mut total = 0usize;
        for (da, db) in a.domains().iter().zip(b.domains()) {
            for (ea, eb) in da.iter().zip(db) {
                assert_eq!(
                    ea.features, eb.features,
                    "features must not depend on noise rate"
                );
                if ea.label != eb.label {
                    mismatches += 1;
                }
                total += 1;
            }
        }
        let fraction = mismatches as f64 / total as f64;
        assert!(
            (fraction - 0.3).abs() <= 0.03,
            "corrupted fraction {fraction} outside 0.3 +/- 0.03"
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let config = SynthConfig::default();
        assert_eq!(generate(&config).unwrap(), generate(&config).unwrap());
    }

    #[test]
    fn centroid_spread_grows_with_separation() {
        let mean_pairwise = |sep: f64, seed: u64| -> f64 {
            let config = SynthConfig {
                class_separation: sep,
                seed,
                ..SynthConfig::default()
            };
            let centroids = domain_centroids(&config);
            let mut total = 0.0;
            let mut count = 0usize;
            for domain in &centroids {
                for i in 0..domain.len() {
                    for j in (i + 1)..domain.len() {
                        let d2: f64 = domain[i]
                            .iter()
                            .zip(&domain[j])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        total += d2.sqrt();
                        count += 1;
                    }
                }
            }
            total / count as f64
        };
        for seed in 0..5 {
            let d1 = mean_pairwise(1.0, seed);
            let d2 = mean_pairwise(2.0, seed);
            let d4 = mean_pairwise(4.0, seed);
            assert!(d1 < d2 && d2 < d4, "seed {seed}: {d1} {d2} {d4}");
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let config = SynthConfig {
            num_classes: 3,
            num_domains: 2,
            samples_per_class_per_domain: 10,
            ..SynthConfig::default()
        };
        let dataset = generate(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_embeddings_csv(&dataset, &path).unwrap();
        let loaded = load_embeddings_csv(&path, None).unwrap();
        assert_eq!(dataset, loaded);
    }

    #[test]
    fn minimal_csv_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mini.csv");
        std::fs::write(
            &path,
            "domain,label,f0,f1\n0,0,1.5,2.5\n0,1,0.5,0.25\n1,0,3.0,1.0\n1,-1,9.0,8.0\n",
        )
        .unwrap();
        let dataset = load_embeddings_csv(&path, None).unwrap();
        assert_eq!(dataset.len(), 4);
        assert_eq!(dataset.feature_dim(), 2);
        assert_eq!(dataset.num_classes(), 2);
        assert_eq!(dataset.domains()[1][1].label, None);
    }

    #[test]
    fn out_of_range_label_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "domain,label,f0,f1\n0,0,1.0,2.0\n0,3,1.0,2.0\n").unwrap();
        match load_embeddings_csv(&path, Some(3)).unwrap_err() {
            CatError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ragged_row_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        std::fs::write(&path, "domain,label,f0,f1\n0,0,1.0\n").unwrap();
        match load_embeddings_csv(&path, None).unwrap_err() {
            CatError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_numeric_feature_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        std::fs::write(&path, "domain,label,f0,f1\n0,0,1.0,abc\n").unwrap();
        match load_embeddings_csv(&path, None).unwrap_err() {
            CatError::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("abc"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
