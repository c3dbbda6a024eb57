//! Subcommand implementations. Every command is non-interactive, writes its
//! outputs atomically (temp file + rename), and surfaces failures as errors
//! so the process exits nonzero.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;

use cat_core::data::{features_matrix, DomainDataset};
use cat_core::gradcheck;
use cat_core::model::{load_checkpoint, predict, save_checkpoint};
use cat_core::synth::{generate, load_embeddings_csv, write_embeddings_csv};
use cat_core::trainer::{run_lodo, sweep, FoldMetrics, Method, SweepAxis, SweepCell};

use crate::config::RunConfig;

fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Loads the dataset from `--data` or the `[synth]` block, in that order.
fn load_dataset(config: &RunConfig, data: Option<&Path>) -> anyhow::Result<DomainDataset> {
    match (data, &config.synth) {
        (Some(path), _) => {
            let expected = config.synth.as_ref().map(|s| s.num_classes);
            Ok(load_embeddings_csv(path, expected)?)
        }
        (None, Some(synth)) => Ok(generate(synth)?),
        (None, None) => bail!("no dataset: pass --data <csv> or add a [synth] block to the config"),
    }
}

pub fn cmd_gen_data(
    config_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let config = RunConfig::load_or_default(config_path)?;
    let mut synth = config.synth.clone().unwrap_or_default();
    if let Some(s) = seed {
        synth.seed = s;
    }
    let dataset = generate(&synth)?;
    // write_embeddings_csv streams; write to a temp path and rename for
    // atomicity like every other output.
    let tmp = out.with_extension("tmp");
    write_embeddings_csv(&dataset, &tmp)?;
    fs::rename(&tmp, out).with_context(|| format!("renaming into {}", out.display()))?;
    println!(
        "wrote {} examples ({} domains, {} classes, dim {}) to {}",
        dataset.len(),
        dataset.num_domains(),
        dataset.num_classes(),
        dataset.feature_dim(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct FoldSummary {
    held_out_domain: usize,
    source_domains: Vec<usize>,
    final_score: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    method: String,
    seed: u64,
    labels_per_class: usize,
    epochs: usize,
    folds: Vec<FoldSummary>,
    aggregate: f64,
}

fn format_float(v: f64) -> String {
    format!("{v}")
}

fn thresholds_csv(fold: &FoldMetrics, num_classes: usize) -> String {
    let mut out = String::from("step,domain,tau_g");
    for c in 0..num_classes {
        let _ = write!(out, ",E_{c}");
    }
    out.push_str(",yield,precision\n");
    for row in &fold.threshold_log {
        let _ = write!(
            out,
            "{},{},{}",
            row.step,
            row.domain,
            format_float(row.tau_global)
        );
        for e in &row.expectations {
            let _ = write!(out, ",{}", format_float(*e));
        }
        let _ = writeln!(
            out,
            ",{},{}",
            format_float(row.yield_fraction),
            format_float(row.precision)
        );
    }
    out
}

fn refinement_csv(fold: &FoldMetrics) -> String {
    let mut out = String::from("example_id,pseudo_label,corrected_label,agreement,selected\n");
    for row in &fold.refinement_report {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.example_id,
            row.pseudo_label,
            row.corrected_label,
            format_float(row.agreement),
            row.selected
        );
    }
    out
}

fn write_fold_outputs(dir: &Path, fold: &FoldMetrics, num_classes: usize) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut ndjson = String::new();
    for record in &fold.epochs {
        let _ = writeln!(ndjson, "{}", serde_json::to_string(record)?);
    }
    write_atomic(&dir.join("epochs.ndjson"), &ndjson)?;
    write_atomic(
        &dir.join("thresholds.csv"),
        &thresholds_csv(fold, num_classes),
    )?;
    write_atomic(&dir.join("refinement.csv"), &refinement_csv(fold))?;
    let ckpt_tmp = dir.join("model.ckpt.tmp");
    save_checkpoint(&fold.final_params, &ckpt_tmp)?;
    fs::rename(&ckpt_tmp, dir.join("model.ckpt"))
        .with_context(|| format!("renaming checkpoint in {}", dir.display()))?;
    Ok(())
}

pub fn cmd_train(
    config_path: Option<&Path>,
    data: Option<&Path>,
    out_dir: &Path,
    seed: Option<u64>,
    method: Option<Method>,
) -> anyhow::Result<()> {
    let mut config = RunConfig::load_or_default(config_path)?;
    config.apply_seed(seed);
    config.apply_method(method);
    config.validate()?;
    let dataset = load_dataset(&config, data)?;
    let train_config = config.to_train_config();

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_atomic(&out_dir.join("config.toml"), &config.to_toml()?)?;

    let outcome = run_lodo(&dataset, &train_config)?;
    for fold in &outcome.folds {
        let dir = out_dir.join(format!("fold_{}", fold.held_out_domain));
        write_fold_outputs(&dir, fold, dataset.num_classes())?;
        println!(
            "fold {} (target domain {}): final score {:.4}",
            fold.held_out_domain, fold.held_out_domain, fold.final_score
        );
    }

    let summary = TrainSummary {
        method: train_config.method.to_string(),
        seed: train_config.seed,
        labels_per_class: train_config.labels_per_class,
        epochs: train_config.epochs,
        folds: outcome
            .folds
            .iter()
            .map(|f| FoldSummary {
                held_out_domain: f.held_out_domain,
                source_domains: f.source_domains.clone(),
                final_score: f.final_score,
            })
            .collect(),
        aggregate: outcome.aggregate,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_atomic(&out_dir.join("summary.json"), &text)?;
    println!(
        "aggregate over {} folds: {:.4}",
        outcome.folds.len(),
        outcome.aggregate
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint: String,
    data: String,
    overall_accuracy: f64,
    /// `null` for domains skipped via `--domain` or without labels.
    per_domain_accuracy: Vec<Option<f64>>,
    examples_scored: usize,
}

pub fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    domain: Option<usize>,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let params = load_checkpoint(checkpoint)?;
    let dataset = load_embeddings_csv(data, Some(params.num_classes()))?;
    if dataset.feature_dim() != params.input_dim() {
        bail!(
            "feature dimension mismatch: data has {}, checkpoint expects {}",
            dataset.feature_dim(),
            params.input_dim()
        );
    }
    if let Some(d) = domain {
        if d >= dataset.num_domains() {
            bail!(
                "domain {d} out of range (dataset has {})",
                dataset.num_domains()
            );
        }
    }

    let mut per_domain: Vec<Option<f64>> = Vec::new();
    let mut correct = 0usize;
    let mut total = 0usize;
    for (k, examples) in dataset.domains().iter().enumerate() {
        if domain.is_some_and(|d| d != k) {
            per_domain.push(None);
            continue;
        }
        let x = features_matrix(examples, dataset.feature_dim());
        let predictions = predict(&params, &x)?;
        let mut domain_correct = 0usize;
        let mut domain_total = 0usize;
        for (ex, &p) in examples.iter().zip(&predictions) {
            if let Some(label) = ex.label {
                domain_total += 1;
                if label == p {
                    domain_correct += 1;
                }
            }
        }
        per_domain.push(if domain_total == 0 {
            None
        } else {
            Some(domain_correct as f64 / domain_total as f64)
        });
        correct += domain_correct;
        total += domain_total;
    }
    if total == 0 {
        bail!("no labeled examples to evaluate");
    }
    let overall = correct as f64 / total as f64;
    for (k, acc) in per_domain.iter().enumerate() {
        match acc {
            Some(a) => println!("domain {k}: accuracy {a:.4}"),
            None => println!("domain {k}: (skipped)"),
        }
    }
    println!("overall: accuracy {overall:.4} over {total} labeled examples");

    if let Some(path) = out {
        let report = EvalReport {
            checkpoint: checkpoint.display().to_string(),
            data: data.display().to_string(),
            overall_accuracy: overall,
            per_domain_accuracy: per_domain,
            examples_scored: total,
        };
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        write_atomic(path, &text)?;
    }
    Ok(())
}

pub fn parse_axis(axis: &str) -> anyhow::Result<SweepAxis> {
    match axis {
        "labels" | "labels_per_class" => Ok(SweepAxis::LabelsPerClass),
        "k" | "K" | "sources" | "num_sources" => Ok(SweepAxis::NumSources),
        "method" => Ok(SweepAxis::Method),
        other => bail!(
            "invalid axis `{other}`; valid axes: labels (labels_per_class), k (num_sources), method"
        ),
    }
}

fn sweep_csv(cells: &[SweepCell]) -> String {
    let folds = cells.first().map_or(0, |c| c.fold_scores.len());
    let mut out = String::from("method,axis,value");
    for k in 0..folds {
        let _ = write!(out, ",fold_{k}");
    }
    out.push_str(",avg\n");
    for cell in cells {
        let _ = write!(out, "{},{},{}", cell.method, cell.axis, cell.value);
        for score in &cell.fold_scores {
            let _ = write!(out, ",{}", format_float(*score));
        }
        let _ = writeln!(out, ",{}", format_float(cell.aggregate));
    }
    out
}

fn sweep_table(cells: &[SweepCell]) -> String {
    let folds = cells.first().map_or(0, |c| c.fold_scores.len());
    let mut out = String::new();
    let _ = write!(out, "{:<20} {:>8}", "method", "value");
    for k in 0..folds {
        let _ = write!(out, " {:>8}", format!("fold_{k}"));
    }
    let _ = writeln!(out, " {:>8}", "avg");
    for cell in cells {
        let _ = write!(out, "{:<20} {:>8}", cell.method.to_string(), cell.value);
        for score in &cell.fold_scores {
            let _ = write!(out, " {:>8.4}", score);
        }
        let _ = writeln!(out, " {:>8.4}", cell.aggregate);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    config_path: Option<&Path>,
    data: Option<&Path>,
    axis: &str,
    values: &[usize],
    methods: &[Method],
    out_dir: &Path,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let mut config = RunConfig::load_or_default(config_path)?;
    config.apply_seed(seed);
    config.validate()?;
    let axis = parse_axis(axis)?;
    if axis != SweepAxis::Method && values.is_empty() {
        bail!("no values given; pass --values, e.g. --values 5,10");
    }
    let dataset = load_dataset(&config, data)?;
    let base = config.to_train_config();

    let cells = sweep(&dataset, &base, axis, values, methods)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_atomic(&out_dir.join("sweep.csv"), &sweep_csv(&cells))?;
    let table = sweep_table(&cells);
    write_atomic(&out_dir.join("sweep.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_gradcheck(seed: u64, instances: usize, inject_fault: bool) -> anyhow::Result<()> {
    let report = gradcheck::run_all(seed, instances, inject_fault)?;
    println!("gradient check: seed={seed} instances={instances}");
    for suite in &report.suites {
        println!(
            "  {:<22} max rel err {:.3e} (worst: {:<18}) tolerance {:.0e}  {}",
            suite.name,
            suite.max_rel_error,
            suite.worst_block,
            suite.tolerance,
            if suite.passed { "PASS" } else { "FAIL" }
        );
    }
    if report.passed {
        println!("overall: PASS");
        Ok(())
    } else {
        bail!("gradient check failed");
    }
}

/// Resolves `--methods` flags, defaulting to all three methods.
pub fn resolve_methods(raw: &[String]) -> anyhow::Result<Vec<Method>> {
    if raw.is_empty() {
        return Ok(vec![
            Method::Cat,
            Method::FixmatchBaseline,
            Method::SupervisedOnly,
        ]);
    }
    raw.iter().map(|s| crate::config::parse_method(s)).collect()
}
