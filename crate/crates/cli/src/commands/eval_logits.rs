//! Pooled per-tile logits as implicit ensembles: MI, weighted MI, entropy and
//! quantile-curve covariances for each pool size.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{ensure, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use eoe_core::eval::{curve_covariance, quantile_metrics, CurveMode, Metric, ScoredPrediction, ScoredPredictions};
use eoe_core::extraction::{pool_tiles, read_tile_labels, PerTileLogits};
use eoe_core::seed;
use eoe_core::uncertainty::{batch_weighted_mutual_information, mean_prediction, mutual_information};

use crate::config::RunConfig;
use crate::output::{num, RunDir, RunManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalLogitsConfig {
    pub seed: u64,
    /// PTLG file; when absent a synthetic fixture is generated.
    pub logits_path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
    pub pool_sizes: Vec<usize>,
    /// Logits are divided by this before the softmax.
    pub temperature: f64,
    pub n_buckets: usize,
    pub fixture_inputs: usize,
    pub fixture_classes: usize,
    pub fixture_tiles: usize,
    /// Per-tile logit noise; larger values make tiles disagree more.
    pub fixture_tile_noise: f64,
}

impl Default for EvalLogitsConfig {
    fn default() -> Self {
        EvalLogitsConfig {
            seed: 0,
            logits_path: None,
            labels_path: None,
            pool_sizes: vec![1, 2, 3, 4, 5, 6, 7],
            temperature: 1.0,
            n_buckets: 20,
            fixture_inputs: 1000,
            fixture_classes: 10,
            fixture_tiles: 7,
            fixture_tile_noise: 2.0,
        }
    }
}

impl RunConfig for EvalLogitsConfig {
    fn master_seed(&self) -> u64 {
        self.seed
    }
}

/// Per-tile logits around a shared per-input base that favours the label 80%
/// of the time and a random class otherwise.
pub fn synthetic_fixture(config: &EvalLogitsConfig) -> Result<(PerTileLogits, Vec<u32>)> {
    let (n, t, c) = (config.fixture_inputs, config.fixture_tiles, config.fixture_classes);
    ensure!(
        n >= 1 && t >= 1 && c >= 2,
        "fixture needs inputs, tiles and at least two classes"
    );
    let mut rng = seed::rng(seed::split(config.seed, seed::stream::DATA));
    let mut values = Vec::with_capacity(n * t * t * c);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.random_range(0..c);
        let favoured = if rng.random::<f64>() < 0.8 {
            label
        } else {
            rng.random_range(0..c)
        };
        let base: Vec<f64> = (0..c)
            .map(|k| rng.sample::<f64, _>(StandardNormal) + if k == favoured { 3.0 } else { 0.0 })
            .collect();
        for _ in 0..t * t {
            for b in &base {
                values.push((b + config.fixture_tile_noise * rng.sample::<f64, _>(StandardNormal)) as f32);
            }
        }
        labels.push(label as u32);
    }
    Ok((PerTileLogits::new((n, t, t, c), values, "synthetic fixture")?, labels))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn run(config: &EvalLogitsConfig, out: &mut RunDir) -> Result<BTreeMap<String, f64>> {
    ensure!(
        config.temperature > 0.0 && config.temperature.is_finite(),
        "temperature must be positive"
    );
    ensure!(!config.pool_sizes.is_empty(), "pool_sizes must not be empty");
    let (logits, labels) = match &config.logits_path {
        Some(p) => {
            let logits = PerTileLogits::read(p)?;
            let labels = config.labels_path.as_deref().map(read_tile_labels).transpose()?;
            (logits, labels)
        }
        None => {
            let (logits, labels) = synthetic_fixture(config)?;
            logits.write(&out.path().join("fixture.ptlg"))?;
            eoe_core::extraction::write_tile_labels(&labels, &out.path().join("fixture.ptlb"))?;
            out.record("fixture.ptlg");
            out.record("fixture.ptlb");
            (logits, Some(labels))
        }
    };
    if let Some(l) = &labels {
        ensure!(
            l.len() == logits.shape().0,
            "{} labels for {} inputs",
            l.len(),
            logits.shape().0
        );
    }

    let mut rows = Vec::new();
    let mut curve_rows = Vec::new();
    let mut summary = BTreeMap::new();
    for &g in &config.pool_sizes {
        let preds = pool_tiles(&logits, g, config.temperature)?;
        let mi = preds
            .iter()
            .map(mutual_information)
            .collect::<eoe_core::Result<Vec<_>>>()?;
        let wmi = batch_weighted_mutual_information(&preds)?;
        let ent: Vec<f64> = preds.iter().map(|e| mean_prediction(e).entropy()).collect();
        let mut row = vec![g.to_string(), num(mean(&mi)), num(mean(&wmi)), num(mean(&ent))];
        summary.insert(format!("mean_mi_g{g}"), mean(&mi));
        summary.insert(format!("mean_entropy_g{g}"), mean(&ent));
        if let Some(labels) = &labels {
            let scored = ScoredPredictions::new(
                preds
                    .iter()
                    .zip(labels)
                    .zip(&mi)
                    .map(|((e, &l), &s)| ScoredPrediction {
                        prediction: mean_prediction(e),
                        label: Some(l as usize),
                        score: s,
                    })
                    .collect(),
            )?;
            for m in [Metric::Accuracy, Metric::Nll, Metric::CalibrationError] {
                row.push(num(m.evaluate(&scored)?));
            }
            let specs = [
                (CurveMode::BucketAverage, Metric::CalibrationError),
                (CurveMode::AcceptanceThreshold, Metric::Accuracy),
                (CurveMode::AcceptanceThreshold, Metric::Nll),
            ];
            for (mode, metric) in specs {
                let curve = quantile_metrics(&scored, metric, config.n_buckets, mode)?;
                row.push(num(curve_covariance(&curve)?));
                for (q, v) in &curve.points {
                    curve_rows.push(vec![
                        g.to_string(),
                        mode.name().to_string(),
                        metric.name().to_string(),
                        num(*q),
                        num(*v),
                    ]);
                }
            }
        } else {
            row.extend(std::iter::repeat_n(String::new(), 6));
        }
        rows.push(row);
    }
    out.csv(
        "per_g.csv",
        &[
            "g",
            "mean_mi",
            "mean_weighted_mi",
            "mean_entropy",
            "accuracy",
            "nll",
            "calibration_error",
            "neg_bucket_cov_calibration_error",
            "neg_acceptance_cov_accuracy",
            "neg_acceptance_cov_nll",
        ],
        rows,
    )?;
    out.csv("curves.csv", &["g", "mode", "metric", "quantile", "value"], curve_rows)?;
    Ok(summary)
}

pub fn execute(config: EvalLogitsConfig, mut out: RunDir) -> Result<RunManifest> {
    let summary = run(&config, &mut out)?;
    out.finish("eval-logits", &config, config.seed, summary)
}
