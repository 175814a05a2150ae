//! Width sweep: deep ensembles of MLPs at several width multipliers.

use std::collections::BTreeMap;

use anyhow::{ensure, Result};
use serde::{Deserialize, Serialize};

use eoe_core::ensembles::{mean_std, train_ensemble};
use eoe_core::eval::{
    accuracy, auroc, calibration_error, ecdf, mean_score_difference, nll, ScoredPrediction, ScoredPredictions,
};
use eoe_core::nn::{HiddenActivation, Loss, MlpConfig, OutputActivation, TrainConfig};
use eoe_core::uncertainty::{mean_prediction, mutual_information, EnsemblePrediction};

use crate::commands::dataset::DatasetConfig;
use crate::commands::toy::run_seed;
use crate::config::RunConfig;
use crate::output::{num, RunDir, RunManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthConfig {
    pub seed: u64,
    pub n_seeds: usize,
    pub widths: Vec<f64>,
    pub hidden_dims: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub members: usize,
    #[serde(flatten)]
    pub data: DatasetConfig,
}

impl Default for WidthConfig {
    fn default() -> Self {
        WidthConfig {
            seed: 0,
            n_seeds: 3,
            widths: vec![1.0, 2.0, 4.0, 8.0],
            hidden_dims: vec![64, 32],
            dropout: 0.1,
            learning_rate: 0.02,
            batch_size: 32,
            epochs: 30,
            members: 10,
            data: DatasetConfig::default(),
        }
    }
}

impl RunConfig for WidthConfig {
    fn paper_scale() -> Self {
        WidthConfig {
            widths: vec![1.0, 2.0, 4.0, 8.0, 32.0, 64.0, 128.0],
            learning_rate: 0.01,
            batch_size: 128,
            epochs: 100,
            data: DatasetConfig {
                n_train: 60_000,
                n_test: 10_000,
                n_ood: 10_000,
                ..DatasetConfig::default()
            },
            ..WidthConfig::default()
        }
    }

    fn master_seed(&self) -> u64 {
        self.seed
    }
}

/// Metrics of one ensemble on the held-out and OoD sets.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMetrics {
    pub mean_mi_id: f64,
    pub mean_mi_ood: f64,
    pub mean_entropy_id: f64,
    pub mean_entropy_ood: f64,
    pub accuracy: f64,
    pub nll: f64,
    pub calibration_error: f64,
    pub auroc_mi: f64,
    pub auroc_entropy: f64,
    pub mean_mi_difference: f64,
    pub mi_id: Vec<f64>,
    pub mi_ood: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// MI- and entropy-scored evaluation shared with the extraction command.
pub fn evaluate(id: &[EnsemblePrediction], labels: &[usize], ood: &[EnsemblePrediction]) -> Result<EnsembleMetrics> {
    ensure!(
        id.len() == labels.len(),
        "{} predictions for {} labels",
        id.len(),
        labels.len()
    );
    let mi = |ps: &[EnsemblePrediction]| ps.iter().map(mutual_information).collect::<eoe_core::Result<Vec<_>>>();
    let ent = |ps: &[EnsemblePrediction]| ps.iter().map(|e| mean_prediction(e).entropy()).collect::<Vec<_>>();
    let (mi_id, mi_ood) = (mi(id)?, mi(ood)?);
    let (ent_id, ent_ood) = (ent(id), ent(ood));
    let scored = ScoredPredictions::new(
        id.iter()
            .zip(labels)
            .zip(&mi_id)
            .map(|((e, &l), &s)| ScoredPrediction {
                prediction: mean_prediction(e),
                label: Some(l),
                score: s,
            })
            .collect(),
    )?;
    Ok(EnsembleMetrics {
        mean_mi_id: mean(&mi_id),
        mean_mi_ood: mean(&mi_ood),
        mean_entropy_id: mean(&ent_id),
        mean_entropy_ood: mean(&ent_ood),
        accuracy: accuracy(&scored)?,
        nll: nll(&scored)?,
        calibration_error: calibration_error(&scored)?,
        auroc_mi: auroc(&mi_id, &mi_ood)?,
        auroc_entropy: auroc(&ent_id, &ent_ood)?,
        mean_mi_difference: mean_score_difference(&mi_id, &mi_ood)?,
        mi_id,
        mi_ood,
    })
}

pub fn ecdf_rows(prefix: &[String], dataset: &str, values: &[f64]) -> Result<Vec<Vec<String>>> {
    Ok(ecdf(values)?
        .into_iter()
        .map(|(v, f)| {
            let mut row = prefix.to_vec();
            row.extend([dataset.to_string(), num(v), num(f)]);
            row
        })
        .collect())
}

/// `metrics[seed][width]` and summary statistics.
pub type WidthOutcome = (Vec<Vec<EnsembleMetrics>>, BTreeMap<String, f64>);

pub fn run(config: &WidthConfig, out: &mut RunDir) -> Result<WidthOutcome> {
    ensure!(config.n_seeds >= 1, "n_seeds must be at least 1");
    ensure!(!config.widths.is_empty(), "widths must not be empty");
    let tc = TrainConfig {
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        epochs: config.epochs,
        loss: Loss::CrossEntropy,
        seed: 0,
    };
    let mut rows = Vec::new();
    let mut ecdf_out = Vec::new();
    let mut all = Vec::new();
    for s in 0..config.n_seeds {
        let master = run_seed(config.seed, s);
        let splits = config.data.load(master)?;
        let mut per_width = Vec::new();
        for &w in &config.widths {
            let mlp = MlpConfig {
                input_dim: splits.train.dim(),
                hidden_dims: config.hidden_dims.clone(),
                width_multiplier: w,
                output_dim: splits.train.class_count,
                hidden_activation: HiddenActivation::Relu,
                output_activation: OutputActivation::SoftmaxLogits,
                dropout_p: config.dropout,
            };
            let ens = train_ensemble(
                &mlp,
                &tc,
                splits.train.inputs.view(),
                &splits.train.targets(),
                config.members,
                master,
            )?;
            let m = evaluate(
                &ens.predict_classification(splits.test.inputs.view())?,
                &splits.test.labels,
                &ens.predict_classification(splits.ood.inputs.view())?,
            )?;
            rows.push(vec![
                s.to_string(),
                num(w),
                num(m.mean_mi_id),
                num(m.mean_mi_ood),
                num(m.mean_entropy_id),
                num(m.mean_entropy_ood),
                num(m.accuracy),
                num(m.nll),
                num(m.calibration_error),
                num(m.auroc_mi),
                num(m.auroc_entropy),
                num(m.mean_mi_difference),
            ]);
            let prefix = [s.to_string(), num(w)];
            ecdf_out.extend(ecdf_rows(&prefix, "test", &m.mi_id)?);
            ecdf_out.extend(ecdf_rows(&prefix, "ood", &m.mi_ood)?);
            per_width.push(m);
        }
        all.push(per_width);
    }
    out.csv(
        "sweep.csv",
        &[
            "seed_index",
            "width",
            "mean_mi_test",
            "mean_mi_ood",
            "mean_entropy_test",
            "mean_entropy_ood",
            "accuracy",
            "nll",
            "calibration_error",
            "auroc_mi",
            "auroc_entropy",
            "mean_mi_difference",
        ],
        rows,
    )?;
    out.csv(
        "ecdf.csv",
        &["seed_index", "width", "dataset", "mi", "fraction"],
        ecdf_out,
    )?;

    let mut summary_rows = Vec::new();
    for (i, w) in config.widths.iter().enumerate() {
        let col = |f: fn(&EnsembleMetrics) -> f64| mean_std(&all.iter().map(|ms| f(&ms[i])).collect::<Vec<_>>());
        let (mi, mi_sd) = col(|m| m.mean_mi_id);
        let (acc, acc_sd) = col(|m| m.accuracy);
        summary_rows.push(vec![
            num(*w),
            num(mi),
            num(mi_sd),
            num(col(|m| m.mean_mi_ood).0),
            num(acc),
            num(acc_sd),
            num(col(|m| m.nll).0),
            num(col(|m| m.auroc_mi).0),
        ]);
    }
    out.csv(
        "summary.csv",
        &[
            "width",
            "mean_mi_test",
            "std_mi_test",
            "mean_mi_ood",
            "accuracy",
            "std_accuracy",
            "nll",
            "auroc_mi",
        ],
        summary_rows,
    )?;

    let decreasing = all
        .iter()
        .all(|ms| ms.windows(2).all(|p| p[1].mean_mi_id < p[0].mean_mi_id));
    let spread = all
        .iter()
        .map(|ms| (ms[ms.len() - 1].accuracy - ms[0].accuracy).abs())
        .fold(0.0, f64::max);
    let mut summary = BTreeMap::new();
    summary.insert(
        "mi_strictly_decreasing_all_seeds".into(),
        if decreasing { 1.0 } else { 0.0 },
    );
    summary.insert("max_accuracy_spread_pp".into(), 100.0 * spread);
    summary.insert("n_seeds".into(), config.n_seeds as f64);
    Ok((all, summary))
}

pub fn execute(config: WidthConfig, mut out: RunDir) -> Result<RunManifest> {
    let (_, summary) = run(&config, &mut out)?;
    out.finish("width-sweep", &config, config.seed, summary)
}
