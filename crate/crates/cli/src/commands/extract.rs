//! Implicit ensemble extraction from one wide model, with a λ = 0 control.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{ensure, Context, Result};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use eoe_core::ensembles::train_member;
use eoe_core::extraction::{extract, extracted_predict, ExtractionConfig, MaskMode, MaskOptimizer};
use eoe_core::nn::{softmax_rows, HiddenActivation, Loss, Mlp, MlpConfig, Mode, OutputActivation, TrainConfig};
use eoe_core::seed;
use eoe_core::uncertainty::entropy;

use crate::commands::dataset::DatasetConfig;
use crate::commands::width::{ecdf_rows, evaluate};
use crate::config::RunConfig;
use crate::output::{num, RunDir, RunManifest};

/// MI above this many nats counts as nonzero disagreement.
pub const MI_POSITIVE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub seed: u64,
    pub width: f64,
    pub hidden_dims: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Load this model dump instead of training one.
    pub model_path: Option<PathBuf>,
    pub members: usize,
    /// Diversity weights to run; the first is the main run, the rest controls.
    pub lambdas: Vec<f64>,
    pub mask_steps: usize,
    pub mask_learning_rate: f64,
    pub mask_batch_size: usize,
    pub mask_optimizer: MaskOptimizer,
    pub eval_mask_mode: MaskMode,
    #[serde(flatten)]
    pub data: DatasetConfig,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            seed: 0,
            width: 8.0,
            hidden_dims: vec![64, 32],
            dropout: 0.1,
            learning_rate: 0.02,
            batch_size: 32,
            epochs: 30,
            model_path: None,
            members: 10,
            lambdas: vec![2.0, 0.0],
            mask_steps: 1500,
            mask_learning_rate: 0.05,
            mask_batch_size: 128,
            mask_optimizer: MaskOptimizer::Adam,
            eval_mask_mode: MaskMode::Soft,
            data: DatasetConfig::default(),
        }
    }
}

impl RunConfig for ExtractConfig {
    fn paper_scale() -> Self {
        ExtractConfig {
            width: 128.0,
            learning_rate: 0.01,
            batch_size: 128,
            epochs: 100,
            mask_steps: 3000,
            data: DatasetConfig {
                n_train: 60_000,
                n_test: 10_000,
                n_ood: 10_000,
                ..DatasetConfig::default()
            },
            ..ExtractConfig::default()
        }
    }

    fn master_seed(&self) -> u64 {
        self.seed
    }
}

fn single_model_entropy(model: &Mlp, inputs: ArrayView2<'_, f64>) -> Result<f64> {
    let probs = softmax_rows(&model.forward(inputs, Mode::Eval, None)?);
    let total = probs
        .rows()
        .into_iter()
        .map(|r| entropy(r.as_slice().expect("contiguous rows")))
        .sum::<eoe_core::Result<f64>>()?;
    Ok(total / probs.nrows() as f64)
}

pub fn run(config: &ExtractConfig, out: &mut RunDir) -> Result<BTreeMap<String, f64>> {
    ensure!(!config.lambdas.is_empty(), "lambdas must not be empty");
    let splits = config.data.load(config.seed)?;
    let model = match &config.model_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading model {}", p.display()))?;
            let model: Mlp = serde_json::from_str(&text).with_context(|| format!("parsing model {}", p.display()))?;
            model.validate()?;
            ensure!(
                model.config().input_dim == splits.train.dim(),
                "model input dim does not match the data"
            );
            model
        }
        None => {
            let mlp = MlpConfig {
                input_dim: splits.train.dim(),
                hidden_dims: config.hidden_dims.clone(),
                width_multiplier: config.width,
                output_dim: splits.train.class_count,
                hidden_activation: HiddenActivation::Relu,
                output_activation: OutputActivation::SoftmaxLogits,
                dropout_p: config.dropout,
            };
            let tc = TrainConfig {
                learning_rate: config.learning_rate,
                batch_size: config.batch_size,
                epochs: config.epochs,
                loss: Loss::CrossEntropy,
                seed: 0,
            };
            train_member(
                &mlp,
                &tc,
                splits.train.inputs.view(),
                &splits.train.targets(),
                seed::split(config.seed, 0),
            )?
        }
    };
    out.json("model.json", &model)?;
    let base_entropy_test = single_model_entropy(&model, splits.test.inputs.view())?;
    let base_entropy_ood = single_model_entropy(&model, splits.ood.inputs.view())?;

    let mut trace_rows = Vec::new();
    let mut summary_rows = Vec::new();
    let mut ecdf_out = Vec::new();
    let mut summary = BTreeMap::new();
    summary.insert("single_model_entropy_test".into(), base_entropy_test);
    summary.insert("single_model_entropy_ood".into(), base_entropy_ood);
    for (i, &lambda) in config.lambdas.iter().enumerate() {
        let ec = ExtractionConfig {
            member_count: config.members,
            diversity_weight: lambda,
            learning_rate: config.mask_learning_rate,
            steps: config.mask_steps,
            batch_size: config.mask_batch_size,
            seed: seed::split(config.seed, seed::stream::MASKS),
            eval_mask_mode: config.eval_mask_mode,
            optimizer: config.mask_optimizer,
        };
        let (masks, trace) = extract(&model, splits.train.inputs.view(), &splits.train.labels, &ec)?;
        out.json(&format!("masks_{i}.json"), &masks)?;
        for t in &trace {
            trace_rows.push(vec![
                num(lambda),
                t.step.to_string(),
                num(t.cross_entropy),
                num(t.diversity_mi),
                num(t.objective),
            ]);
        }
        let m = evaluate(
            &extracted_predict(&model, &masks, splits.test.inputs.view(), config.eval_mask_mode)?,
            &splits.test.labels,
            &extracted_predict(&model, &masks, splits.ood.inputs.view(), config.eval_mask_mode)?,
        )?;
        let final_div = trace.last().map_or(f64::NAN, |t| t.diversity_mi);
        let positive = m.mi_ood.iter().filter(|&&v| v > MI_POSITIVE).count() as f64 / m.mi_ood.len() as f64;
        summary_rows.push(vec![
            num(lambda),
            num(final_div),
            num(m.mean_mi_id),
            num(m.mean_mi_ood),
            num(m.mean_entropy_id),
            num(m.mean_entropy_ood),
            num(base_entropy_test),
            num(base_entropy_ood),
            num(m.accuracy),
            num(m.auroc_mi),
            num(positive),
        ]);
        let prefix = [num(lambda)];
        ecdf_out.extend(ecdf_rows(&prefix, "test", &m.mi_id)?);
        ecdf_out.extend(ecdf_rows(&prefix, "ood", &m.mi_ood)?);
        let tag = format!("lambda_{}", num(lambda));
        summary.insert(format!("mean_mi_ood_{tag}"), m.mean_mi_ood);
        summary.insert(format!("mean_mi_test_{tag}"), m.mean_mi_id);
        summary.insert(format!("final_diversity_mi_{tag}"), final_div);
        summary.insert(format!("fraction_ood_mi_positive_{tag}"), positive);
        summary.insert(format!("accuracy_{tag}"), m.accuracy);
    }
    out.csv(
        "trace.csv",
        &["lambda", "step", "cross_entropy", "diversity_mi", "objective"],
        trace_rows,
    )?;
    out.csv(
        "summary.csv",
        &[
            "lambda",
            "final_diversity_mi",
            "mean_mi_test",
            "mean_mi_ood",
            "mean_entropy_extracted_test",
            "mean_entropy_extracted_ood",
            "mean_entropy_single_test",
            "mean_entropy_single_ood",
            "accuracy",
            "auroc_mi",
            "fraction_ood_mi_positive",
        ],
        summary_rows,
    )?;
    out.csv("ecdf.csv", &["lambda", "dataset", "mi", "fraction"], ecdf_out)?;
    Ok(summary)
}

pub fn execute(config: ExtractConfig, mut out: RunDir) -> Result<RunManifest> {
    let summary = run(&config, &mut out)?;
    out.finish("extract", &config, config.seed, summary)
}
