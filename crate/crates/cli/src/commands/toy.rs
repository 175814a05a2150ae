//! Toy sine regression: collapse of across-sub-ensemble epistemic
//! uncertainty as sub-ensembles grow.

use std::collections::BTreeMap;

use anyhow::{ensure, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use eoe_core::data::{linspace, synth_sine};
use eoe_core::ensembles::{collapse_sweep, mean_std, partition, regression_means, train_ensemble, SweepMeasure};
use eoe_core::eval::spearman;
use eoe_core::nn::{HiddenActivation, Loss, MlpConfig, OutputActivation, TrainConfig};
use eoe_core::seed;

use crate::config::RunConfig;
use crate::output::{num, RunDir, RunManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub seed: u64,
    /// Independent master seeds derived from `seed`.
    pub n_seeds: usize,
    pub n_points: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub noise_sigma: f64,
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub num_subs: usize,
    pub sub_sizes: Vec<usize>,
    pub measure: SweepMeasure,
    pub grid_points: usize,
    /// Train new members for every size instead of partitioning one pool.
    pub fresh_pool: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 0,
            n_seeds: 5,
            n_points: 4,
            x_min: -5.0,
            x_max: 5.0,
            noise_sigma: 0.1,
            hidden_width: 64,
            learning_rate: 0.05,
            epochs: 500,
            num_subs: 10,
            sub_sizes: vec![1, 2, 4, 8, 16, 32, 64],
            measure: SweepMeasure::VarianceEpistemic,
            grid_points: 201,
            fresh_pool: false,
        }
    }
}

impl RunConfig for ToyConfig {
    fn master_seed(&self) -> u64 {
        self.seed
    }
}

impl ToyConfig {
    pub fn mlp(&self) -> MlpConfig {
        MlpConfig {
            input_dim: 1,
            hidden_dims: vec![self.hidden_width],
            width_multiplier: 1.0,
            output_dim: 1,
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::ScaledTanh(2.0),
            dropout_p: 0.0,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.n_points,
            epochs: self.epochs,
            loss: Loss::MeanSquaredError,
            seed: 0,
        }
    }
}

/// Per-seed sweep results: `curves[s][i]` is the per-x measure at size `sub_sizes[i]`.
pub struct ToyResult {
    pub means: Vec<Vec<f64>>,
    pub curves: Vec<Vec<Vec<f64>>>,
    pub grid: Vec<f64>,
}

/// Master seed of run `i`.
pub fn run_seed(master: u64, i: usize) -> u64 {
    seed::split(master, i as u64)
}

pub fn run(config: &ToyConfig, out: &mut RunDir) -> Result<(ToyResult, BTreeMap<String, f64>)> {
    ensure!(config.n_seeds >= 1, "n_seeds must be at least 1");
    ensure!(!config.sub_sizes.is_empty(), "sub_sizes must not be empty");
    ensure!(
        config.measure != SweepMeasure::MutualInformation,
        "the toy regression pool supports variance_epistemic or gaussian_bound"
    );
    let grid = linspace(config.x_min, config.x_max, config.grid_points);
    let grid_inputs = Array2::from_shape_vec((grid.len(), 1), grid.clone())?;
    let noise_var = config.noise_sigma * config.noise_sigma;
    let max_size = *config.sub_sizes.iter().max().expect("nonempty");

    let mut data_rows = Vec::new();
    let mut epi_rows = Vec::new();
    let mut pred_rows = Vec::new();
    let mut means = Vec::new();
    let mut curves = Vec::new();
    for s in 0..config.n_seeds {
        let master = run_seed(config.seed, s);
        let data = synth_sine(
            config.n_points,
            (config.x_min, config.x_max),
            config.noise_sigma,
            seed::split(master, seed::stream::DATA),
        )?;
        for (x, y) in data.xs.iter().zip(&data.ys) {
            data_rows.push(vec![s.to_string(), num(*x), num(*y)]);
        }
        let (x, t) = (data.inputs(), data.targets());
        let mut seed_means = Vec::new();
        let mut seed_curves = Vec::new();
        let shared = if config.fresh_pool {
            None
        } else {
            Some(train_ensemble(
                &config.mlp(),
                &config.train(),
                x.view(),
                &t,
                config.num_subs * max_size,
                master,
            )?)
        };
        for &size in &config.sub_sizes {
            let fresh;
            let pool = match &shared {
                Some(p) => p,
                None => {
                    fresh = train_ensemble(
                        &config.mlp(),
                        &config.train(),
                        x.view(),
                        &t,
                        config.num_subs * size,
                        seed::split(master, 1_000_000 + size as u64),
                    )?;
                    &fresh
                }
            };
            let row = collapse_sweep(
                pool,
                &[size],
                config.num_subs,
                grid_inputs.view(),
                config.measure,
                noise_var,
            )?
            .remove(0);
            for (xv, v) in grid.iter().zip(&row.per_input) {
                epi_rows.push(vec![s.to_string(), size.to_string(), num(*xv), num(*v)]);
            }
            if s == 0 {
                // Sub-ensemble means on the grid for the first seed.
                let member_means = regression_means(&pool.member_outputs(grid_inputs.view())?)?;
                let part = partition(pool.len(), config.num_subs, size)?;
                for (gi, xv) in grid.iter().enumerate() {
                    let subs: Vec<f64> = part
                        .groups()
                        .iter()
                        .map(|g| g.iter().map(|&m| member_means[[m, gi]]).sum::<f64>() / g.len() as f64)
                        .collect();
                    let (m, sd) = mean_std(&subs);
                    pred_rows.push(vec![size.to_string(), num(*xv), num(xv.sin()), num(m), num(sd)]);
                }
            }
            seed_means.push(row.mean);
            seed_curves.push(row.per_input);
        }
        means.push(seed_means);
        curves.push(seed_curves);
    }

    let measure = config.measure.name();
    out.csv("data.csv", &["seed_index", "x", "y"], data_rows)?;
    out.csv("epistemic.csv", &["seed_index", "size_subs", "x", measure], epi_rows)?;
    out.csv(
        "predictions.csv",
        &["size_subs", "x", "true_function", "eoe_mean", "std_across_subs"],
        pred_rows,
    )?;
    let (summary_rows, averaged) = summarize(&config.sub_sizes, &means);
    out.csv(
        "summary.csv",
        &[
            "size_subs",
            &format!("mean_{measure}"),
            "std_over_seeds",
            "band68_lo",
            "band68_hi",
            "band95_lo",
            "band95_hi",
        ],
        summary_rows,
    )?;
    let mut summary = trend_summary(&config.sub_sizes, &means, &averaged)?;
    summary.insert("n_seeds".into(), config.n_seeds as f64);
    Ok((ToyResult { means, curves, grid }, summary))
}

/// Rows of `(x, mean over seeds, std, ±1σ and ±2σ bands)` and the seed-averaged curve.
pub fn summarize(xs: &[usize], per_seed: &[Vec<f64>]) -> (Vec<Vec<String>>, Vec<f64>) {
    let mut averaged = Vec::new();
    let rows = xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let vals: Vec<f64> = per_seed.iter().map(|m| m[i]).collect();
            let (m, sd) = mean_std(&vals);
            averaged.push(m);
            vec![
                x.to_string(),
                num(m),
                num(sd),
                num(m - sd),
                num(m + sd),
                num(m - 2.0 * sd),
                num(m + 2.0 * sd),
            ]
        })
        .collect();
    (rows, averaged)
}

/// Spearman correlations of the seed-averaged curve and of all pooled
/// `(x, per-seed value)` pairs, plus the last-to-first ratio.
pub fn trend_summary(xs: &[usize], per_seed: &[Vec<f64>], averaged: &[f64]) -> Result<BTreeMap<String, f64>> {
    let x: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
    let mut summary = BTreeMap::new();
    if xs.len() >= 2 {
        summary.insert("spearman_rho".into(), spearman(&x, averaged).unwrap_or(f64::NAN));
        let pooled_x: Vec<f64> = per_seed.iter().flat_map(|_| x.iter().copied()).collect();
        let pooled_y: Vec<f64> = per_seed.iter().flatten().copied().collect();
        summary.insert(
            "spearman_rho_pooled".into(),
            spearman(&pooled_x, &pooled_y).unwrap_or(f64::NAN),
        );
        let worst = per_seed
            .iter()
            .map(|m| spearman(&x, m).unwrap_or(f64::NAN))
            .fold(f64::NEG_INFINITY, f64::max);
        summary.insert("spearman_rho_worst_seed".into(), worst);
    }
    summary.insert("ratio_last_to_first".into(), averaged[averaged.len() - 1] / averaged[0]);
    Ok(summary)
}

pub fn execute(config: ToyConfig, mut out: RunDir) -> Result<RunManifest> {
    let (_, summary) = run(&config, &mut out)?;
    out.finish("toy-regression", &config, config.seed, summary)
}
