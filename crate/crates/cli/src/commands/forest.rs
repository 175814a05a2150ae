//! Ensembles of random forests on the toy sine data.

use std::collections::BTreeMap;

use anyhow::{ensure, Result};
use serde::{Deserialize, Serialize};

use eoe_core::data::{linspace, synth_sine};
use eoe_core::ensembles::mean_std;
use eoe_core::forest::{fit_forest, forest_collapse_sweep, ForestConfig, ForestSweepRow};
use eoe_core::seed;

use crate::commands::toy::{run_seed, summarize, trend_summary};
use crate::config::RunConfig;
use crate::output::{num, RunDir, RunManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestCmdConfig {
    pub seed: u64,
    pub n_seeds: usize,
    pub n_points: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub noise_sigma: f64,
    pub tree_counts: Vec<usize>,
    pub num_forests: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
    pub grid_points: usize,
}

impl Default for ForestCmdConfig {
    fn default() -> Self {
        ForestCmdConfig {
            seed: 0,
            n_seeds: 5,
            n_points: 4,
            x_min: -5.0,
            x_max: 5.0,
            noise_sigma: 0.1,
            tree_counts: vec![1, 2, 4, 8, 16, 32, 64],
            num_forests: 10,
            max_depth: 3,
            bootstrap: true,
            grid_points: 201,
        }
    }
}

impl RunConfig for ForestCmdConfig {
    fn master_seed(&self) -> u64 {
        self.seed
    }
}

/// Per-seed mean epistemic curves and summary statistics.
pub type SweepOutcome = (Vec<Vec<f64>>, BTreeMap<String, f64>);

pub fn run(config: &ForestCmdConfig, out: &mut RunDir) -> Result<SweepOutcome> {
    ensure!(config.n_seeds >= 1, "n_seeds must be at least 1");
    ensure!(!config.tree_counts.is_empty(), "tree_counts must not be empty");
    let grid = linspace(config.x_min, config.x_max, config.grid_points);
    let mut data_rows = Vec::new();
    let mut epi_rows = Vec::new();
    let mut pred_rows = Vec::new();
    let mut per_seed = Vec::new();
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
        let rows: Vec<ForestSweepRow> = forest_collapse_sweep(
            &data.xs,
            &data.ys,
            &config.tree_counts,
            config.num_forests,
            config.max_depth,
            config.bootstrap,
            &grid,
            &[master],
        )?;
        for r in &rows {
            for (x, v) in grid.iter().zip(&r.per_grid) {
                epi_rows.push(vec![s.to_string(), r.n_trees.to_string(), num(*x), num(*v)]);
            }
        }
        per_seed.push(rows.iter().map(|r| r.mean_epistemic).collect());
        if s == 0 {
            for &n_trees in &config.tree_counts {
                let fc = ForestConfig {
                    n_trees,
                    max_depth: config.max_depth,
                    bootstrap: config.bootstrap,
                };
                let forests = (0..config.num_forests as u64)
                    .map(|f| {
                        fit_forest(
                            &data.xs,
                            &data.ys,
                            fc,
                            seed::split(seed::split(master, n_trees as u64), f),
                        )
                    })
                    .collect::<eoe_core::Result<Vec<_>>>()?;
                for x in &grid {
                    let means: Vec<f64> = forests.iter().map(|f| f.predict_mean(*x)).collect();
                    let (m, sd) = mean_std(&means);
                    pred_rows.push(vec![n_trees.to_string(), num(*x), num(x.sin()), num(m), num(sd)]);
                }
            }
        }
    }
    out.csv("data.csv", &["seed_index", "x", "y"], data_rows)?;
    out.csv(
        "epistemic.csv",
        &["seed_index", "n_trees", "x", "variance_epistemic"],
        epi_rows,
    )?;
    out.csv(
        "predictions.csv",
        &[
            "n_trees",
            "x",
            "true_function",
            "mean_over_forests",
            "std_across_forests",
        ],
        pred_rows,
    )?;
    let (rows, averaged) = summarize(&config.tree_counts, &per_seed);
    out.csv(
        "summary.csv",
        &[
            "n_trees",
            "mean_variance_epistemic",
            "std_over_seeds",
            "band68_lo",
            "band68_hi",
            "band95_lo",
            "band95_hi",
        ],
        rows,
    )?;
    let mut summary = trend_summary(&config.tree_counts, &per_seed, &averaged)?;
    summary.insert("n_seeds".into(), config.n_seeds as f64);
    Ok((per_seed, summary))
}

pub fn execute(config: ForestCmdConfig, mut out: RunDir) -> Result<RunManifest> {
    let (_, summary) = run(&config, &mut out)?;
    out.finish("forest", &config, config.seed, summary)
}
