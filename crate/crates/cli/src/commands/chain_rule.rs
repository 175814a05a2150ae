//! Numerical check of MI_total = MI_across + MI_within on random ensembles,
//! and the decay of MI_across for sub-ensembles drawn from a fixed pool.

use std::collections::BTreeMap;

use anyhow::{ensure, Result};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use eoe_core::ensembles::{mean_std, partition};
use eoe_core::seed;
use eoe_core::uncertainty::{chain_rule_decompose, EnsemblePrediction};

use crate::config::RunConfig;
use crate::output::{num, RunDir, RunManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainRuleConfig {
    pub seed: u64,
    pub trials: usize,
    pub max_num_subs: usize,
    pub max_size_subs: usize,
    pub max_classes: usize,
    /// Logit scale of the random ensembles.
    pub logit_scale: f64,
    pub decay_inputs: usize,
    pub decay_classes: usize,
    pub decay_num_subs: usize,
    pub decay_sizes: Vec<usize>,
    /// Spread of member logits around each input's shared logits in the decay pool.
    pub decay_member_spread: f64,
}

impl Default for ChainRuleConfig {
    fn default() -> Self {
        ChainRuleConfig {
            seed: 0,
            trials: 1000,
            max_num_subs: 6,
            max_size_subs: 6,
            max_classes: 6,
            logit_scale: 3.0,
            decay_inputs: 50,
            decay_classes: 10,
            decay_num_subs: 10,
            decay_sizes: vec![1, 2, 4, 8, 16, 32, 64],
            decay_member_spread: 1.0,
        }
    }
}

impl RunConfig for ChainRuleConfig {
    fn master_seed(&self) -> u64 {
        self.seed
    }
}

fn random_logits(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn run(config: &ChainRuleConfig, out: &mut RunDir) -> Result<BTreeMap<String, f64>> {
    ensure!(config.trials >= 1, "trials must be at least 1");
    ensure!(
        config.max_num_subs >= 1 && config.max_size_subs >= 1 && config.max_classes >= 2,
        "trial bounds must allow at least one member and two classes"
    );
    let mut rng = seed::rng(seed::split(config.seed, 1));
    let mut rows = Vec::with_capacity(config.trials);
    let mut max_residual: f64 = 0.0;
    let mut max_singleton_within: f64 = 0.0;
    for trial in 0..config.trials {
        let num_subs = rng.random_range(1..=config.max_num_subs);
        let size_subs = rng.random_range(1..=config.max_size_subs);
        let classes = rng.random_range(2..=config.max_classes);
        let m = num_subs * size_subs;
        let e = EnsemblePrediction::from_logits(random_logits(&mut rng, m, classes, config.logit_scale))?;
        let terms = chain_rule_decompose(&e, &partition(m, num_subs, size_subs)?)?;
        max_residual = max_residual.max(terms.residual().abs());
        if size_subs == 1 {
            max_singleton_within = max_singleton_within.max(terms.within.abs());
        }
        rows.push(vec![
            trial.to_string(),
            m.to_string(),
            classes.to_string(),
            num_subs.to_string(),
            size_subs.to_string(),
            num(terms.total),
            num(terms.across),
            num(terms.within),
            num(terms.residual()),
        ]);
    }
    out.csv(
        "residuals.csv",
        &[
            "trial",
            "members",
            "classes",
            "num_subs",
            "size_subs",
            "mi_total",
            "mi_across",
            "mi_within",
            "residual",
        ],
        rows,
    )?;

    // Pool members share each input's base logits and differ by Gaussian noise.
    let mut rng = seed::rng(seed::split(config.seed, 2));
    let max_size = config.decay_sizes.iter().copied().max().unwrap_or(1);
    let pool = config.decay_num_subs * max_size;
    let inputs: Vec<EnsemblePrediction> = (0..config.decay_inputs)
        .map(|_| {
            let base = random_logits(&mut rng, 1, config.decay_classes, 2.0);
            let noise = random_logits(&mut rng, pool, config.decay_classes, config.decay_member_spread);
            EnsemblePrediction::from_logits(noise + &base)
        })
        .collect::<eoe_core::Result<_>>()?;
    let mut decay_rows = Vec::new();
    let mut across_means = Vec::new();
    for &size in &config.decay_sizes {
        let part = partition(pool, config.decay_num_subs, size)?;
        let mut across = Vec::new();
        let mut within = Vec::new();
        let mut total = Vec::new();
        for e in &inputs {
            let used = e.select_members(&(0..part.pool_used()).collect::<Vec<_>>());
            let t = chain_rule_decompose(&used, &part)?;
            across.push(t.across);
            within.push(t.within);
            total.push(t.total);
        }
        let (a, a_sd) = mean_std(&across);
        across_means.push(a);
        decay_rows.push(vec![
            size.to_string(),
            num(a),
            num(a_sd),
            num(mean_std(&within).0),
            num(mean_std(&total).0),
        ]);
    }
    out.csv(
        "decay.csv",
        &[
            "size_subs",
            "mean_mi_across",
            "std_mi_across",
            "mean_mi_within",
            "mean_mi_total",
        ],
        decay_rows,
    )?;
    let mut summary = BTreeMap::new();
    summary.insert("max_residual".into(), max_residual);
    summary.insert("max_singleton_within".into(), max_singleton_within);
    if let (Some(first), Some(last)) = (across_means.first(), across_means.last()) {
        summary.insert("mi_across_first_size".into(), *first);
        summary.insert("mi_across_last_size".into(), *last);
    }
    Ok(summary)
}

pub fn execute(config: ChainRuleConfig, mut out: RunDir) -> Result<RunManifest> {
    let summary = run(&config, &mut out)?;
    out.finish("chain-rule-check", &config, config.seed, summary)
}
