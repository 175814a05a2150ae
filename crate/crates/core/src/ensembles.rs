//! Deep ensembles, ensemble-of-ensembles partitions, and the collapse sweep.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Mlp, MlpConfig, Mode, Targets, TrainConfig};
use crate::seed;
use crate::uncertainty::{
    gaussian_mi_bound, group_means, mutual_information, total_variance_decomposition, EnsemblePrediction,
    RegressionEnsemblePrediction,
};

/// Independently trained members sharing one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepEnsemble {
    members: Vec<Mlp>,
    seeds: Vec<u64>,
}

impl DeepEnsemble {
    pub fn new(members: Vec<Mlp>, seeds: Vec<u64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        if members.len() != seeds.len() {
            return Err(Error::Config(format!(
                "{} members but {} seeds",
                members.len(),
                seeds.len()
            )));
        }
        let config = members[0].config();
        if members.iter().any(|m| m.config() != config) {
            return Err(Error::Config("ensemble members must share one config".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("member seeds must be distinct".into()));
        }
        Ok(DeepEnsemble { members, seeds })
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Raw member outputs, one `N × out` matrix per member.
    pub fn member_outputs(&self, inputs: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        self.members
            .par_iter()
            .map(|m| m.forward(inputs, Mode::Eval, None))
            .collect()
    }

    /// One classification prediction per input, built from member logits.
    pub fn predict_classification(&self, inputs: ArrayView2<'_, f64>) -> Result<Vec<EnsemblePrediction>> {
        let outputs = self.member_outputs(inputs)?;
        stack_member_logits(&outputs)
    }

    /// One regression prediction per input; every member reports the shared
    /// noise variance.
    pub fn predict_regression(
        &self,
        inputs: ArrayView2<'_, f64>,
        noise_var: f64,
    ) -> Result<Vec<RegressionEnsemblePrediction>> {
        let means = regression_means(&self.member_outputs(inputs)?)?;
        means
            .columns()
            .into_iter()
            .map(|col| RegressionEnsemblePrediction::homoscedastic(col.to_vec(), noise_var))
            .collect()
    }
}

/// Seed owned by member `k` of an ensemble trained from `master_seed`.
pub fn member_seed(master_seed: u64, k: usize) -> u64 {
    seed::split(master_seed, k as u64)
}

/// Trains one member exactly as [`train_ensemble`] does for index `k`.
pub fn train_member(
    config: &MlpConfig,
    train_config: &TrainConfig,
    inputs: ArrayView2<'_, f64>,
    targets: &Targets,
    member_seed: u64,
) -> Result<Mlp> {
    let mut model = Mlp::init(config.clone(), seed::split(member_seed, seed::stream::INIT))?;
    let tc = TrainConfig {
        seed: seed::split(member_seed, seed::stream::TRAIN),
        ..train_config.clone()
    };
    model.train(inputs, targets, &tc)?;
    Ok(model)
}

/// Trains `member_count` independent members. Member `k` derives its
/// initialization, shuffling, and dropout streams from
/// `member_seed(master_seed, k)`; `train_config.seed` is ignored.
pub fn train_ensemble(
    config: &MlpConfig,
    train_config: &TrainConfig,
    inputs: ArrayView2<'_, f64>,
    targets: &Targets,
    member_count: usize,
    master_seed: u64,
) -> Result<DeepEnsemble> {
    if member_count == 0 {
        return Err(Error::Config("member count must be >= 1".into()));
    }
    let seeds: Vec<u64> = (0..member_count).map(|k| member_seed(master_seed, k)).collect();
    let members = seeds
        .par_iter()
        .enumerate()
        .map(|(k, &s)| {
            train_member(config, train_config, inputs, targets, s).map_err(|e| Error::Member {
                member: k,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DeepEnsemble::new(members, seeds)
}

/// Assignment of a model pool into `num_subs` sub-ensembles of `size_subs`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EoEPartition {
    num_subs: usize,
    size_subs: usize,
    /// `assignment[member] = (sub index, index within sub)`.
    assignment: Vec<(usize, usize)>,
}

impl EoEPartition {
    pub fn num_subs(&self) -> usize {
        self.num_subs
    }

    pub fn size_subs(&self) -> usize {
        self.size_subs
    }

    pub fn assignment(&self) -> &[(usize, usize)] {
        &self.assignment
    }

    /// Number of pool members the partition uses.
    pub fn pool_used(&self) -> usize {
        self.assignment.len()
    }

    /// Member indices of every sub-ensemble, in within-index order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![vec![0; self.size_subs]; self.num_subs];
        for (member, &(sub, within)) in self.assignment.iter().enumerate() {
            groups[sub][within] = member;
        }
        groups
    }
}

/// Contiguous assignment of the first `num_subs × size_subs` pool members.
pub fn partition(pool_size: usize, num_subs: usize, size_subs: usize) -> Result<EoEPartition> {
    if num_subs == 0 || size_subs == 0 {
        return Err(Error::Partition("sub-ensemble count and size must be >= 1".into()));
    }
    let used = num_subs
        .checked_mul(size_subs)
        .ok_or_else(|| Error::Partition("partition size overflows".into()))?;
    if used > pool_size {
        return Err(Error::Partition(format!(
            "{num_subs}x{size_subs} needs {used} members but the pool has {pool_size}"
        )));
    }
    let assignment = (0..used).map(|m| (m / size_subs, m % size_subs)).collect();
    Ok(EoEPartition {
        num_subs,
        size_subs,
        assignment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMeasure {
    #[serde(rename = "mi")]
    MutualInformation,
    VarianceEpistemic,
    GaussianBound,
}

impl SweepMeasure {
    pub fn name(self) -> &'static str {
        match self {
            SweepMeasure::MutualInformation => "mi",
            SweepMeasure::VarianceEpistemic => "variance_epistemic",
            SweepMeasure::GaussianBound => "gaussian_bound",
        }
    }
}

impl std::str::FromStr for SweepMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mi" => Ok(SweepMeasure::MutualInformation),
            "variance_epistemic" => Ok(SweepMeasure::VarianceEpistemic),
            "gaussian_bound" => Ok(SweepMeasure::GaussianBound),
            other => Err(Error::Config(format!("unknown measure {other:?}"))),
        }
    }
}

/// Member predictions of a whole pool over a set of evaluation inputs.
#[derive(Debug, Clone)]
pub enum PoolPredictions {
    /// One prediction per input, each with the full pool as members.
    Classification(Vec<EnsemblePrediction>),
    /// `means[[member, input]]` with a shared noise variance.
    Regression { means: Array2<f64>, noise_var: f64 },
}

impl PoolPredictions {
    pub fn pool_size(&self) -> usize {
        match self {
            PoolPredictions::Classification(preds) => preds.first().map_or(0, |p| p.member_count()),
            PoolPredictions::Regression { means, .. } => means.nrows(),
        }
    }

    pub fn input_count(&self) -> usize {
        match self {
            PoolPredictions::Classification(preds) => preds.len(),
            PoolPredictions::Regression { means, .. } => means.ncols(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub size_subs: usize,
    pub mean: f64,
    pub std: f64,
    pub per_input: Vec<f64>,
}

/// Across-sub-ensemble measure for every input under one partition.
pub fn across_measure(pool: &PoolPredictions, partition: &EoEPartition, measure: SweepMeasure) -> Result<Vec<f64>> {
    if partition.pool_used() > pool.pool_size() {
        return Err(Error::Partition(format!(
            "partition needs {} members but the pool has {}",
            partition.pool_used(),
            pool.pool_size()
        )));
    }
    let groups = partition.groups();
    match (pool, measure) {
        (PoolPredictions::Classification(preds), SweepMeasure::MutualInformation) => preds
            .par_iter()
            .map(|p| mutual_information(&group_means(p, &groups)))
            .collect(),
        (
            PoolPredictions::Regression { means, noise_var },
            SweepMeasure::VarianceEpistemic | SweepMeasure::GaussianBound,
        ) => means
            .columns()
            .into_iter()
            .map(|col| {
                let sub_means = groups
                    .iter()
                    .map(|g| g.iter().map(|&m| col[m]).sum::<f64>() / g.len() as f64)
                    .collect();
                let r = RegressionEnsemblePrediction::homoscedastic(sub_means, *noise_var)?;
                match measure {
                    SweepMeasure::VarianceEpistemic => Ok(total_variance_decomposition(&r).epistemic),
                    _ => gaussian_mi_bound(&r),
                }
            })
            .collect(),
        (PoolPredictions::Classification(_), m) => {
            Err(Error::Config(format!("measure {} needs a regression pool", m.name())))
        }
        (PoolPredictions::Regression { .. }, m) => Err(Error::Config(format!(
            "measure {} needs a classification pool",
            m.name()
        ))),
    }
}

/// For every sub-ensemble size, partitions the pool into `num_subs` disjoint
/// sub-ensembles, treats each sub-ensemble mean as one member, and evaluates
/// the measure of disagreement across them.
pub fn collapse_sweep_predictions(
    pool: &PoolPredictions,
    sub_sizes: &[usize],
    num_subs: usize,
    measure: SweepMeasure,
) -> Result<Vec<SweepRow>> {
    sub_sizes
        .iter()
        .map(|&size| {
            let part = partition(pool.pool_size(), num_subs, size)?;
            let per_input = across_measure(pool, &part, measure)?;
            let (mean, std) = mean_std(&per_input);
            Ok(SweepRow {
                size_subs: size,
                mean,
                std,
                per_input,
            })
        })
        .collect()
}

/// [`collapse_sweep_predictions`] on a trained pool. Regression measures use
/// `noise_var` as every member's aleatoric variance.
pub fn collapse_sweep(
    pool: &DeepEnsemble,
    sub_sizes: &[usize],
    num_subs: usize,
    eval_inputs: ArrayView2<'_, f64>,
    measure: SweepMeasure,
    noise_var: f64,
) -> Result<Vec<SweepRow>> {
    let needed = sub_sizes.iter().copied().max().unwrap_or(0) * num_subs;
    if needed > pool.len() {
        return Err(Error::Partition(format!(
            "sweep needs {needed} members but the pool has {}",
            pool.len()
        )));
    }
    let preds = match measure {
        SweepMeasure::MutualInformation => PoolPredictions::Classification(pool.predict_classification(eval_inputs)?),
        _ => PoolPredictions::Regression {
            means: regression_means(&pool.member_outputs(eval_inputs)?)?,
            noise_var,
        },
    };
    collapse_sweep_predictions(&preds, sub_sizes, num_subs, measure)
}

/// Stacks `N × C` member logit matrices into per-input predictions.
pub fn stack_member_logits(outputs: &[Array2<f64>]) -> Result<Vec<EnsemblePrediction>> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::Config("no member outputs".into()))?;
    let (n, c) = first.dim();
    let probs: Vec<Array2<f64>> = outputs.iter().map(softmax_rows).collect();
    (0..n)
        .map(|i| {
            let mut logits = Array2::zeros((outputs.len(), c));
            let mut p = Array2::zeros((outputs.len(), c));
            for (k, (o, pk)) in outputs.iter().zip(&probs).enumerate() {
                logits.row_mut(k).assign(&o.row(i));
                p.row_mut(k).assign(&pk.row(i));
            }
            EnsemblePrediction::from_probs(p)?.with_logits(logits)
        })
        .collect()
}

/// `members × inputs` matrix of scalar regression outputs.
pub fn regression_means(outputs: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::Config("no member outputs".into()))?;
    if first.ncols() != 1 {
        return Err(Error::Shape(format!(
            "regression members must have one output, got {}",
            first.ncols()
        )));
    }
    let views: Vec<_> = outputs.iter().map(|o| o.column(0)).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
