//! Out-of-distribution and calibration metrics over scored predictions.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::uncertainty::CategoricalPrediction;

const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPrediction {
    pub prediction: CategoricalPrediction,
    pub label: Option<usize>,
    /// Higher means more uncertain.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredPredictions {
    items: Vec<ScoredPrediction>,
}

impl ScoredPredictions {
    pub fn new(items: Vec<ScoredPrediction>) -> Result<Self> {
        for (i, it) in items.iter().enumerate() {
            if !it.score.is_finite() {
                return Err(Error::Domain(format!("score {i} is not finite")));
            }
            if let Some(l) = it.label {
                let c = it.prediction.probs().len();
                if l >= c {
                    return Err(Error::Domain(format!("label {l} of input {i} outside [0, {c})")));
                }
            }
        }
        Ok(ScoredPredictions { items })
    }

    pub fn items(&self) -> &[ScoredPrediction] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.score).collect()
    }

    fn subset(&self, idx: &[usize]) -> ScoredPredictions {
        ScoredPredictions {
            items: idx.iter().map(|&i| self.items[i].clone()).collect(),
        }
    }

    fn labelled(&self) -> Result<Vec<(&CategoricalPrediction, usize)>> {
        if self.items.is_empty() {
            return Err(Error::Domain("no predictions".into()));
        }
        self.items
            .iter()
            .map(|i| i.label.map(|l| (&i.prediction, l)).ok_or(Error::MissingLabels))
            .collect()
    }
}

/// Index of the largest probability; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// P(ood score > id score) + ½ P(equal), from sorted two-pointer counts.
pub fn auroc(scores_id: &[f64], scores_ood: &[f64]) -> Result<f64> {
    if scores_id.is_empty() || scores_ood.is_empty() {
        return Err(Error::Domain("AUROC needs nonempty iD and OoD scores".into()));
    }
    if scores_id.iter().chain(scores_ood).any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let mut id = scores_id.to_vec();
    id.sort_by(f64::total_cmp);
    // Twice the Mann-Whitney U, kept integral so swapping arguments sums to 1 exactly.
    let mut twice_u: u128 = 0;
    for &s in scores_ood {
        let below = id.partition_point(|&v| v < s);
        let not_above = id.partition_point(|&v| v <= s);
        twice_u += 2 * below as u128 + (not_above - below) as u128;
    }
    let pairs = 2 * scores_id.len() as u128 * scores_ood.len() as u128;
    Ok(twice_u as f64 / pairs as f64)
}

pub fn accuracy(preds: &ScoredPredictions) -> Result<f64> {
    let items = preds.labelled()?;
    let correct = items
        .iter()
        .filter(|(p, l)| argmax(p.probs().as_slice().expect("contiguous")) == *l)
        .count();
    Ok(correct as f64 / items.len() as f64)
}

pub fn nll(preds: &ScoredPredictions) -> Result<f64> {
    let items = preds.labelled()?;
    let total: f64 = items.iter().map(|(p, l)| -p.probs()[*l].max(PROB_FLOOR).ln()).sum();
    Ok(total / items.len() as f64)
}

/// |mean max-probability − accuracy|.
pub fn calibration_error(preds: &ScoredPredictions) -> Result<f64> {
    let items = preds.labelled()?;
    let conf: f64 = items
        .iter()
        .map(|(p, _)| p.probs().iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / items.len() as f64;
    Ok((conf - accuracy(preds)?).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Accuracy,
    Nll,
    CalibrationError,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Nll => "nll",
            Metric::CalibrationError => "calibration_error",
        }
    }

    pub fn evaluate(self, preds: &ScoredPredictions) -> Result<f64> {
        match self {
            Metric::Accuracy => accuracy(preds),
            Metric::Nll => nll(preds),
            Metric::CalibrationError => calibration_error(preds),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurveMode {
    BucketAverage,
    AcceptanceThreshold,
}

impl CurveMode {
    pub fn name(self) -> &'static str {
        match self {
            CurveMode::BucketAverage => "bucket_average",
            CurveMode::AcceptanceThreshold => "acceptance_threshold",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileCurve {
    pub mode: CurveMode,
    pub metric: Metric,
    /// `(quantile in (0, 1], metric value)`, quantiles strictly increasing.
    pub points: Vec<(f64, f64)>,
}

/// Equal-count buckets over inputs sorted by ascending score; the last bucket
/// absorbs the remainder.
pub fn quantile_metrics(
    preds: &ScoredPredictions,
    metric: Metric,
    n_buckets: usize,
    mode: CurveMode,
) -> Result<QuantileCurve> {
    if n_buckets < 2 {
        return Err(Error::Domain("need at least two buckets".into()));
    }
    if preds.len() < n_buckets {
        return Err(Error::Domain(format!(
            "{} inputs cannot fill {n_buckets} buckets",
            preds.len()
        )));
    }
    preds.labelled()?;
    let mut order: Vec<usize> = (0..preds.len()).collect();
    // Stable: ties keep input order.
    order.sort_by(|&a, &b| preds.items[a].score.total_cmp(&preds.items[b].score));
    let size = preds.len() / n_buckets;
    let points = (0..n_buckets)
        .map(|k| {
            let end = if k + 1 == n_buckets {
                preds.len()
            } else {
                (k + 1) * size
            };
            let start = match mode {
                CurveMode::BucketAverage => k * size,
                CurveMode::AcceptanceThreshold => 0,
            };
            let value = metric.evaluate(&preds.subset(&order[start..end]))?;
            Ok(((k + 1) as f64 / n_buckets as f64, value))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantileCurve { mode, metric, points })
}

/// Negative population covariance between quantile and metric value.
pub fn curve_covariance(curve: &QuantileCurve) -> Result<f64> {
    let n = curve.points.len();
    if n < 2 {
        return Err(Error::Domain("covariance needs at least two points".into()));
    }
    let nf = n as f64;
    let mq = curve.points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mv = curve.points.iter().map(|p| p.1).sum::<f64>() / nf;
    let cov = curve.points.iter().map(|p| (p.0 - mq) * (p.1 - mv)).sum::<f64>() / nf;
    Ok(-cov)
}

fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("empty input".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// mean(ood) − mean(id).
pub fn mean_score_difference(scores_id: &[f64], scores_ood: &[f64]) -> Result<f64> {
    Ok(mean(scores_ood)? - mean(scores_id)?)
}

/// Right-continuous step points `(value, fraction ≤ value)` at each distinct value.
pub fn ecdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::Domain("ECDF of an empty sample".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("NaN in ECDF sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => out.push((v, frac)),
        }
    }
    Ok(out)
}

/// Ranks starting at 1, ties receiving their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Domain(
            "spearman needs two equal-length samples of size ≥ 2".into(),
        ));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Domain("spearman undefined for a constant sample".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}
