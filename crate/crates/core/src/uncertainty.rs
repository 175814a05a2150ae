//! Information-theoretic and variance-based uncertainty measures.
//!
//! All entropies are in nats.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::ensembles::EoEPartition;
use crate::error::{Error, Result};
use crate::nn::{log_sum_exp, softmax_rows};

const SIMPLEX_TOL: f64 = 1e-9;
const LOGIT_TOL: f64 = 1e-6;
/// Negative MI below this is treated as corruption rather than rounding.
const NEGATIVE_MI_LIMIT: f64 = -1e-9;

/// A per-class probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPrediction {
    probs: Array1<f64>,
}

impl CategoricalPrediction {
    pub fn new(probs: impl Into<Array1<f64>>) -> Result<Self> {
        let probs = probs.into();
        check_simplex(probs.view())?;
        Ok(CategoricalPrediction { probs })
    }

    pub fn probs(&self) -> ArrayView1<'_, f64> {
        self.probs.view()
    }

    pub fn entropy(&self) -> f64 {
        entropy_unchecked(self.probs.view())
    }
}

fn check_simplex(p: ArrayView1<'_, f64>) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Domain("empty probability vector".into()));
    }
    if let Some(bad) = p.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
        return Err(Error::Domain(format!("probability {bad} outside [0, 1]")));
    }
    let sum = p.sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Domain(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

fn entropy_unchecked(p: ArrayView1<'_, f64>) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Shannon entropy `-Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    let view = ArrayView1::from(p);
    check_simplex(view)?;
    Ok(entropy_unchecked(view).max(0.0))
}

/// Member-by-class predictions of an ensemble for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    member_probs: Array2<f64>,
    member_logits: Option<Array2<f64>>,
}

impl EnsemblePrediction {
    /// From an `M × C` probability matrix whose rows are distributions.
    pub fn from_probs(member_probs: Array2<f64>) -> Result<Self> {
        if member_probs.nrows() == 0 || member_probs.ncols() == 0 {
            return Err(Error::Domain("ensemble needs at least one member and one class".into()));
        }
        for row in member_probs.rows() {
            check_simplex(row)?;
        }
        Ok(EnsemblePrediction {
            member_probs,
            member_logits: None,
        })
    }

    /// From an `M × C` logit matrix; probabilities are the row softmax.
    pub fn from_logits(member_logits: Array2<f64>) -> Result<Self> {
        if member_logits.nrows() == 0 || member_logits.ncols() == 0 {
            return Err(Error::Domain("ensemble needs at least one member and one class".into()));
        }
        if member_logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite logit".into()));
        }
        Ok(EnsemblePrediction {
            member_probs: softmax_rows(&member_logits),
            member_logits: Some(member_logits),
        })
    }

    /// Attaches logits to existing probabilities after checking consistency.
    pub fn with_logits(self, member_logits: Array2<f64>) -> Result<Self> {
        if member_logits.dim() != self.member_probs.dim() {
            return Err(Error::Shape(format!(
                "logits {:?} vs probs {:?}",
                member_logits.dim(),
                self.member_probs.dim()
            )));
        }
        if member_logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite logit".into()));
        }
        let implied = softmax_rows(&member_logits);
        let worst = (&implied - &self.member_probs)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if worst > LOGIT_TOL {
            return Err(Error::Domain(format!("logits disagree with probabilities by {worst}")));
        }
        Ok(EnsemblePrediction {
            member_logits: Some(member_logits),
            ..self
        })
    }

    pub fn member_count(&self) -> usize {
        self.member_probs.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.member_probs.ncols()
    }

    pub fn member_probs(&self) -> &Array2<f64> {
        &self.member_probs
    }

    pub fn member_logits(&self) -> Option<&Array2<f64>> {
        self.member_logits.as_ref()
    }

    /// Restricts to the given members (rows), in order.
    pub fn select_members(&self, members: &[usize]) -> EnsemblePrediction {
        EnsemblePrediction {
            member_probs: self.member_probs.select(Axis(0), members),
            member_logits: self.member_logits.as_ref().map(|l| l.select(Axis(0), members)),
        }
    }
}

/// Uniform mixture of the member distributions.
pub fn mean_prediction(e: &EnsemblePrediction) -> CategoricalPrediction {
    let mut probs = e
        .member_probs
        .mean_axis(Axis(0))
        .expect("ensemble has at least one member");
    // Averaging rounding can leave the sum a few ulps from 1.
    probs /= probs.sum();
    CategoricalPrediction { probs }
}

fn clamp_mi(raw: f64, upper: f64) -> Result<f64> {
    if raw.is_nan() || raw < NEGATIVE_MI_LIMIT {
        return Err(Error::Computation(format!("mutual information evaluated to {raw}")));
    }
    Ok(raw.clamp(0.0, upper))
}

/// `H(mean) − mean H(member)`: the information the member index carries
/// about the label.
pub fn mutual_information(e: &EnsemblePrediction) -> Result<f64> {
    let total = mean_prediction(e).entropy();
    let expected = e.member_probs.rows().into_iter().map(entropy_unchecked).sum::<f64>() / e.member_count() as f64;
    clamp_mi(total - expected, (e.member_count() as f64).ln())
}

/// Per-member logit sums `Σ_c logit[m, c]`.
fn logit_sums(e: &EnsemblePrediction) -> Result<Array1<f64>> {
    let logits = e
        .member_logits
        .as_ref()
        .ok_or_else(|| Error::Domain("weighted mutual information needs logits".into()))?;
    Ok(logits.sum_axis(Axis(1)))
}

/// Member weights `w_j ∝ Σ_i exp(l_ij)` where `l_ij` is the logit sum of
/// member `j` on input `i`, summed over the whole batch.
pub fn member_weights(batch: &[EnsemblePrediction]) -> Result<Vec<f64>> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Domain("member weights need at least one input".into()))?;
    let m = first.member_count();
    let sums = batch
        .iter()
        .map(|e| {
            if e.member_count() != m {
                return Err(Error::Shape(format!(
                    "inputs disagree on member count ({} vs {m})",
                    e.member_count()
                )));
            }
            logit_sums(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let per_member: Vec<f64> = (0..m)
        .map(|j| log_sum_exp(sums.iter().map(|s| s[j]).collect::<Vec<_>>()))
        .collect();
    let norm = log_sum_exp(per_member.clone());
    Ok(per_member.into_iter().map(|v| (v - norm).exp()).collect())
}

/// `H(Σ w_j p_j) − Σ w_j H(p_j)` for explicit member weights.
pub fn weighted_mutual_information_with(e: &EnsemblePrediction, weights: &[f64]) -> Result<f64> {
    if weights.len() != e.member_count() {
        return Err(Error::Shape(format!(
            "{} weights for {} members",
            weights.len(),
            e.member_count()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Domain("member weights must be finite and non-negative".into()));
    }
    let total_w: f64 = weights.iter().sum();
    if (total_w - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Domain(format!("member weights sum to {total_w}")));
    }
    let w = ArrayView1::from(weights);
    let mut mixture = e.member_probs.t().dot(&w);
    mixture /= mixture.sum();
    let expected: f64 = e
        .member_probs
        .rows()
        .into_iter()
        .zip(weights)
        .map(|(row, &wj)| wj * entropy_unchecked(row))
        .sum();
    clamp_mi(
        entropy_unchecked(mixture.view()) - expected,
        (e.member_count() as f64).ln(),
    )
}

/// Weighted MI with weights derived from this input's own logit sums.
pub fn weighted_mutual_information(e: &EnsemblePrediction) -> Result<f64> {
    let weights = member_weights(std::slice::from_ref(e))?;
    weighted_mutual_information_with(e, &weights)
}

/// Weighted MI for every input of a batch, sharing batch-global member weights.
pub fn batch_weighted_mutual_information(batch: &[EnsemblePrediction]) -> Result<Vec<f64>> {
    let weights = member_weights(batch)?;
    batch
        .iter()
        .map(|e| weighted_mutual_information_with(e, &weights))
        .collect()
}

/// Member means and variances of a regression ensemble for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionEnsemblePrediction {
    member_means: Vec<f64>,
    member_vars: Vec<f64>,
}

impl RegressionEnsemblePrediction {
    pub fn new(member_means: Vec<f64>, member_vars: Vec<f64>) -> Result<Self> {
        if member_means.is_empty() {
            return Err(Error::Domain("regression ensemble needs at least one member".into()));
        }
        if member_means.len() != member_vars.len() {
            return Err(Error::Shape(format!(
                "{} means vs {} variances",
                member_means.len(),
                member_vars.len()
            )));
        }
        if member_means.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite member mean".into()));
        }
        if member_vars.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("member variances must be finite and >= 0".into()));
        }
        Ok(RegressionEnsemblePrediction {
            member_means,
            member_vars,
        })
    }

    /// Members sharing one homoscedastic noise variance.
    pub fn homoscedastic(member_means: Vec<f64>, noise_var: f64) -> Result<Self> {
        let vars = vec![noise_var; member_means.len()];
        Self::new(member_means, vars)
    }

    pub fn member_means(&self) -> &[f64] {
        &self.member_means
    }

    pub fn member_vars(&self) -> &[f64] {
        &self.member_vars
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceDecomposition {
    /// Mean of member variances.
    pub aleatoric: f64,
    /// Population variance of member means.
    pub epistemic: f64,
}

impl VarianceDecomposition {
    pub fn total(&self) -> f64 {
        self.aleatoric + self.epistemic
    }
}

/// Law of total variance split of the mixture variance.
pub fn total_variance_decomposition(r: &RegressionEnsemblePrediction) -> VarianceDecomposition {
    let m = r.member_means.len() as f64;
    let aleatoric = r.member_vars.iter().sum::<f64>() / m;
    let mean = r.member_means.iter().sum::<f64>() / m;
    let epistemic = r.member_means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    VarianceDecomposition { aleatoric, epistemic }
}

/// `½ ln(1 + epistemic / aleatoric)`.
pub fn gaussian_mi_bound(r: &RegressionEnsemblePrediction) -> Result<f64> {
    let d = total_variance_decomposition(r);
    if d.epistemic == 0.0 {
        return Ok(0.0);
    }
    if d.aleatoric == 0.0 {
        return Err(Error::Unbounded { epistemic: d.epistemic });
    }
    Ok(0.5 * (d.epistemic / d.aleatoric).ln_1p())
}

/// The three terms of `I_total = I_across + I_within` for a partitioned ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainRuleTerms {
    pub total: f64,
    pub across: f64,
    pub within: f64,
}

impl ChainRuleTerms {
    pub fn residual(&self) -> f64 {
        self.total - self.across - self.within
    }
}

/// Averages each group's members into one row per group.
pub(crate) fn group_means(e: &EnsemblePrediction, groups: &[Vec<usize>]) -> EnsemblePrediction {
    let mut means = Array2::zeros((groups.len(), e.class_count()));
    for (mut row, group) in means.rows_mut().into_iter().zip(groups) {
        for &m in group {
            row += &e.member_probs.row(m);
        }
        row /= group.len() as f64;
        let s = row.sum();
        row /= s;
    }
    EnsemblePrediction {
        member_probs: means,
        member_logits: None,
    }
}

/// Splits the ensemble's MI into disagreement across sub-ensembles and the
/// mean disagreement within them.
pub fn chain_rule_decompose(e: &EnsemblePrediction, partition: &EoEPartition) -> Result<ChainRuleTerms> {
    if partition.pool_used() != e.member_count() {
        return Err(Error::Partition(format!(
            "partition covers {} members but the ensemble has {}",
            partition.pool_used(),
            e.member_count()
        )));
    }
    let groups = partition.groups();
    let total = mutual_information(e)?;
    let across = mutual_information(&group_means(e, &groups))?;
    let within = groups
        .iter()
        .map(|g| mutual_information(&e.select_members(g)))
        .sum::<Result<f64>>()?
        / groups.len() as f64;
    Ok(ChainRuleTerms { total, across, within })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::partition;
    use crate::seed;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn random_ensemble(rng: &mut impl Rng, m: usize, c: usize) -> EnsemblePrediction {
        let logits = Array2::from_shape_simple_fn((m, c), || rng.random_range(-3.0..3.0));
        EnsemblePrediction::from_logits(logits).unwrap()
    }

    /// Plug-in MI of the joint p(m, y) = p(m) p(y|m) by enumeration.
    fn joint_mi_oracle(p: &Array2<f64>) -> f64 {
        let (m, c) = p.dim();
        let pm = 1.0 / m as f64;
        let py: Vec<f64> = (0..c).map(|y| (0..m).map(|k| pm * p[[k, y]]).sum()).collect();
        let mut mi = 0.0;
        for k in 0..m {
            for y in 0..c {
                let joint = pm * p[[k, y]];
                if joint > 0.0 {
                    mi += joint * (joint / (pm * py[y])).ln();
                }
            }
        }
        mi
    }

    #[test]
    fn entropy_examples() {
        let uniform = vec![0.1; 10];
        assert_abs_diff_eq!(entropy(&uniform).unwrap(), 10f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        // -(0.8 ln 0.8 + 0.2 ln 0.2)
        assert_abs_diff_eq!(entropy(&[0.8, 0.2]).unwrap(), 0.500402, epsilon = 1e-6);
        assert!(matches!(entropy(&[1.2, -0.2]), Err(Error::Domain(_))));
    }

    #[test]
    fn mean_prediction_examples() {
        let single = EnsemblePrediction::from_probs(array![[0.2, 0.3, 0.5]]).unwrap();
        assert_eq!(mean_prediction(&single).probs(), array![0.2, 0.3, 0.5].view());
        let split = EnsemblePrediction::from_probs(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(mean_prediction(&split).probs(), array![0.5, 0.5, 0.0].view());

        let mut rng = seed::rng(3);
        let e = random_ensemble(&mut rng, 5, 3);
        let mean = mean_prediction(&e);
        for y in 0..3 {
            let brute: f64 = (0..5).map(|k| e.member_probs()[[k, y]]).sum::<f64>() / 5.0;
            assert_abs_diff_eq!(mean.probs()[y], brute, epsilon = 1e-15);
        }
    }

    #[test]
    fn mutual_information_examples() {
        let same = EnsemblePrediction::from_probs(array![[0.3, 0.7], [0.3, 0.7], [0.3, 0.7]]).unwrap();
        assert_eq!(mutual_information(&same).unwrap(), 0.0);
        let split = EnsemblePrediction::from_probs(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(mutual_information(&split).unwrap(), 2f64.ln(), epsilon = 1e-15);

        let mut rng = seed::rng(4);
        for _ in 0..50 {
            let e = random_ensemble(&mut rng, 4, 3);
            assert_abs_diff_eq!(
                mutual_information(&e).unwrap(),
                joint_mi_oracle(e.member_probs()),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn weighted_mi_examples() {
        // Equal logit sums: uniform weights, identical to plain MI.
        let logits = array![[1.0, 2.0, 0.0], [0.0, 0.0, 3.0], [3.0, -1.0, 1.0]];
        let e = EnsemblePrediction::from_logits(logits).unwrap();
        assert_abs_diff_eq!(
            weighted_mutual_information(&e).unwrap(),
            mutual_information(&e).unwrap(),
            epsilon = 1e-12
        );

        let single = EnsemblePrediction::from_logits(array![[0.3, -2.0, 1.0]]).unwrap();
        assert_eq!(weighted_mutual_information(&single).unwrap(), 0.0);

        // Logit sums 0, ln 2, ln 3 give weights 1/6, 2/6, 3/6.
        let ln2 = 2f64.ln();
        let ln3 = 3f64.ln();
        let logits = array![[0.5, -0.5], [ln2 - 1.0, 1.0], [ln3, 0.0]];
        let e = EnsemblePrediction::from_logits(logits).unwrap();
        let w = member_weights(std::slice::from_ref(&e)).unwrap();
        assert_abs_diff_eq!(w[0], 1.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 2.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[2], 3.0 / 6.0, epsilon = 1e-14);
        let p = e.member_probs();
        let hand_w = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        let mix: Vec<f64> = (0..2).map(|y| (0..3).map(|k| hand_w[k] * p[[k, y]]).sum()).collect();
        let h = |v: &[f64]| -v.iter().map(|x| x * x.ln()).sum::<f64>();
        let expected = h(&mix) - (0..3).map(|k| hand_w[k] * h(&[p[[k, 0]], p[[k, 1]]])).sum::<f64>();
        assert_abs_diff_eq!(weighted_mutual_information(&e).unwrap(), expected, epsilon = 1e-14);

        let no_logits = EnsemblePrediction::from_probs(array![[0.5, 0.5]]).unwrap();
        assert!(matches!(weighted_mutual_information(&no_logits), Err(Error::Domain(_))));
        assert!(matches!(
            EnsemblePrediction::from_logits(array![[f64::INFINITY, 0.0]]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn batch_weights_are_global() {
        let a = EnsemblePrediction::from_logits(array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let b = EnsemblePrediction::from_logits(array![[2.0, 2.0], [0.0, 0.0]]).unwrap();
        let w = member_weights(&[a.clone(), b.clone()]).unwrap();
        let e0 = 1.0 + 4f64.exp();
        let e1 = 2f64.exp() + 1.0;
        assert_abs_diff_eq!(w[0], e0 / (e0 + e1), epsilon = 1e-14);
        assert_abs_diff_eq!(w[0] + w[1], 1.0, epsilon = 1e-15);
        let per_input = batch_weighted_mutual_information(&[a, b]).unwrap();
        assert_eq!(per_input.len(), 2);
    }

    #[test]
    fn variance_decomposition_examples() {
        let same = RegressionEnsemblePrediction::homoscedastic(vec![0.7; 4], 0.25).unwrap();
        let d = total_variance_decomposition(&same);
        assert_eq!(d.epistemic, 0.0);
        assert_abs_diff_eq!(d.aleatoric, 0.25, epsilon = 1e-15);

        let two = RegressionEnsemblePrediction::new(vec![-1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let d = total_variance_decomposition(&two);
        assert_eq!((d.aleatoric, d.epistemic), (0.0, 1.0));
    }

    #[test]
    fn variance_decomposition_matches_mixture_sampling() {
        let mut rng = seed::rng(99);
        let means: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let vars: Vec<f64> = (0..10).map(|_| rng.random_range(0.1..1.5)).collect();
        let r = RegressionEnsemblePrediction::new(means.clone(), vars.clone()).unwrap();
        let d = total_variance_decomposition(&r);

        let draws = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            let k = rng.random_range(0..10);
            let y = Normal::new(means[k], vars[k].sqrt()).unwrap().sample(&mut rng);
            s += y;
            s2 += y * y;
        }
        let mean = s / draws as f64;
        let sampled = s2 / draws as f64 - mean * mean;
        assert!(
            (sampled - d.total()).abs() / d.total() < 0.01,
            "{sampled} vs {}",
            d.total()
        );
        assert!(d.aleatoric >= 0.0 && d.epistemic >= 0.0);
    }

    #[test]
    fn gaussian_bound_examples() {
        let flat = RegressionEnsemblePrediction::homoscedastic(vec![1.0, 1.0], 0.5).unwrap();
        assert_eq!(gaussian_mi_bound(&flat).unwrap(), 0.0);
        // Means ±1 with unit variances: epistemic 1, aleatoric 1.
        let r = RegressionEnsemblePrediction::homoscedastic(vec![-1.0, 1.0], 1.0).unwrap();
        assert_abs_diff_eq!(gaussian_mi_bound(&r).unwrap(), 0.5 * 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(0.5 * 2f64.ln(), 0.346574, epsilon = 1e-6);
        let degenerate = RegressionEnsemblePrediction::homoscedastic(vec![-1.0, 1.0], 0.0).unwrap();
        assert!(matches!(gaussian_mi_bound(&degenerate), Err(Error::Unbounded { .. })));
    }

    #[test]
    fn gaussian_bound_is_monotone_in_ratio() {
        let mut last = -1.0;
        for i in 0..200 {
            let spread = i as f64 * 0.05;
            let r = RegressionEnsemblePrediction::homoscedastic(vec![-spread, spread], 0.3).unwrap();
            let b = gaussian_mi_bound(&r).unwrap();
            assert!(b >= 0.0);
            assert!(b > last || (i == 0 && b == 0.0));
            last = b;
        }
    }

    #[test]
    fn chain_rule_degenerate_partitions() {
        let mut rng = seed::rng(5);
        let e = random_ensemble(&mut rng, 6, 4);
        let one = chain_rule_decompose(&e, &partition(6, 1, 6).unwrap()).unwrap();
        assert_eq!(one.across, 0.0);
        assert_abs_diff_eq!(one.within, one.total, epsilon = 1e-15);
        let singles = chain_rule_decompose(&e, &partition(6, 6, 1).unwrap()).unwrap();
        assert_eq!(singles.within, 0.0);
        assert_abs_diff_eq!(singles.across, singles.total, epsilon = 1e-15);

        let e12 = random_ensemble(&mut rng, 12, 5);
        let terms = chain_rule_decompose(&e12, &partition(12, 3, 4).unwrap()).unwrap();
        assert!(terms.residual().abs() < 1e-10);

        assert!(matches!(
            chain_rule_decompose(&e12, &partition(12, 2, 5).unwrap()),
            Err(Error::Partition(_))
        ));
    }

    proptest! {
        #[test]
        fn mi_bounds_and_permutation_invariance(
            m in 1usize..8,
            c in 2usize..6,
            s in any::<u64>(),
        ) {
            let mut rng = seed::rng(s);
            let e = random_ensemble(&mut rng, m, c);
            let mi = mutual_information(&e).unwrap();
            prop_assert!(mi >= 0.0);
            prop_assert!(mi <= (m as f64).ln().min((c as f64).ln()) + 1e-12);
            let reversed: Vec<usize> = (0..m).rev().collect();
            let permuted = mutual_information(&e.select_members(&reversed)).unwrap();
            prop_assert!((mi - permuted).abs() < 1e-12);
        }

        #[test]
        fn chain_rule_identity_holds(
            num_subs in 1usize..6,
            size_subs in 1usize..6,
            c in 2usize..6,
            s in any::<u64>(),
        ) {
            let mut rng = seed::rng(s);
            let m = num_subs * size_subs;
            let e = random_ensemble(&mut rng, m, c);
            let terms = chain_rule_decompose(&e, &partition(m, num_subs, size_subs).unwrap()).unwrap();
            prop_assert!(terms.residual().abs() < 1e-10);
        }

        #[test]
        fn weighted_mi_equals_mi_under_equal_logit_sums(
            m in 1usize..7,
            c in 2usize..6,
            s in any::<u64>(),
        ) {
            let mut rng = seed::rng(s);
            let mut logits = Array2::from_shape_simple_fn((m, c), || rng.random_range(-4.0..4.0));
            for mut row in logits.rows_mut() {
                let shift = row.sum() / c as f64;
                row -= shift;
            }
            let e = EnsemblePrediction::from_logits(logits).unwrap();
            let diff = weighted_mutual_information(&e).unwrap() - mutual_information(&e).unwrap();
            prop_assert!(diff.abs() < 1e-12);
        }
    }
}
