//! Single-feature CART regression trees, bagged forests, and the
//! ensemble-of-forests collapse sweep.

use rand::Rng;
use rayon::prelude::*;

use crate::ensembles::mean_std;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    /// `x <= threshold` goes left.
    Split {
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    max_depth: usize,
}

impl RegressionTree {
    pub fn predict(&self, x: f64) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { threshold, left, right } => i = if x <= threshold { left } else { right },
            }
        }
    }

    /// Number of split levels on the deepest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { threshold, .. } => Some(*threshold),
                Node::Leaf(_) => None,
            })
            .collect()
    }
}

/// Greedy variance-reduction tree on one feature. Candidate thresholds are
/// midpoints between consecutive distinct sorted values; ties in gain go to
/// the lowest threshold.
pub fn fit_tree(xs: &[f64], ys: &[f64], max_depth: usize) -> Result<RegressionTree> {
    if xs.is_empty() {
        return Err(Error::Fit("cannot fit a tree on zero samples".into()));
    }
    if xs.len() != ys.len() {
        return Err(Error::Fit(format!("{} inputs but {} targets", xs.len(), ys.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite sample".into()));
    }
    let mut points: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut nodes = Vec::new();
    grow(&points, 0, max_depth, &mut nodes);
    Ok(RegressionTree { nodes, max_depth })
}

fn grow(points: &[(f64, f64)], depth: usize, max_depth: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    nodes.push(Node::Leaf(mean));
    if depth >= max_depth || points.len() < 2 {
        return id;
    }
    let total_sse: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    if total_sse == 0.0 {
        return id;
    }
    let Some((threshold, cut)) = best_split(points) else {
        return id;
    };
    let left = grow(&points[..cut], depth + 1, max_depth, nodes);
    let right = grow(&points[cut..], depth + 1, max_depth, nodes);
    nodes[id] = Node::Split { threshold, left, right };
    id
}

/// Best `(threshold, cut index)` over sorted points, maximizing SSE reduction.
fn best_split(points: &[(f64, f64)]) -> Option<(f64, usize)> {
    let total: f64 = points.iter().map(|p| p.1).sum();
    let total_sq: f64 = points.iter().map(|p| p.1 * p.1).sum();
    let n = points.len();
    let mut best: Option<(f64, f64, usize)> = None;
    let (mut left_sum, mut left_sq) = (0.0, 0.0);
    for cut in 1..n {
        let y = points[cut - 1].1;
        left_sum += y;
        left_sq += y * y;
        if points[cut - 1].0 == points[cut].0 {
            continue;
        }
        let nl = cut as f64;
        let nr = (n - cut) as f64;
        let right_sum = total - left_sum;
        let right_sq = total_sq - left_sq;
        let sse = (left_sq - left_sum * left_sum / nl) + (right_sq - right_sum * right_sum / nr);
        // Minimizing child SSE is equivalent to maximizing the reduction.
        if best.is_none_or(|(b, _, _)| sse < b) {
            let threshold = 0.5 * (points[cut - 1].0 + points[cut].0);
            best = Some((sse, threshold, cut));
        }
    }
    best.map(|(_, t, c)| (t, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
    bootstrap_seeds: Vec<u64>,
}

impl RandomForest {
    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn bootstrap_seeds(&self) -> &[u64] {
        &self.bootstrap_seeds
    }

    /// Bagged mean and the raw per-tree outputs.
    pub fn predict(&self, x: f64) -> (f64, Vec<f64>) {
        let values: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        (mean, values)
    }

    pub fn predict_mean(&self, x: f64) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

pub fn forest_predict(forest: &RandomForest, x: f64) -> (f64, Vec<f64>) {
    forest.predict(x)
}

/// Fits `n_trees` trees, each on its own bootstrap resample (N draws with
/// replacement) seeded by `split(seed, tree index)`.
pub fn fit_forest(xs: &[f64], ys: &[f64], config: ForestConfig, seed: u64) -> Result<RandomForest> {
    if config.n_trees == 0 {
        return Err(Error::Fit("a forest needs at least one tree".into()));
    }
    if xs.is_empty() {
        return Err(Error::Fit("cannot fit a forest on zero samples".into()));
    }
    let bootstrap_seeds: Vec<u64> = (0..config.n_trees as u64).map(|t| seed::split(seed, t)).collect();
    let trees = bootstrap_seeds
        .par_iter()
        .map(|&s| {
            if !config.bootstrap {
                return fit_tree(xs, ys, config.max_depth);
            }
            let mut rng = seed::rng(seed::split(s, seed::stream::BOOTSTRAP));
            let n = xs.len();
            let (bx, by): (Vec<f64>, Vec<f64>) = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    (xs[i], ys[i])
                })
                .unzip();
            fit_tree(&bx, &by, config.max_depth)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomForest { trees, bootstrap_seeds })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestSweepRow {
    pub n_trees: usize,
    /// Mean over seeds of the grid-averaged epistemic variance.
    pub mean_epistemic: f64,
    /// Standard deviation of the per-seed means.
    pub std_over_seeds: f64,
    pub per_seed_means: Vec<f64>,
    /// Per-grid-point epistemic variance, averaged over seeds.
    pub per_grid: Vec<f64>,
}

impl ForestSweepRow {
    /// ±1σ band over seeds (68%).
    pub fn band68(&self) -> (f64, f64) {
        (
            self.mean_epistemic - self.std_over_seeds,
            self.mean_epistemic + self.std_over_seeds,
        )
    }

    /// ±2σ band over seeds (95%).
    pub fn band95(&self) -> (f64, f64) {
        (
            self.mean_epistemic - 2.0 * self.std_over_seeds,
            self.mean_epistemic + 2.0 * self.std_over_seeds,
        )
    }
}

/// Per-grid-point population variance of `num_forests` independent forest means.
pub fn across_forest_variance(
    xs: &[f64],
    ys: &[f64],
    config: ForestConfig,
    num_forests: usize,
    grid: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    let forests = (0..num_forests as u64)
        .map(|f| fit_forest(xs, ys, config, seed::split(seed, f)))
        .collect::<Result<Vec<_>>>()?;
    Ok(grid
        .iter()
        .map(|&x| {
            let means: Vec<f64> = forests.iter().map(|f| f.predict_mean(x)).collect();
            mean_std(&means).1.powi(2)
        })
        .collect())
}

/// For each tree count, fits `num_forests` independent forests per seed and
/// measures their disagreement over `grid`.
#[allow(clippy::too_many_arguments)]
pub fn forest_collapse_sweep(
    xs: &[f64],
    ys: &[f64],
    tree_counts: &[usize],
    num_forests: usize,
    max_depth: usize,
    bootstrap: bool,
    grid: &[f64],
    seeds: &[u64],
) -> Result<Vec<ForestSweepRow>> {
    if num_forests == 0 {
        return Err(Error::Config("need at least one forest".into()));
    }
    if seeds.is_empty() || grid.is_empty() {
        return Err(Error::Config("need at least one seed and one grid point".into()));
    }
    tree_counts
        .iter()
        .map(|&n_trees| {
            let config = ForestConfig {
                n_trees,
                max_depth,
                bootstrap,
            };
            let per_seed = seeds
                .iter()
                .map(|&s| across_forest_variance(xs, ys, config, num_forests, grid, seed::split(s, n_trees as u64)))
                .collect::<Result<Vec<_>>>()?;
            let per_seed_means: Vec<f64> = per_seed.iter().map(|v| mean_std(v).0).collect();
            let (mean_epistemic, std_over_seeds) = mean_std(&per_seed_means);
            let per_grid = (0..grid.len())
                .map(|g| per_seed.iter().map(|v| v[g]).sum::<f64>() / seeds.len() as f64)
                .collect();
            Ok(ForestSweepRow {
                n_trees,
                mean_epistemic,
                std_over_seeds,
                per_seed_means,
                per_grid,
            })
        })
        .collect()
}
