//! Command-line definitions and dispatch.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::commands::{chain_rule, eval_logits, extract, forest, toy, width};
use crate::config::{read_config_file, resolve, Flags, RunConfig};
use crate::output::{RunDir, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "eoe", version, about = "Epistemic uncertainty collapse experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: runs/<subcommand>-seed<seed>).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Flat JSON object of config overrides; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the full-size experiment settings instead of the desk-scale ones.
    #[arg(long)]
    pub paper_scale: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub train_images: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    #[arg(long)]
    pub ood_images: Option<PathBuf>,
    #[arg(long)]
    pub ood_labels: Option<PathBuf>,
    /// Use synthetic Gaussian classes (the default unless IDX paths are given).
    #[arg(long)]
    pub synthetic: bool,
    /// Replace training labels by random classes with this probability.
    #[arg(long)]
    pub label_noise: Option<f64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub n_ood: Option<usize>,
}

impl DataArgs {
    fn flags(&self, f: &mut Flags) {
        f.set("train_images", self.train_images.as_ref())
            .set("train_labels", self.train_labels.as_ref())
            .set("test_images", self.test_images.as_ref())
            .set("test_labels", self.test_labels.as_ref())
            .set("ood_images", self.ood_images.as_ref())
            .set("ood_labels", self.ood_labels.as_ref())
            .set("label_noise", self.label_noise)
            .set("n_train", self.n_train)
            .set("n_test", self.n_test)
            .set("n_ood", self.n_ood);
        if self.synthetic {
            f.set("synthetic", Some(true));
        } else if self.train_images.is_some() {
            f.set("synthetic", Some(false));
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sub-ensemble size sweep on 1-D sine regression.
    ToyRegression {
        #[command(flatten)]
        common: Common,
        /// variance_epistemic or gaussian_bound.
        #[arg(long)]
        measure: Option<String>,
        /// Train fresh members for every size instead of partitioning one pool.
        #[arg(long)]
        fresh_pool: bool,
        #[arg(long)]
        n_seeds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Ensembles of random forests with growing tree counts.
    Forest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_bootstrap: bool,
        /// Comma-separated tree counts.
        #[arg(long, value_delimiter = ',')]
        trees: Option<Vec<usize>>,
        #[arg(long)]
        n_seeds: Option<usize>,
    },
    /// Deep ensembles of MLPs at several width multipliers.
    WidthSweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated width multipliers.
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<f64>>,
        #[arg(long)]
        n_seeds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Implicit ensemble extraction from one wide model.
    Extract {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// JSON model dump (e.g. a previous run's model.json).
        #[arg(long)]
        model_path: Option<PathBuf>,
        /// Comma-separated diversity weights; the first is the main run.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long)]
        mask_steps: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Pooled per-tile logits evaluated as implicit ensembles.
    EvalLogits {
        #[command(flatten)]
        common: Common,
        /// PTLG logits file; omit to use a synthetic fixture.
        #[arg(long)]
        logits: Option<PathBuf>,
        /// PTLB labels file.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        temperature: Option<f64>,
        /// Comma-separated pool sizes g.
        #[arg(long, value_delimiter = ',')]
        pool_sizes: Option<Vec<usize>>,
    },
    /// Numerical check of the MI chain rule and across-MI decay.
    ChainRuleCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn launch<T: RunConfig>(
    name: &str,
    common: &Common,
    mut flags: Flags,
    execute: fn(T, RunDir) -> Result<RunManifest>,
) -> Result<(PathBuf, RunManifest)> {
    let file = common.config.as_deref().map(read_config_file).transpose()?;
    flags.set("seed", common.seed);
    let config: T = resolve(common.paper_scale, file, flags.into_map())?;
    let dir = common
        .out_dir
        .clone()
        .unwrap_or_else(|| Path::new("runs").join(format!("{name}-seed{}", config.master_seed())));
    let manifest = execute(config, RunDir::create(&dir)?)?;
    Ok((dir, manifest))
}

/// Runs the parsed command; returns the run directory and its manifest.
pub fn dispatch(command: Command) -> Result<(PathBuf, RunManifest)> {
    let mut f = Flags::default();
    match command {
        Command::ToyRegression {
            common,
            measure,
            fresh_pool,
            n_seeds,
            epochs,
        } => {
            f.set("measure", measure).set("n_seeds", n_seeds).set("epochs", epochs);
            f.set_true("fresh_pool", fresh_pool);
            launch("toy-regression", &common, f, toy::execute)
        }
        Command::Forest {
            common,
            no_bootstrap,
            trees,
            n_seeds,
        } => {
            f.set("tree_counts", trees).set("n_seeds", n_seeds);
            if no_bootstrap {
                f.set("bootstrap", Some(false));
            }
            launch("forest", &common, f, forest::execute)
        }
        Command::WidthSweep {
            common,
            data,
            widths,
            n_seeds,
            epochs,
        } => {
            data.flags(&mut f);
            f.set("widths", widths).set("n_seeds", n_seeds).set("epochs", epochs);
            launch("width-sweep", &common, f, width::execute)
        }
        Command::Extract {
            common,
            data,
            model_path,
            lambdas,
            mask_steps,
            epochs,
        } => {
            data.flags(&mut f);
            f.set("model_path", model_path)
                .set("lambdas", lambdas)
                .set("mask_steps", mask_steps)
                .set("epochs", epochs);
            launch("extract", &common, f, extract::execute)
        }
        Command::EvalLogits {
            common,
            logits,
            labels,
            temperature,
            pool_sizes,
        } => {
            f.set("logits_path", logits)
                .set("labels_path", labels)
                .set("temperature", temperature)
                .set("pool_sizes", pool_sizes);
            launch("eval-logits", &common, f, eval_logits::execute)
        }
        Command::ChainRuleCheck { common, trials } => {
            f.set("trials", trials);
            launch("chain-rule-check", &common, f, chain_rule::execute)
        }
    }
}
