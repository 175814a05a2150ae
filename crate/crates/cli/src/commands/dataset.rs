//! Classification data for the width sweep and extraction: IDX files or the
//! synthetic Gaussian fallback.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use eoe_core::data::{load_idx, synth_gaussians, synth_uniform_noise, ClassificationSet};
use eoe_core::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Use synthetic Gaussians even when IDX paths are set.
    pub synthetic: bool,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub ood_images: Option<PathBuf>,
    pub ood_labels: Option<PathBuf>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_ood: usize,
    pub class_count: usize,
    pub input_dim: usize,
    pub separation: f64,
    /// Probability of replacing a training label by a uniformly random class.
    /// Not part of the original experiments; a crude aleatoric stand-in.
    pub label_noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            synthetic: true,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            ood_images: None,
            ood_labels: None,
            n_train: 4000,
            n_test: 1000,
            n_ood: 1000,
            class_count: 10,
            input_dim: 16,
            separation: 3.0,
            label_noise: 0.0,
        }
    }
}

pub struct Splits {
    pub train: ClassificationSet,
    pub test: ClassificationSet,
    pub ood: ClassificationSet,
}

fn idx_pair(images: &Option<PathBuf>, labels: &Option<PathBuf>, what: &str) -> Result<ClassificationSet> {
    match (images, labels) {
        (Some(i), Some(l)) => load_idx(i, l).with_context(|| format!("loading {what} IDX files")),
        _ => bail!("{what} needs both --{what}-images and --{what}-labels (or pass --synthetic)"),
    }
}

impl DatasetConfig {
    /// Loads or generates train/test/OoD splits; data streams derive from `master`.
    pub fn load(&self, master: u64) -> Result<Splits> {
        let data_seed = seed::split(master, seed::stream::DATA);
        let (train, test, ood) = if self.synthetic {
            let per_train = (self.n_train / self.class_count).max(1);
            let per_test = (self.n_test / self.class_count).max(1);
            (
                synth_gaussians(
                    per_train,
                    self.class_count,
                    self.input_dim,
                    self.separation,
                    seed::split(data_seed, 1),
                )?,
                synth_gaussians(
                    per_test,
                    self.class_count,
                    self.input_dim,
                    self.separation,
                    seed::split(data_seed, 2),
                )?,
                synth_uniform_noise(self.n_ood, self.input_dim, self.class_count, seed::split(data_seed, 3))?,
            )
        } else {
            let train = idx_pair(&self.train_images, &self.train_labels, "train")?.head(self.n_train);
            let test = idx_pair(&self.test_images, &self.test_labels, "test")?.head(self.n_test);
            let ood = if self.ood_images.is_some() || self.ood_labels.is_some() {
                idx_pair(&self.ood_images, &self.ood_labels, "ood")?.head(self.n_ood)
            } else {
                synth_uniform_noise(self.n_ood, train.dim(), train.class_count, seed::split(data_seed, 3))?
            };
            if test.dim() != train.dim() || ood.dim() != train.dim() {
                bail!("train, test and OoD inputs must share a dimension");
            }
            (train, test, ood)
        };
        let train = if self.label_noise > 0.0 {
            train.with_label_noise(self.label_noise, seed::split(data_seed, 4))?
        } else {
            train
        };
        Ok(Splits { train, test, ood })
    }
}
