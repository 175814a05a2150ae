//! Toy regression data, IDX ingestion, and synthetic classification sets.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Targets;
use crate::seed;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSet {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub noise_sigma: f64,
}

impl RegressionSet {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Inputs as an `N × 1` matrix.
    pub fn inputs(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.xs.len(), 1), self.xs.clone()).expect("column shape")
    }

    pub fn targets(&self) -> Targets {
        Targets::Values(Array2::from_shape_vec((self.ys.len(), 1), self.ys.clone()).expect("column shape"))
    }
}

/// `y = sin(x) + N(0, σ²)` on `n_points` uniform draws from `x_range`.
pub fn synth_sine(n_points: usize, x_range: (f64, f64), noise_sigma: f64, seed: u64) -> Result<RegressionSet> {
    if n_points == 0 {
        return Err(Error::Config("n_points must be at least 1".into()));
    }
    let (lo, hi) = x_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!("invalid x range [{lo}, {hi}]")));
    }
    let noise =
        Normal::new(0.0, noise_sigma).map_err(|_| Error::Config(format!("invalid noise sigma {noise_sigma}")))?;
    let mut x_rng = seed::rng(seed::split(seed, seed::stream::DATA));
    let mut n_rng = seed::rng(seed::split(seed, seed::stream::NOISE));
    let xs: Vec<f64> = (0..n_points).map(|_| x_rng.random_range(lo..hi)).collect();
    let ys = xs
        .iter()
        .map(|x| {
            let eps = noise.sample(&mut n_rng);
            x.sin() + eps
        })
        .collect();
    Ok(RegressionSet { xs, ys, noise_sigma })
}

/// Evenly spaced evaluation points including both ends.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationSet {
    /// `N × D`, values in [0, 1].
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Image side lengths when loaded from IDX.
    pub image_dims: Option<(usize, usize)>,
}

impl ClassificationSet {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let set = ClassificationSet {
            inputs,
            labels,
            class_count,
            image_dims: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Input("classification set is empty".into()));
        }
        if self.inputs.nrows() != self.labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} labels",
                self.inputs.nrows(),
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::Input(format!("label {bad} >= class count {}", self.class_count)));
        }
        if self.inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite input".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn targets(&self) -> Targets {
        Targets::Classes(self.labels.clone())
    }

    /// The first `n` examples (all of them if `n` exceeds the size).
    pub fn head(&self, n: usize) -> ClassificationSet {
        let n = n.min(self.len());
        ClassificationSet {
            inputs: self.inputs.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            class_count: self.class_count,
            image_dims: self.image_dims,
        }
    }

    pub fn select(&self, indices: &[usize]) -> ClassificationSet {
        ClassificationSet {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            image_dims: self.image_dims,
        }
    }

    /// Replaces each label, with probability `p`, by a uniform draw over all classes.
    pub fn with_label_noise(&self, p: f64, seed: u64) -> Result<ClassificationSet> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("label noise {p} outside [0, 1]")));
        }
        let mut rng = seed::rng(seed::split(seed, seed::stream::NOISE));
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                if rng.random::<f64>() < p {
                    rng.random_range(0..self.class_count)
                } else {
                    l
                }
            })
            .collect();
        Ok(ClassificationSet { labels, ..self.clone() })
    }
}

fn read_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(field, "file truncated"))
}

/// Parses IDX image bytes into `(N, rows, cols, pixels scaled by 1/255)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let magic = read_u32(bytes, 0, "images.magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            "images.magic",
            format!("expected {IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let n = read_u32(bytes, 4, "images.count")? as usize;
    let rows = read_u32(bytes, 8, "images.rows")? as usize;
    let cols = read_u32(bytes, 12, "images.cols")? as usize;
    let len = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format("images.count", "dimensions overflow"))?;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(Error::format(
            "images.pixels",
            format!("file truncated: expected {len} pixel bytes, found {}", body.len()),
        ));
    }
    if body.len() > len {
        return Err(Error::format(
            "images.pixels",
            format!("{} trailing bytes", body.len() - len),
        ));
    }
    Ok((n, rows, cols, body.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, "labels.magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            "labels.magic",
            format!("expected {LABELS_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let n = read_u32(bytes, 4, "labels.count")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::format(
            "labels.values",
            format!("file truncated: expected {n} labels, found {}", body.len()),
        ));
    }
    if body.len() > n {
        return Err(Error::format(
            "labels.values",
            format!("{} trailing bytes", body.len() - n),
        ));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image/label pair. The class count is one more than the
/// largest label, but never below 10 (the digit alphabet).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ClassificationSet> {
    let (n, rows, cols, pixels) = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::format(
            "labels.count",
            format!("count mismatch: {n} images but {} labels", labels.len()),
        ));
    }
    let inputs = Array2::from_shape_vec((n, rows * cols), pixels).expect("checked length");
    let class_count = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    Ok(ClassificationSet {
        inputs,
        labels,
        class_count,
        image_dims: Some((rows, cols)),
    })
}

/// Serializes to IDX bytes. Pixels are rounded from `[0, 1]` back to bytes.
pub fn idx_bytes(set: &ClassificationSet) -> Result<(Vec<u8>, Vec<u8>)> {
    let (rows, cols) = set.image_dims.unwrap_or((1, set.dim()));
    if rows * cols != set.dim() {
        return Err(Error::Shape(format!(
            "image dims {rows}x{cols} do not match width {}",
            set.dim()
        )));
    }
    if let Some(&l) = set.labels.iter().find(|&&l| l > 255) {
        return Err(Error::Input(format!("label {l} does not fit in a byte")));
    }
    let n = set.len() as u32;
    let mut images = Vec::with_capacity(16 + set.inputs.len());
    for v in [IMAGES_MAGIC, n, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(set.inputs.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + set.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    labels.extend(set.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

pub fn write_idx(set: &ClassificationSet, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (images, labels) = idx_bytes(set)?;
    fs::File::create(images_path)?.write_all(&images)?;
    fs::File::create(labels_path)?.write_all(&labels)?;
    Ok(())
}

/// Fixed affine map into [0, 1] shared by every synthetic set.
fn squash(v: f64, separation: f64) -> f64 {
    ((v + 4.0) / (separation + 8.0)).clamp(0.0, 1.0)
}

/// Isotropic unit Gaussians centred at `separation · e_(c mod dim)`, mapped
/// into [0, 1]. Examples are interleaved by class.
pub fn synth_gaussians(
    n_per_class: usize,
    class_count: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<ClassificationSet> {
    if class_count < 2 {
        return Err(Error::Config("class_count must be at least 2".into()));
    }
    if n_per_class == 0 || dim == 0 {
        return Err(Error::Config("n_per_class and dim must be positive".into()));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::Config(format!("invalid separation {separation}")));
    }
    let mut rng = seed::rng(seed::split(seed, seed::stream::DATA));
    let n = n_per_class * class_count;
    let mut inputs = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % class_count;
        for (d, v) in inputs.row_mut(i).iter_mut().enumerate() {
            let centre = if d == c % dim { separation } else { 0.0 };
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = squash(centre + z, separation);
        }
        labels.push(c);
    }
    ClassificationSet::new(inputs, labels, class_count)
}

/// Uniform noise over `[0, 1]^dim`, labelled 0 (labels are meaningless).
pub fn synth_uniform_noise(n: usize, dim: usize, class_count: usize, seed: u64) -> Result<ClassificationSet> {
    if n == 0 || dim == 0 {
        return Err(Error::Config("n and dim must be positive".into()));
    }
    let mut rng = seed::rng(seed::split(seed, seed::stream::DATA));
    let inputs = Array2::from_shape_simple_fn((n, dim), || rng.random::<f64>());
    ClassificationSet::new(inputs, vec![0; n], class_count.max(1))
}
