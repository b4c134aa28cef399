//! Labeled datasets, their on-disk layout and two synthetic generators.
//!
//! A dataset directory holds one NFRT1 tensor per sample plus `labels.csv`
//! with columns `file,label`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NfrError, Result};
use crate::sampling::rng_from_seed;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec<Tensor>,
    labels: Vec<usize>,
    class_count: usize,
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    file: String,
    label: usize,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(NfrError::InvalidArgument(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some((i, &bad)) = labels.iter().enumerate().find(|(_, &y)| y >= class_count) {
            return Err(NfrError::OutOfRange(format!(
                "label {bad} of sample {i} (class count {class_count})"
            )));
        }
        if let Some(first) = inputs.first() {
            if let Some(i) = inputs.iter().position(|t| t.shape() != first.shape()) {
                return Err(NfrError::ShapeMismatch {
                    expected: format!("{}", first.shape()),
                    got: format!("{} at sample {i}", inputs[i].shape()),
                });
            }
        }
        Ok(LabeledDataset { inputs, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn get(&self, i: usize) -> Option<(&Tensor, usize)> {
        self.inputs.get(i).map(|x| (x, self.labels[i]))
    }

    /// Reshape every input, e.g. flat vectors to `(1, H, W)` images.
    pub fn reshaped(&self, shape: &Shape) -> Result<LabeledDataset> {
        let inputs = self
            .inputs
            .iter()
            .map(|x| x.reshape(shape.clone()))
            .collect::<Result<_>>()?;
        LabeledDataset::new(inputs, self.labels.clone(), self.class_count)
    }

    /// Write `sample_NNNNN.nfrt` files and `labels.csv` into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut writer = csv::Writer::from_path(dir.join("labels.csv"))?;
        for (i, (x, &label)) in self.inputs.iter().zip(&self.labels).enumerate() {
            let file = format!("sample_{i:05}.nfrt");
            x.save(dir.join(&file))?;
            writer.serialize(LabelRow { file, label })?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Read a dataset directory. The class count is `class_count` if given,
    /// otherwise one more than the largest label.
    pub fn load_dir(dir: impl AsRef<Path>, class_count: Option<usize>) -> Result<LabeledDataset> {
        let dir = dir.as_ref();
        let mut reader = csv::Reader::from_path(dir.join("labels.csv"))?;
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for row in reader.deserialize() {
            let row: LabelRow = row?;
            inputs.push(Tensor::load(dir.join(&row.file))?);
            labels.push(row.label);
        }
        let k = class_count.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        LabeledDataset::new(inputs, labels, k)
    }
}

/// Two-class `side × side` images, flattened: class 0 has a bright
/// horizontal bar, class 1 a vertical one, at a random position, with
/// additive Gaussian pixel noise of std `noise`. Background is 0, bar is 1.
pub fn synthetic_bars(count: usize, side: usize, noise: f64, seed: u64) -> Result<LabeledDataset> {
    if side < 2 {
        return Err(NfrError::InvalidArgument(format!("bar images need side >= 2, got {side}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut inputs = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % 2;
        let pos = rng.random_range(0..side);
        let mut img = vec![0.0; side * side];
        for t in 0..side {
            let idx = if label == 0 { pos * side + t } else { t * side + pos };
            img[idx] = 1.0;
        }
        for v in img.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += noise * z;
        }
        inputs.push(Tensor::from_vec(img)?);
        labels.push(label);
    }
    LabeledDataset::new(inputs, labels, 2)
}

/// Two Gaussian blobs in `dim` dimensions centred at `±separation/2` along
/// the first axis, unit variance elsewhere.
pub fn synthetic_blobs(count: usize, dim: usize, separation: f64, seed: u64) -> Result<LabeledDataset> {
    if dim == 0 {
        return Err(NfrError::InvalidArgument("blob dimension must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut inputs = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % 2;
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        v[0] += if label == 0 { -separation / 2.0 } else { separation / 2.0 };
        inputs.push(Tensor::from_vec(v)?);
        labels.push(label);
    }
    LabeledDataset::new(inputs, labels, 2)
}
