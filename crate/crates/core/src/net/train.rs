use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{NfrError, Result};
use crate::net::{forward, Layer, LabeledDataset, Network};
use crate::sampling::{derive_seed, rng_from_seed};

const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 20, lr: 0.01, seed: 0 }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Plain SGD with batch size 1 on softmax cross-entropy of the logits.
/// Samples are visited in a seeded shuffled order each epoch.
pub fn train_sgd(net: &Network, data: &LabeledDataset, cfg: &TrainConfig) -> Result<Network> {
    if cfg.epochs == 0 {
        return Ok(net.clone());
    }
    if data.is_empty() {
        return Err(NfrError::InvalidArgument("training data is empty".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(NfrError::InvalidArgument(format!("lr must be positive, got {}", cfg.lr)));
    }
    if data.class_count() > net.class_count() {
        return Err(NfrError::ShapeMismatch {
            expected: format!("at most {} classes", net.class_count()),
            got: format!("{} classes in data", data.class_count()),
        });
    }
    let mut net = net.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, SHUFFLE_STREAM, epoch as u64));
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = data.get(i).expect("index in range");
            sgd_step(&mut net, x, y, cfg.lr)?;
        }
    }
    for l in net.weighted_layers() {
        let w = net.layer(l)?.weights().expect("weighted");
        if let Some(pos) = w.data().iter().position(|v| !v.is_finite()) {
            return Err(NfrError::NonFinite(pos));
        }
    }
    Ok(net)
}

fn sgd_step(net: &mut Network, x: &crate::tensor::Tensor, y: usize, lr: f64) -> Result<()> {
    let trace = forward(net, x)?;
    let mut g = softmax(trace.logits().data());
    g[y] -= 1.0;
    let mut grads: Vec<(usize, Vec<f64>)> = Vec::new();
    for l in (1..=net.depth()).rev() {
        match net.layer(l)? {
            Layer::Dense { .. } | Layer::Conv2d { .. } => {
                if let Some(mask) = trace.relu_mask(l) {
                    g.iter_mut().zip(mask.data()).for_each(|(v, m)| *v *= m);
                }
                let op = net.linear_op(l)?;
                grads.push((l, op.weight_grad(trace.activation(l - 1)?.data(), &g)));
                if l > 1 {
                    g = op.backward(&g);
                }
            }
            Layer::MaxPool2d { .. } => {
                let mut prev = vec![0.0; trace.activation(l - 1)?.numel()];
                for (&w, &v) in trace.pool_argmax(l).expect("pool trace").iter().zip(&g) {
                    prev[w] += v;
                }
                g = prev;
            }
            Layer::Flatten => {}
        }
    }
    for (l, grad) in grads {
        let w = net.weights_mut(l).expect("weighted");
        for (wi, gi) in w.data_mut().iter_mut().zip(&grad) {
            *wi -= lr * gi;
        }
    }
    Ok(())
}

/// Fraction of samples whose predicted class equals the label.
pub fn accuracy(net: &Network, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(NfrError::InvalidArgument("accuracy of an empty dataset".into()));
    }
    let mut hits = 0usize;
    for (x, &y) in data.inputs().iter().zip(data.labels()) {
        if forward(net, x)?.predicted_class() == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
