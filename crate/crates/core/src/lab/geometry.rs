use rand::Rng;
use serde::Serialize;

use crate::error::{NfrError, Result};
use crate::net::Network;
use crate::sampling::{derive_seed, rng_from_seed};
use crate::tensor::{dot_slices, norm2_slice};

use super::alignment::mean_std;

pub const MAX_PAIRS: usize = 10_000;
const PAIR_STREAM: u64 = 0x5041_4952;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LayerGeometry {
    pub layer: usize,
    pub mean_abs_cos: f64,
    pub norm_mean: f64,
    pub norm_std: f64,
    /// Number of neuron pairs the cosine statistic was computed over.
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGeometryStats {
    pub layers: Vec<LayerGeometry>,
}

fn abs_cos(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot_slices(a, b) / (na * nb)).abs().min(1.0)
}

/// Pairwise neuron-vector geometry of every weighted layer. Layers with more
/// than [`MAX_PAIRS`] pairs are subsampled with a generator seeded by `seed`
/// and the layer index. Zero vectors count as orthogonal to everything.
pub fn orthogonality_stats(net: &Network, seed: u64) -> Result<LayerGeometryStats> {
    let weighted = net.weighted_layers();
    if weighted.is_empty() {
        return Err(NfrError::InvalidNetwork("no weighted layer".into()));
    }
    let mut layers = Vec::with_capacity(weighted.len());
    for l in weighted {
        let vecs = net.layer(l)?.neuron_vectors();
        let norms: Vec<f64> = vecs.iter().map(|v| norm2_slice(v)).collect();
        let (norm_mean, norm_std) = mean_std(&norms);
        let n = vecs.len();
        let total = n * (n - 1) / 2;
        let mut sum = 0.0;
        let pairs = if total <= MAX_PAIRS {
            for i in 0..n {
                for j in i + 1..n {
                    sum += abs_cos(&vecs[i], norms[i], &vecs[j], norms[j]);
                }
            }
            total
        } else {
            let mut rng = rng_from_seed(derive_seed(seed, PAIR_STREAM, l as u64));
            for _ in 0..MAX_PAIRS {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                sum += abs_cos(&vecs[i], norms[i], &vecs[j], norms[j]);
            }
            MAX_PAIRS
        };
        let mean_abs_cos = if pairs == 0 { 0.0 } else { sum / pairs as f64 };
        layers.push(LayerGeometry { layer: l, mean_abs_cos, norm_mean, norm_std, pairs });
    }
    Ok(LayerGeometryStats { layers })
}
