use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NfrError, Result};
use crate::net::{forward, randomize_weights, remove_weights, Network};
use crate::rules::{attribute_traced, RuleSpec};
use crate::sampling::DistSpec;
use crate::tensor::Tensor;

use super::alignment::{alignment, mean_std};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    Randomize { dist: DistSpec },
    Remove { keep_fraction: f64 },
}

impl Perturbation {
    pub fn name(&self) -> &'static str {
        match self {
            Perturbation::Randomize { .. } => "randomize",
            Perturbation::Remove { .. } => "remove",
        }
    }

    pub fn apply(&self, net: &Network, layer_indices: &[usize]) -> Result<Network> {
        match self {
            Perturbation::Randomize { dist } => randomize_weights(net, layer_indices, dist),
            Perturbation::Remove { keep_fraction } => remove_weights(net, layer_indices, *keep_fraction),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SanityRecord {
    pub sample: usize,
    pub before: f64,
    pub after: f64,
    /// `after − before`.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SanityTable {
    pub mode: String,
    pub records: Vec<SanityRecord>,
}

impl SanityTable {
    pub fn mean_before(&self) -> f64 {
        mean_std(&self.records.iter().map(|r| r.before).collect::<Vec<_>>()).0
    }

    pub fn mean_after(&self) -> f64 {
        mean_std(&self.records.iter().map(|r| r.after).collect::<Vec<_>>()).0
    }

    /// Mean of `before − after`.
    pub fn mean_drop(&self) -> f64 {
        -mean_std(&self.records.iter().map(|r| r.delta).collect::<Vec<_>>()).0
    }

    pub fn mean_abs_delta(&self) -> f64 {
        mean_std(&self.records.iter().map(|r| r.delta.abs()).collect::<Vec<_>>()).0
    }
}

fn alignment_or_zero(r: &Tensor, x: &Tensor) -> Result<f64> {
    match alignment(r, x) {
        Ok(a) => Ok(a.value),
        Err(NfrError::UndefinedAlignment(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Input alignment of `rule`'s attribution before and after perturbing
/// `layer_indices`. Both attributions explain the class predicted by the
/// unperturbed net; a vanished attribution scores 0.
pub fn sanity_experiment(
    net: &Network,
    samples: &[Tensor],
    rule: &RuleSpec,
    layer_indices: &[usize],
    perturbation: &Perturbation,
) -> Result<SanityTable> {
    let perturbed = perturbation.apply(net, layer_indices)?;
    let records = samples
        .par_iter()
        .enumerate()
        .map(|(i, x)| -> Result<SanityRecord> {
            let trace = forward(net, x)?;
            let k = trace.predicted_class();
            let before = alignment_or_zero(&attribute_traced(net, &trace, rule, k)?.values, x)?;
            let after_trace = forward(&perturbed, x)?;
            let after = alignment_or_zero(&attribute_traced(&perturbed, &after_trace, rule, k)?.values, x)?;
            Ok(SanityRecord { sample: i, before, after, delta: after - before })
        })
        .collect::<Result<_>>()?;
    Ok(SanityTable { mode: perturbation.name().into(), records })
}
