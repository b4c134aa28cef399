use serde::{Deserialize, Serialize};

use crate::error::{NfrError, Result};
use crate::net::{ForwardTrace, Network};
use crate::rules::{apply_bottom, backprop, propagate, Attribution, Relevance, RuleSpec};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSide {
    Max,
    Min,
}

impl SplitSide {
    pub fn name(self) -> &'static str {
        match self {
            SplitSide::Max => "max",
            SplitSide::Min => "min",
        }
    }
}

/// Positions of the `ceil(fraction · m)` largest (or smallest) of the `m`
/// nonzero entries of `a`; ties go to the lower index.
pub fn split_positions(a: &[f64], fraction: f64, which: SplitSide) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(NfrError::InvalidArgument(format!("split fraction must be in (0, 1], got {fraction}")));
    }
    let mut idx: Vec<usize> = (0..a.len()).filter(|&i| a[i] != 0.0).collect();
    if idx.is_empty() {
        return Err(NfrError::InvalidArgument("nothing to split: every entry is zero".into()));
    }
    match which {
        SplitSide::Max => idx.sort_by(|&i, &j| a[j].total_cmp(&a[i]).then(i.cmp(&j))),
        SplitSide::Min => idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(i.cmp(&j))),
    }
    let keep = ((fraction * idx.len() as f64).ceil() as usize).clamp(1, idx.len());
    idx.truncate(keep);
    idx.sort_unstable();
    Ok(idx)
}

/// Run `rule` down to `layer_l`, keep relevance only at the selected
/// activation positions, continue to the input and apply the bottom process.
pub fn activation_split_attrib(
    net: &Network,
    trace: &ForwardTrace,
    layer_l: usize,
    fraction: f64,
    which: SplitSide,
    rule: &RuleSpec,
    k: usize,
) -> Result<Attribution> {
    if layer_l == 0 || layer_l >= net.depth() {
        return Err(NfrError::OutOfRange(format!(
            "split layer {layer_l} (hidden layers are 1..{})",
            net.depth() - 1
        )));
    }
    let a = trace.activation(layer_l)?;
    if a.is_zero() {
        return Err(NfrError::EmptySplit(layer_l));
    }
    let keep = split_positions(a.data(), fraction, which)?;
    let r = backprop(net, trace, rule, k, layer_l)?;
    let mut masked = vec![0.0; a.numel()];
    for &i in &keep {
        masked[i] = r.values().data()[i];
    }
    let r = Relevance::new(layer_l, Tensor::new(a.shape().clone(), masked)?, r.form());
    let r0 = propagate(net, trace, rule, r, 0)?;
    apply_bottom(rule, &r0, trace.input(), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_random_mlp, forward};
    use crate::rules::{attribute_traced, RuleKind};
    use crate::sampling::{standard_normal, DistKind, DistSpec};
    use crate::tensor::Shape;

    #[test]
    fn positions_pick_extremes_among_nonzero() {
        let a = [0.0, 3.0, 1.0, 0.0, 2.0, 2.0, 5.0];
        assert_eq!(split_positions(&a, 0.4, SplitSide::Max).unwrap(), vec![1, 6]);
        assert_eq!(split_positions(&a, 0.4, SplitSide::Min).unwrap(), vec![2, 4]);
        assert_eq!(split_positions(&a, 0.01, SplitSide::Max).unwrap(), vec![6]);
        assert_eq!(split_positions(&a, 1.0, SplitSide::Min).unwrap(), vec![1, 2, 4, 5, 6]);
        assert!(split_positions(&[0.0, 0.0], 0.5, SplitSide::Max).is_err());
        assert!(split_positions(&a, 0.0, SplitSide::Max).is_err());
        assert!(split_positions(&a, 1.5, SplitSide::Max).is_err());
    }

    #[test]
    fn full_fraction_equals_unsplit() {
        let net = build_random_mlp(&[6, 12, 12, 3], &DistSpec::new(DistKind::Gaussian, 1.0, 8).unwrap()).unwrap();
        let x = standard_normal(&Shape::vector(6).unwrap(), 1);
        let trace = forward(&net, &x).unwrap();
        for kind in [RuleKind::Gbp, RuleKind::Zplus, RuleKind::Grad] {
            let rule = RuleSpec::new(kind);
            for l in [1, 2] {
                let split = activation_split_attrib(&net, &trace, l, 1.0, SplitSide::Max, &rule, 0).unwrap();
                let full = attribute_traced(&net, &trace, &rule, 0).unwrap();
                assert_eq!(split.values, full.values);
            }
        }
        let rule = RuleSpec::new(RuleKind::Gbp);
        assert!(activation_split_attrib(&net, &trace, 3, 0.5, SplitSide::Max, &rule, 0).is_err());
        assert!(activation_split_attrib(&net, &trace, 0, 0.5, SplitSide::Max, &rule, 0).is_err());
    }
}
