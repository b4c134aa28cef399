use rayon::prelude::*;
use serde::Serialize;

use crate::error::{NfrError, Result};
use crate::net::{forward, ForwardTrace, Network};
use crate::rules::{
    apply_bottom, attribute_traced, bottom, propagate, seed_relevance, Attribution, Relevance, RelevanceForm,
    RuleKind, RuleSpec,
};
use crate::tensor::Tensor;

use super::alignment::{alignment, mean_std};

/// A modified rule, or direct substitution of the activation as relevance.
#[derive(Clone, Debug, PartialEq)]
pub enum CurveRule {
    Rule(RuleSpec),
    Activation,
}

impl CurveRule {
    pub fn label(&self) -> String {
        match self {
            CurveRule::Rule(r) => r.label(),
            CurveRule::Activation => "activation".into(),
        }
    }

    /// Deepest substitution depth, `L`. For the activation this substitutes
    /// `r_0 := x`.
    pub fn max_depth(&self, net: &Network) -> usize {
        net.depth()
    }
}

/// Which logit to explain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassMode {
    Predicted,
    Fixed(usize),
}

impl ClassMode {
    pub fn resolve(self, trace: &ForwardTrace) -> usize {
        match self {
            ClassMode::Predicted => trace.predicted_class(),
            ClassMode::Fixed(k) => k,
        }
    }
}

fn grad() -> RuleSpec {
    RuleSpec::new(RuleKind::Grad)
}

/// Input-layer relevance when the top `n` layers use `rule` and the rest use grad.
pub fn cascade_raw(net: &Network, trace: &ForwardTrace, rule: &RuleSpec, n: usize, k: usize) -> Result<Relevance> {
    let depth = net.depth();
    if n > depth {
        return Err(NfrError::OutOfRange(format!("substitution depth {n} (network depth {depth})")));
    }
    if n == 0 {
        return propagate(net, trace, &grad(), seed_relevance(trace, &grad(), k)?, 0);
    }
    let top = propagate(net, trace, rule, seed_relevance(trace, rule, k)?, depth - n)?;
    if n == depth {
        return Ok(top);
    }
    propagate(net, trace, &grad(), top.to_gradient_form(trace)?, 0)
}

/// Top `n` layers backstep with `rule`, the remaining ones with grad, then
/// `rule`'s bottom process. `n = 0` is the gradient, `n = L` the rule itself.
pub fn cascade_substitute(net: &Network, trace: &ForwardTrace, rule: &RuleSpec, n: usize, k: usize) -> Result<Attribution> {
    if n == net.depth() {
        return attribute_traced(net, trace, rule, k);
    }
    let r0 = cascade_raw(net, trace, rule, n, k)?;
    apply_bottom(rule, &r0, trace.input(), k)
}

/// Input-layer relevance after setting `r_l := A_l` and propagating with `rule_below`.
pub fn activation_raw(net: &Network, trace: &ForwardTrace, layer_l: usize, rule_below: &RuleSpec) -> Result<Relevance> {
    if layer_l > net.depth() {
        return Err(NfrError::OutOfRange(format!("layer {layer_l} (network depth {})", net.depth())));
    }
    let start = Relevance::new(layer_l, trace.activation(layer_l)?.clone(), RelevanceForm::Gradient);
    propagate(net, trace, rule_below, start, 0)
}

pub fn activation_substitute(
    net: &Network,
    trace: &ForwardTrace,
    layer_l: usize,
    rule_below: &RuleSpec,
    k: usize,
) -> Result<Attribution> {
    let r0 = activation_raw(net, trace, layer_l, rule_below)?;
    apply_bottom(rule_below, &r0, trace.input(), k)
}

/// The map whose alignment a curve point measures: raw gradient-form `r_0`,
/// or the displayed attribution when `with_bottom` is set.
pub fn curve_map(
    net: &Network,
    trace: &ForwardTrace,
    rule: &CurveRule,
    depth: usize,
    k: usize,
    with_bottom: bool,
) -> Result<Tensor> {
    let (r0, bottom_rule) = match rule {
        CurveRule::Rule(spec) => {
            if depth == net.depth() && with_bottom {
                return Ok(attribute_traced(net, trace, spec, k)?.values);
            }
            (cascade_raw(net, trace, spec, depth, k)?, spec.clone())
        }
        CurveRule::Activation => {
            if depth > rule.max_depth(net) {
                return Err(NfrError::OutOfRange(format!("activation depth {depth}")));
            }
            let r0 = if depth == 0 {
                propagate(net, trace, &grad(), seed_relevance(trace, &grad(), k)?, 0)?
            } else {
                activation_raw(net, trace, net.depth() - depth, &grad())?
            };
            (r0, grad())
        }
    };
    if with_bottom {
        bottom(&bottom_rule, &r0, trace.input())
    } else {
        Ok(r0.to_gradient_form(trace)?.into_values())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub depth: usize,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeCurve {
    pub label: String,
    pub points: Vec<CurvePoint>,
}

impl CascadeCurve {
    pub fn point(&self, depth: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.depth == depth)
    }

    pub fn last(&self) -> &CurvePoint {
        self.points.last().expect("curves have at least one point")
    }
}

/// Depths `0..=max_depth` for `rule` on `net`.
pub fn full_depths(net: &Network, rule: &CurveRule) -> Vec<usize> {
    (0..=rule.max_depth(net)).collect()
}

/// Mean/std of input alignment per substitution depth over `samples`.
/// Samples whose map is identically zero at some depth are left out of that
/// depth's statistics.
pub fn cascade_curve(
    net: &Network,
    samples: &[Tensor],
    rule: &CurveRule,
    k_mode: ClassMode,
    depths: &[usize],
    with_bottom: bool,
) -> Result<CascadeCurve> {
    let pairs: Vec<(&Network, &Tensor)> = samples.iter().map(|x| (net, x)).collect();
    curve_over(&pairs, rule, k_mode, depths, with_bottom)
}

/// Like [`cascade_curve`], pooling alignments over several `(net, input)` pairs.
pub fn curve_over(
    pairs: &[(&Network, &Tensor)],
    rule: &CurveRule,
    k_mode: ClassMode,
    depths: &[usize],
    with_bottom: bool,
) -> Result<CascadeCurve> {
    if pairs.is_empty() {
        return Err(NfrError::InvalidArgument("cascade curve needs at least one sample".into()));
    }
    if depths.is_empty() || depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(NfrError::InvalidArgument(format!("depths must be nonempty and strictly increasing, got {depths:?}")));
    }
    let per_pair: Vec<Vec<Option<f64>>> = pairs
        .par_iter()
        .map(|(net, x)| -> Result<Vec<Option<f64>>> {
            let trace = forward(net, x)?;
            let k = k_mode.resolve(&trace);
            depths
                .iter()
                .map(|&n| {
                    let map = curve_map(net, &trace, rule, n, k, with_bottom)?;
                    match alignment(&map, x) {
                        Ok(a) => Ok(Some(a.value)),
                        Err(NfrError::UndefinedAlignment(_)) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(depths.len());
    for (d, &depth) in depths.iter().enumerate() {
        let values: Vec<f64> = per_pair.iter().filter_map(|v| v[d]).collect();
        if values.is_empty() {
            return Err(NfrError::UndefinedAlignment("every attribution at this depth"));
        }
        let (mean, std) = mean_std(&values);
        points.push(CurvePoint { depth, mean, std, trials: values.len() });
    }
    Ok(CascadeCurve { label: rule.label(), points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::build_random_mlp;
    use crate::rules::{attribute, backprop};
    use crate::sampling::{standard_normal, DistKind, DistSpec};
    use crate::tensor::Shape;

    fn setup(seed: u64) -> (Network, Tensor) {
        let net = build_random_mlp(&[8, 12, 10, 3], &DistSpec::new(DistKind::Gaussian, 1.0, seed).unwrap()).unwrap();
        (net, standard_normal(&Shape::vector(8).unwrap(), seed + 1))
    }

    #[test]
    fn endpoints_match_the_pure_pipelines() {
        let (net, x) = setup(1);
        let trace = forward(&net, &x).unwrap();
        for kind in RuleKind::ALL {
            let rule = RuleSpec::new(kind);
            let top = cascade_substitute(&net, &trace, &rule, 3, 1).unwrap();
            assert_eq!(top, attribute(&net, &x, &rule, 1).unwrap());
            let bottom_only = cascade_substitute(&net, &trace, &rule, 0, 1).unwrap();
            let g = backprop(&net, &trace, &RuleSpec::new(RuleKind::Grad), 1, 0).unwrap();
            assert_eq!(bottom_only, apply_bottom(&rule, &g, &x, 1).unwrap());
        }
        assert!(cascade_substitute(&net, &trace, &RuleSpec::new(RuleKind::Gbp), 4, 0).is_err());
    }

    #[test]
    fn intermediate_depth_switches_rules_at_the_boundary() {
        let (net, x) = setup(2);
        let trace = forward(&net, &x).unwrap();
        let gbp = RuleSpec::new(RuleKind::Gbp);
        let r0 = cascade_raw(&net, &trace, &gbp, 2, 0).unwrap();
        let r1 = backprop(&net, &trace, &gbp, 0, 1).unwrap();
        let manual = propagate(&net, &trace, &RuleSpec::new(RuleKind::Grad), r1, 0).unwrap();
        assert_eq!(r0, manual);
    }

    #[test]
    fn activation_substitution_one_hidden_layer() {
        let net = build_random_mlp(&[5, 7, 2], &DistSpec::new(DistKind::Gaussian, 1.0, 4).unwrap()).unwrap();
        let x = standard_normal(&Shape::vector(5).unwrap(), 9);
        let trace = forward(&net, &x).unwrap();
        let att = activation_substitute(&net, &trace, 1, &RuleSpec::new(RuleKind::Grad), 0).unwrap();
        let a = trace.activation(1).unwrap().data();
        let mut expected = vec![0.0; 5];
        for (j, w) in net.layer(1).unwrap().neuron_vectors().iter().enumerate() {
            for i in 0..5 {
                expected[i] += a[j] * w[i];
            }
        }
        for (got, want) in att.values.data().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12);
        }
        let at_input = activation_substitute(&net, &trace, 0, &RuleSpec::new(RuleKind::Grad), 0).unwrap();
        assert_eq!(at_input.values, x);
        assert!((alignment(&at_input.values, &x).unwrap().value - 1.0).abs() < 1e-15);
        assert!(activation_substitute(&net, &trace, 3, &RuleSpec::new(RuleKind::Grad), 0).is_err());
    }

    #[test]
    fn single_sample_curve_has_zero_std() {
        let (net, x) = setup(3);
        let rule = CurveRule::Rule(RuleSpec::new(RuleKind::Gbp));
        let curve = cascade_curve(&net, &[x], &rule, ClassMode::Predicted, &full_depths(&net, &rule), false).unwrap();
        assert_eq!(curve.points.len(), 4);
        assert!(curve.points.iter().all(|p| p.std == 0.0 && p.trials <= 1));
        assert!(cascade_curve(&net, &[], &rule, ClassMode::Predicted, &[0], false).is_err());
        let (_, x) = setup(3);
        assert!(cascade_curve(&net, &[x], &rule, ClassMode::Predicted, &[1, 1], false).is_err());
    }

    #[test]
    fn activation_curve_endpoints() {
        let (net, x) = setup(5);
        let trace = forward(&net, &x).unwrap();
        let k = trace.predicted_class();
        let grad_map = curve_map(&net, &trace, &CurveRule::Activation, 0, k, false).unwrap();
        let g = backprop(&net, &trace, &RuleSpec::new(RuleKind::Grad), k, 0).unwrap();
        assert_eq!(&grad_map, g.values());
        assert_eq!(CurveRule::Activation.max_depth(&net), 3);
        assert_eq!(curve_map(&net, &trace, &CurveRule::Activation, 3, k, false).unwrap(), x);
        assert!(curve_map(&net, &trace, &CurveRule::Activation, 4, k, false).is_err());
    }
}
