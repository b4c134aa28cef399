//! The modified-backpropagation engine.
//!
//! Every rule is a sequence of per-layer backsteps from the logits down to
//! some layer, followed by a bottom process that turns the input-layer
//! relevance into an attribution map.

mod backstep;
mod nfr;
mod spec;

use crate::error::{NfrError, Result};
use crate::net::{forward, ForwardTrace, Network};
use crate::tensor::Tensor;

pub use backstep::{
    backstep_alphabeta, backstep_gbp, backstep_grad, backstep_rectgrad, backstep_structural, backstep_z,
    backstep_zb, backstep_zplus, nearest_rank_percentile, BackstepContext, Relevance, RelevanceForm,
};
pub use nfr::{nfr_check, NfrLayerRecord, NfrReport};
pub use spec::{RectThreshold, RuleKind, RuleSpec};

/// How the top relevance was seeded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedKind {
    /// `r_L = e_k`.
    UnitVector,
    /// `r_L = f_k e_k`.
    LogitValue,
}

impl SeedKind {
    pub fn name(self) -> &'static str {
        match self {
            SeedKind::UnitVector => "unit_vector",
            SeedKind::LogitValue => "logit_value",
        }
    }
}

/// Input-shaped attribution map `R`.
#[derive(Clone, Debug, PartialEq)]
pub struct Attribution {
    pub values: Tensor,
    pub rule: RuleSpec,
    pub target_class: usize,
    pub seed: SeedKind,
    /// Relevance lost to all-zero z-denominators on the way down.
    pub dropped: f64,
}

/// Per-layer side information produced while propagating.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub layer_index: usize,
    pub tau: Option<f64>,
    pub gamma: Option<Vec<f64>>,
}

pub fn seed_kind(rule: &RuleSpec) -> SeedKind {
    if rule.kind.is_z_family() {
        SeedKind::LogitValue
    } else {
        SeedKind::UnitVector
    }
}

fn check_class(trace: &ForwardTrace, k: usize) -> Result<()> {
    let classes = trace.logits().numel();
    if k >= classes {
        return Err(NfrError::OutOfRange(format!("class {k} (network has {classes} classes)")));
    }
    Ok(())
}

/// Top relevance `r_L` for class `k`.
pub fn seed_relevance(trace: &ForwardTrace, rule: &RuleSpec, k: usize) -> Result<Relevance> {
    check_class(trace, k)?;
    let logits = trace.logits();
    let mut values = vec![0.0; logits.numel()];
    let form = match seed_kind(rule) {
        SeedKind::UnitVector => {
            values[k] = 1.0;
            RelevanceForm::Gradient
        }
        SeedKind::LogitValue => {
            values[k] = logits.data()[k];
            RelevanceForm::Ratio
        }
    };
    Ok(Relevance::new(trace.depth(), Tensor::new(logits.shape().clone(), values)?, form))
}

fn native_form(rule: &RuleSpec) -> RelevanceForm {
    if rule.kind.is_z_family() {
        RelevanceForm::Ratio
    } else {
        RelevanceForm::Gradient
    }
}

/// One backstep of `rule` at layer `r.layer_index()`, converting `r` to the
/// rule's native form first.
pub fn rule_step(net: &Network, trace: &ForwardTrace, rule: &RuleSpec, r: &Relevance) -> Result<(Relevance, StepRecord)> {
    let l = r.layer_index();
    if l == 0 || l > net.depth() {
        return Err(NfrError::OutOfRange(format!("cannot step below layer {l}")));
    }
    let mut record = StepRecord { layer_index: l, tau: None, gamma: None };
    if !net.layer(l)?.is_weighted() {
        return Ok((backstep_structural(net, trace, r)?, record));
    }
    let r = r.to_form(native_form(rule), trace)?;
    let mut ctx = BackstepContext::new(net, trace, l)?;
    let out = match rule.kind {
        RuleKind::Grad | RuleKind::GradInput => backstep_grad(&ctx, &r)?,
        RuleKind::Gbp if ctx.has_relu() => backstep_gbp(&ctx, &r)?,
        RuleKind::RectGrad if ctx.has_relu() => backstep_rectgrad(&mut ctx, &r, rule.threshold())?,
        RuleKind::Gbp | RuleKind::RectGrad => backstep_grad(&ctx, &r)?,
        RuleKind::LrpZ => backstep_z(&ctx, &r, rule.epsilon)?,
        RuleKind::LrpAlphabeta => backstep_alphabeta(&ctx, &r, rule.alpha, rule.beta, rule.epsilon)?,
        RuleKind::Dtd if l == 1 => {
            let (lo, hi) = rule.input_bounds(trace.input())?;
            backstep_zb(&ctx, &r, &lo, &hi, rule.epsilon)?
        }
        RuleKind::Zplus | RuleKind::Dtd => backstep_zplus(&mut ctx, &r, rule.epsilon)?,
    };
    record.tau = ctx.tau_value;
    record.gamma = ctx.gamma.take();
    Ok((out, record))
}

/// Propagate `r` with `rule` down to `stop_layer`, returning every
/// intermediate relevance (first element is `r` itself).
pub fn propagate_path(
    net: &Network,
    trace: &ForwardTrace,
    rule: &RuleSpec,
    r: Relevance,
    stop_layer: usize,
) -> Result<(Vec<Relevance>, Vec<StepRecord>)> {
    rule.validate()?;
    if stop_layer > r.layer_index() {
        return Err(NfrError::OutOfRange(format!(
            "stop layer {stop_layer} above relevance layer {}",
            r.layer_index()
        )));
    }
    let mut path = vec![r];
    let mut records = Vec::new();
    while path.last().expect("nonempty").layer_index() > stop_layer {
        let (next, rec) = rule_step(net, trace, rule, path.last().expect("nonempty"))?;
        path.push(next);
        records.push(rec);
    }
    Ok((path, records))
}

/// Propagate `r` with `rule` down to `stop_layer`.
pub fn propagate(net: &Network, trace: &ForwardTrace, rule: &RuleSpec, r: Relevance, stop_layer: usize) -> Result<Relevance> {
    let (mut path, _) = propagate_path(net, trace, rule, r, stop_layer)?;
    Ok(path.pop().expect("path holds at least the start"))
}

/// Seed at the logits for class `k` and run `rule` down to `stop_layer`.
pub fn backprop(net: &Network, trace: &ForwardTrace, rule: &RuleSpec, k: usize, stop_layer: usize) -> Result<Relevance> {
    if stop_layer > net.depth() {
        return Err(NfrError::OutOfRange(format!("stop layer {stop_layer} (depth {})", net.depth())));
    }
    propagate(net, trace, rule, seed_relevance(trace, rule, k)?, stop_layer)
}

/// The bottom process mapping input-layer relevance to the displayed map.
///
/// Gradient-form `r_0`: grad and gbp keep it, rectgrad gives `σ(r_0 ⊙ x)`,
/// every other rule gives `r_0 ⊙ x`. Ratio-form `r_0` from a z-type rule is
/// already the product with the input and is returned unchanged.
pub fn bottom(rule: &RuleSpec, r0: &Relevance, x: &Tensor) -> Result<Tensor> {
    if r0.layer_index() != 0 {
        return Err(NfrError::InvalidArgument(format!(
            "bottom process needs input-layer relevance, got layer {}",
            r0.layer_index()
        )));
    }
    if r0.values().shape() != x.shape() {
        return Err(NfrError::ShapeMismatch {
            expected: format!("{}", x.shape()),
            got: format!("{}", r0.values().shape()),
        });
    }
    let r = r0.values();
    match (r0.form(), rule.kind) {
        (RelevanceForm::Ratio, k) if k.is_z_family() => Ok(r.clone()),
        (RelevanceForm::Ratio, k) => Err(NfrError::UnsupportedRule(format!(
            "{} bottom process on ratio-form relevance",
            k.name()
        ))),
        (RelevanceForm::Gradient, RuleKind::Grad | RuleKind::Gbp) => Ok(r.clone()),
        (RelevanceForm::Gradient, RuleKind::RectGrad) => r.zip_map(x, |g, x| (g * x).max(0.0)),
        (RelevanceForm::Gradient, _) => r.zip_map(x, |g, x| g * x),
    }
}

pub fn apply_bottom(rule: &RuleSpec, r0: &Relevance, x: &Tensor, k: usize) -> Result<Attribution> {
    Ok(Attribution {
        values: bottom(rule, r0, x)?,
        rule: rule.clone(),
        target_class: k,
        seed: seed_kind(rule),
        dropped: r0.dropped(),
    })
}

/// Forward, backprop to the input, bottom process.
pub fn attribute(net: &Network, x: &Tensor, rule: &RuleSpec, k: usize) -> Result<Attribution> {
    let trace = forward(net, x)?;
    attribute_traced(net, &trace, rule, k)
}

pub fn attribute_traced(net: &Network, trace: &ForwardTrace, rule: &RuleSpec, k: usize) -> Result<Attribution> {
    let r0 = backprop(net, trace, rule, k, 0)?;
    apply_bottom(rule, &r0, trace.input(), k)
}

/// Input-layer relevance in gradient form, before any bottom process.
pub fn raw_input_relevance(net: &Network, trace: &ForwardTrace, rule: &RuleSpec, k: usize) -> Result<Tensor> {
    Ok(backprop(net, trace, rule, k, 0)?.to_gradient_form(trace)?.into_values())
}

#[cfg(test)]
mod tests;
