//! Negative-filtering check: does a rule's filter raise the inner product
//! with the layer input compared to the unfiltered gradient step?

use std::io::Write;

use serde::Serialize;

use crate::error::{NfrError, Result};
use crate::net::{ForwardTrace, Network};
use crate::tensor::dot_slices;

use super::backstep::{rect_keep, BackstepContext};
use super::spec::{RectThreshold, RuleKind, RuleSpec};
use super::{propagate_path, seed_relevance};

/// One ReLU layer of an NFR check.
///
/// `lhs = ⟨A_{l−1}, F(W M) r⟩`, `rhs = ⟨A_{l−1}, W M r⟩`. `gain` is the
/// negated sum of the removed terms, which equals `lhs − rhs` but is computed
/// without cancelling two large sums.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NfrLayerRecord {
    pub layer_index: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub noop: bool,
    pub holds: bool,
    pub gain: f64,
    pub zero_product_only: bool,
    /// `max_i |(F r)_i + (F⁻ r)_i − (W M r)_i|` for the complementary filter `F⁻`.
    pub decomposition_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NfrReport {
    pub rule: RuleSpec,
    pub target_class: usize,
    pub logit: f64,
    /// z⁺ is only guaranteed to filter negatively when this holds.
    pub positive_logit: bool,
    pub layers: Vec<NfrLayerRecord>,
}

impl NfrReport {
    pub fn all_hold(&self) -> bool {
        self.layers.iter().all(|r| r.holds)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for rec in &self.layers {
            w.serialize(rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Check every ReLU layer using the relevance that actually reaches it when
/// `rule` runs for class `k`.
///
/// z⁺ is checked in gradient form on its unnormalized filter, which keeps the
/// connections with positive weighted activation `z_ij`.
pub fn nfr_check(net: &Network, trace: &ForwardTrace, rule: &RuleSpec, k: usize) -> Result<NfrReport> {
    if !matches!(rule.kind, RuleKind::Gbp | RuleKind::RectGrad | RuleKind::Zplus) {
        return Err(NfrError::UnsupportedRule(format!(
            "nfr_check supports gbp, rectgrad and zplus, got {}",
            rule.name()
        )));
    }
    let seed = seed_relevance(trace, rule, k)?;
    let (path, steps) = propagate_path(net, trace, rule, seed, 0)?;
    let mut layers = Vec::new();
    for (r, step) in path.iter().zip(&steps) {
        let l = r.layer_index();
        if !net.layer(l)?.has_relu() {
            continue;
        }
        let ctx = BackstepContext::new(net, trace, l)?;
        let g = r.to_gradient_form(trace)?.into_values();
        let mask = ctx.mask().expect("relu layer").data();
        let mg: Vec<f64> = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
        let a = ctx.a_prev().data();
        let pre = ctx.pre().data();
        let full = ctx.op().backward(&mg);

        let (kept, removed, removed_terms, any_removed) = if rule.kind == RuleKind::Zplus {
            let keep_w = |i: usize, _: usize, w: f64| if w * a[i] > 0.0 { w } else { 0.0 };
            let drop_w = |i: usize, _: usize, w: f64| if w * a[i] > 0.0 { 0.0 } else { w };
            let neg_z = ctx.op().column_sums(|i, _, w| (w * a[i]).min(0.0));
            let non_pos = ctx.op().column_sums(|i, _, w| if w * a[i] > 0.0 { 0.0 } else { 1.0 });
            let terms: Vec<f64> = neg_z.iter().zip(&mg).map(|(z, g)| z * g).collect();
            let any = non_pos.iter().zip(mask).any(|(&c, &m)| m == 1.0 && c > 0.0);
            (ctx.op().distribute(keep_w, &mg), ctx.op().distribute(drop_w, &mg), terms, any)
        } else {
            let keep: Vec<bool> = match rule.kind {
                RuleKind::Gbp => g.data().iter().map(|&v| v > 0.0).collect(),
                _ => {
                    let tau = step.tau.expect("rectgrad records tau at relu layers");
                    rect_keep(ctx.a_out().data(), g.data(), RectThreshold::Fixed(tau)).0
                }
            };
            let split = |want: bool| -> Vec<f64> {
                mg.iter().zip(&keep).map(|(&v, &k)| if k == want { v } else { 0.0 }).collect()
            };
            let terms: Vec<f64> = (0..mg.len())
                .map(|j| if keep[j] { 0.0 } else { pre[j] * mg[j] })
                .collect();
            let any = keep.iter().zip(mask).any(|(&k, &m)| m == 1.0 && !k);
            (ctx.op().backward(&split(true)), ctx.op().backward(&split(false)), terms, any)
        };

        let lhs = dot_slices(a, &kept);
        let rhs = dot_slices(a, &full);
        let gain = -removed_terms.iter().sum::<f64>();
        let zero_product_only = removed_terms.iter().all(|&t| t == 0.0);
        let noop = !any_removed;
        let holds = noop || gain > 0.0 || (zero_product_only && (lhs - rhs).abs() <= 1e-9);
        let decomposition_error = kept
            .iter()
            .zip(&removed)
            .zip(&full)
            .map(|((f, c), u)| (f + c - u).abs())
            .fold(0.0, f64::max);
        layers.push(NfrLayerRecord {
            layer_index: l,
            lhs,
            rhs,
            noop,
            holds,
            gain,
            zero_product_only,
            decomposition_error,
        });
    }
    layers.reverse();
    let logit = trace.logits().data()[k];
    Ok(NfrReport {
        rule: rule.clone(),
        target_class: k,
        logit,
        positive_logit: logit > 0.0,
        layers,
    })
}
