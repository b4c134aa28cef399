//! Single-layer backward steps.
//!
//! Gradient-type rules carry relevance in gradient form (`∂f/∂A_l` style
//! values). The z-type rules carry the redistributed quantity itself, whose
//! layer sum is conserved; the two are related by `ratio = A_l ⊙ gradient`.

use crate::error::{NfrError, Result};
use crate::net::{ForwardTrace, Layer, LinearOp, Network};
use crate::tensor::Tensor;

use super::spec::RectThreshold;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelevanceForm {
    Gradient,
    Ratio,
}

/// Relevance `r_l` at the output side of layer `l` (shaped like `A_l`).
#[derive(Clone, Debug, PartialEq)]
pub struct Relevance {
    layer_index: usize,
    values: Tensor,
    form: RelevanceForm,
    dropped: f64,
}

impl Relevance {
    pub fn new(layer_index: usize, values: Tensor, form: RelevanceForm) -> Relevance {
        Relevance { layer_index, values, form, dropped: 0.0 }
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn form(&self) -> RelevanceForm {
        self.form
    }

    /// Relevance lost so far to all-zero denominators.
    pub fn dropped(&self) -> f64 {
        self.dropped
    }

    /// Gradient-form view: ratio values divided by `A_l`, with 0 where `A_l = 0`.
    pub fn to_gradient_form(&self, trace: &ForwardTrace) -> Result<Relevance> {
        match self.form {
            RelevanceForm::Gradient => Ok(self.clone()),
            RelevanceForm::Ratio => {
                let a = trace.activation(self.layer_index)?;
                let values = self
                    .values
                    .zip_map(a, |r, a| if a == 0.0 { 0.0 } else { r / a })?;
                Ok(Relevance {
                    layer_index: self.layer_index,
                    values,
                    form: RelevanceForm::Gradient,
                    dropped: self.dropped,
                })
            }
        }
    }

    /// Ratio-form view: gradient values times `A_l`.
    pub fn to_ratio_form(&self, trace: &ForwardTrace) -> Result<Relevance> {
        match self.form {
            RelevanceForm::Ratio => Ok(self.clone()),
            RelevanceForm::Gradient => {
                let a = trace.activation(self.layer_index)?;
                let values = self.values.zip_map(a, |g, a| g * a)?;
                Ok(Relevance {
                    layer_index: self.layer_index,
                    values,
                    form: RelevanceForm::Ratio,
                    dropped: self.dropped,
                })
            }
        }
    }

    pub(crate) fn to_form(&self, form: RelevanceForm, trace: &ForwardTrace) -> Result<Relevance> {
        match form {
            RelevanceForm::Gradient => self.to_gradient_form(trace),
            RelevanceForm::Ratio => self.to_ratio_form(trace),
        }
    }
}

/// What a weighted-layer backstep sees: the layer as a matrix, its input
/// `A_{l-1}`, output `A_l` and ReLU mask. RectGrad stores its realized
/// threshold and z⁺ its per-unit normalizer `γ_j = A_j / Σ_i z⁺_ij` here.
pub struct BackstepContext<'a> {
    layer_index: usize,
    op: LinearOp<'a>,
    a_prev: &'a Tensor,
    a_out: &'a Tensor,
    pre: &'a Tensor,
    mask: Option<&'a Tensor>,
    pub tau_value: Option<f64>,
    pub gamma: Option<Vec<f64>>,
}

impl<'a> BackstepContext<'a> {
    pub fn new(net: &'a Network, trace: &'a ForwardTrace, l: usize) -> Result<BackstepContext<'a>> {
        let op = net.linear_op(l)?;
        Ok(BackstepContext {
            layer_index: l,
            op,
            a_prev: trace.activation(l - 1)?,
            a_out: trace.activation(l)?,
            pre: trace.pre_activation(l).expect("weighted layers record pre-activations"),
            mask: trace.relu_mask(l),
            tau_value: None,
            gamma: None,
        })
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn a_prev(&self) -> &Tensor {
        self.a_prev
    }

    pub fn a_out(&self) -> &Tensor {
        self.a_out
    }

    pub fn mask(&self) -> Option<&Tensor> {
        self.mask
    }

    pub fn has_relu(&self) -> bool {
        self.mask.is_some()
    }

    pub(crate) fn op(&self) -> &LinearOp<'a> {
        &self.op
    }

    pub(crate) fn pre(&self) -> &Tensor {
        self.pre
    }

    /// Weighted activations `z_ij = w_ij a_i` as an `in × out` matrix (dense layers only).
    pub fn z_matrix(&self) -> Option<Tensor> {
        match &self.op {
            LinearOp::Dense { w, n_in, n_out } => {
                let a = self.a_prev.data();
                let data = (0..n_in * n_out).map(|idx| w[idx] * a[idx / n_out]).collect();
                Tensor::new(crate::tensor::Shape::new(vec![*n_in, *n_out]).ok()?, data).ok()
            }
            LinearOp::Conv { .. } => None,
        }
    }

    fn check(&self, r: &Relevance, form: RelevanceForm) -> Result<()> {
        if r.layer_index != self.layer_index {
            return Err(NfrError::InvalidArgument(format!(
                "relevance for layer {} passed to layer {}",
                r.layer_index, self.layer_index
            )));
        }
        if r.values.shape() != self.a_out.shape() {
            return Err(NfrError::ShapeMismatch {
                expected: format!("relevance shaped {}", self.a_out.shape()),
                got: format!("{}", r.values.shape()),
            });
        }
        if r.form != form {
            return Err(NfrError::InvalidArgument(format!(
                "layer {} step expects {form:?}-form relevance, got {:?}",
                self.layer_index, r.form
            )));
        }
        Ok(())
    }

    fn output(&self, values: Vec<f64>, form: RelevanceForm, dropped: f64) -> Result<Relevance> {
        Ok(Relevance {
            layer_index: self.layer_index - 1,
            values: Tensor::new(self.a_prev.shape().clone(), values)?,
            form,
            dropped,
        })
    }

    fn masked(&self, g: impl Iterator<Item = f64>) -> Vec<f64> {
        match self.mask {
            Some(m) => g.zip(m.data()).map(|(v, m)| v * m).collect(),
            None => g.collect(),
        }
    }

    fn redistribute(
        &self,
        r: &[f64],
        term: impl Fn(usize, usize, f64) -> f64 + Copy,
        epsilon: f64,
    ) -> (Vec<f64>, Vec<f64>, f64) {
        let den = self.op.column_sums(term);
        let mut dropped = 0.0;
        let coef: Vec<f64> = r
            .iter()
            .zip(&den)
            .map(|(&rj, &d)| {
                if rj == 0.0 {
                    0.0
                } else if d == 0.0 {
                    dropped += rj;
                    0.0
                } else {
                    rj / stabilize(d, epsilon)
                }
            })
            .collect();
        (self.op.distribute(term, &coef), den, dropped)
    }
}

fn stabilize(d: f64, epsilon: f64) -> f64 {
    if d.abs() < epsilon {
        epsilon.copysign(d)
    } else {
        d
    }
}

/// `W M r`.
pub fn backstep_grad(ctx: &BackstepContext, r: &Relevance) -> Result<Relevance> {
    ctx.check(r, RelevanceForm::Gradient)?;
    let g = ctx.masked(r.values.data().iter().copied());
    ctx.output(ctx.op.backward(&g), RelevanceForm::Gradient, r.dropped)
}

/// `W M σ(r)`.
pub fn backstep_gbp(ctx: &BackstepContext, r: &Relevance) -> Result<Relevance> {
    ctx.check(r, RelevanceForm::Gradient)?;
    let g = ctx.masked(r.values.data().iter().map(|&v| v.max(0.0)));
    ctx.output(ctx.op.backward(&g), RelevanceForm::Gradient, r.dropped)
}

/// Nearest-rank `q`-th percentile; `q = 0` gives `−∞`.
pub fn nearest_rank_percentile(values: &[f64], q: f64) -> f64 {
    if q <= 0.0 || values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((q / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Entries of `r` whose contribution `A_l ⊙ r` exceeds `τ` strictly, and `τ`.
pub(crate) fn rect_keep(a_out: &[f64], r: &[f64], threshold: RectThreshold) -> (Vec<bool>, f64) {
    let s: Vec<f64> = a_out.iter().zip(r).map(|(a, r)| a * r).collect();
    let tau = match threshold {
        RectThreshold::Fixed(t) => t,
        RectThreshold::Percentile(q) => nearest_rank_percentile(&s, q),
    };
    (s.iter().map(|&v| v > tau).collect(), tau)
}

/// `W M (r ⊙ 𝕀(A_l ⊙ r > τ))`; the realized `τ` lands in `ctx.tau_value`.
pub fn backstep_rectgrad(ctx: &mut BackstepContext, r: &Relevance, threshold: RectThreshold) -> Result<Relevance> {
    ctx.check(r, RelevanceForm::Gradient)?;
    let (keep, tau) = rect_keep(ctx.a_out.data(), r.values.data(), threshold);
    ctx.tau_value = Some(tau);
    let g = ctx.masked(
        r.values
            .data()
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v } else { 0.0 }),
    );
    ctx.output(ctx.op.backward(&g), RelevanceForm::Gradient, r.dropped)
}

/// `r_i = Σ_j z_ij / Σ_k z_kj · r_j`.
pub fn backstep_z(ctx: &BackstepContext, r: &Relevance, epsilon: f64) -> Result<Relevance> {
    ctx.check(r, RelevanceForm::Ratio)?;
    let a = ctx.a_prev.data();
    let (out, _, dropped) = ctx.redistribute(r.values.data(), |i, _, w| w * a[i], epsilon);
    ctx.output(out, RelevanceForm::Ratio, r.dropped + dropped)
}

/// `r_i = Σ_j (α z⁺_ij / Σ_k z⁺_kj − β z⁻_ij / Σ_k z⁻_kj) r_j`.
pub fn backstep_alphabeta(
    ctx: &BackstepContext,
    r: &Relevance,
    alpha: f64,
    beta: f64,
    epsilon: f64,
) -> Result<Relevance> {
    ctx.check(r, RelevanceForm::Ratio)?;
    let a = ctx.a_prev.data();
    let (pos, _, dropped_pos) = ctx.redistribute(r.values.data(), |i, _, w| (w * a[i]).max(0.0), epsilon);
    let mut out: Vec<f64> = pos.iter().map(|v| alpha * v).collect();
    let mut dropped = alpha * dropped_pos;
    if beta != 0.0 {
        let (neg, _, dropped_neg) = ctx.redistribute(r.values.data(), |i, _, w| (w * a[i]).min(0.0), epsilon);
        for (o, n) in out.iter_mut().zip(neg) {
            *o -= beta * n;
        }
        dropped -= beta * dropped_neg;
    }
    ctx.output(out, RelevanceForm::Ratio, r.dropped + dropped)
}

/// `r_i = Σ_j z⁺_ij / Σ_k z⁺_kj · r_j`; columns with no positive `z` drop their relevance.
pub fn backstep_zplus(ctx: &mut BackstepContext, r: &Relevance, epsilon: f64) -> Result<Relevance> {
    ctx.check(r, RelevanceForm::Ratio)?;
    let a = ctx.a_prev.data();
    let (out, den, dropped) = ctx.redistribute(r.values.data(), |i, _, w| (w * a[i]).max(0.0), epsilon);
    ctx.gamma = Some(
        ctx.a_out
            .data()
            .iter()
            .zip(&den)
            .map(|(&aj, &d)| if d > 0.0 { aj / d } else { 0.0 })
            .collect(),
    );
    ctx.output(out, RelevanceForm::Ratio, r.dropped + dropped)
}

/// Bounded-input rule: `r_i = Σ_j (z_ij − l_i w⁺_ij − h_i w⁻_ij) / Σ_k (…) · r_j`.
pub fn backstep_zb(ctx: &BackstepContext, r: &Relevance, lo: &[f64], hi: &[f64], epsilon: f64) -> Result<Relevance> {
    ctx.check(r, RelevanceForm::Ratio)?;
    let n = ctx.a_prev.numel();
    if lo.len() != n || hi.len() != n {
        return Err(NfrError::ShapeMismatch {
            expected: format!("{n} bounds"),
            got: format!("{} lo, {} hi", lo.len(), hi.len()),
        });
    }
    let x = ctx.a_prev.data();
    let term = |i: usize, _: usize, w: f64| w * x[i] - lo[i] * w.max(0.0) - hi[i] * w.min(0.0);
    let (out, _, dropped) = ctx.redistribute(r.values.data(), term, epsilon);
    ctx.output(out, RelevanceForm::Ratio, r.dropped + dropped)
}

/// Rule-independent step through max-pool (winner takes all) or flatten (reshape).
pub fn backstep_structural(net: &Network, trace: &ForwardTrace, r: &Relevance) -> Result<Relevance> {
    let l = r.layer_index;
    let prev_shape = net.activation_shape(l - 1).clone();
    let values = match net.layer(l)? {
        Layer::MaxPool2d { .. } => {
            let winners = trace
                .pool_argmax(l)
                .ok_or_else(|| NfrError::InvalidArgument(format!("trace has no pool record for layer {l}")))?;
            let mut prev = vec![0.0; prev_shape.numel()];
            for (&w, &v) in winners.iter().zip(r.values.data()) {
                prev[w] += v;
            }
            Tensor::new(prev_shape, prev)?
        }
        Layer::Flatten => r.values.reshape(prev_shape)?,
        _ => return Err(NfrError::InvalidArgument(format!("layer {l} is weighted"))),
    };
    Ok(Relevance { layer_index: l - 1, values, form: r.form, dropped: r.dropped })
}
