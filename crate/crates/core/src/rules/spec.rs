use serde::{Deserialize, Serialize};

use crate::error::{NfrError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Grad,
    GradInput,
    Gbp,
    #[serde(rename = "rectgrad")]
    RectGrad,
    LrpZ,
    LrpAlphabeta,
    Zplus,
    Dtd,
}

impl RuleKind {
    pub const ALL: [RuleKind; 8] = [
        RuleKind::Grad,
        RuleKind::GradInput,
        RuleKind::Gbp,
        RuleKind::RectGrad,
        RuleKind::LrpZ,
        RuleKind::LrpAlphabeta,
        RuleKind::Zplus,
        RuleKind::Dtd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::Grad => "grad",
            RuleKind::GradInput => "grad_input",
            RuleKind::Gbp => "gbp",
            RuleKind::RectGrad => "rectgrad",
            RuleKind::LrpZ => "lrp_z",
            RuleKind::LrpAlphabeta => "lrp_alphabeta",
            RuleKind::Zplus => "zplus",
            RuleKind::Dtd => "dtd",
        }
    }

    pub fn parse(name: &str) -> Result<RuleKind> {
        RuleKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| NfrError::InvalidSpec(format!("unknown rule {name:?}")))
    }

    /// Rules that redistribute `z_ij = w_ij a_i` ratios and seed with the logit value.
    pub fn is_z_family(self) -> bool {
        matches!(
            self,
            RuleKind::LrpZ | RuleKind::LrpAlphabeta | RuleKind::Zplus | RuleKind::Dtd
        )
    }
}

/// How RectGrad picks its per-layer threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RectThreshold {
    /// Nearest-rank percentile `q ∈ [0, 100]` of `A_l ⊙ r_l`; `q = 0` means `τ = −∞`.
    Percentile(f64),
    Fixed(f64),
}

/// A rule and its parameters.
///
/// `q`/`tau` apply to rectgrad (`tau` overrides `q`), `alpha`/`beta` to
/// lrp_alphabeta, `lo`/`hi` to dtd (length 1 broadcasts over the input).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub kind: RuleKind,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_q() -> f64 {
    90.0
}

fn default_alpha() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    1e-9
}

impl RuleSpec {
    pub fn new(kind: RuleKind) -> RuleSpec {
        RuleSpec {
            kind,
            q: default_q(),
            tau: None,
            alpha: default_alpha(),
            beta: 0.0,
            lo: None,
            hi: None,
            epsilon: default_epsilon(),
        }
    }

    pub fn rectgrad(q: f64) -> Result<RuleSpec> {
        let spec = RuleSpec { q, ..RuleSpec::new(RuleKind::RectGrad) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rectgrad_tau(tau: f64) -> RuleSpec {
        RuleSpec { tau: Some(tau), ..RuleSpec::new(RuleKind::RectGrad) }
    }

    pub fn alphabeta(alpha: f64, beta: f64) -> Result<RuleSpec> {
        let spec = RuleSpec { alpha, beta, ..RuleSpec::new(RuleKind::LrpAlphabeta) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dtd(lo: Vec<f64>, hi: Vec<f64>) -> Result<RuleSpec> {
        let spec = RuleSpec { lo: Some(lo), hi: Some(hi), ..RuleSpec::new(RuleKind::Dtd) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_epsilon(self, epsilon: f64) -> RuleSpec {
        RuleSpec { epsilon, ..self }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Short label including the parameters that matter for this kind.
    pub fn label(&self) -> String {
        match self.kind {
            RuleKind::RectGrad => match self.threshold() {
                RectThreshold::Fixed(t) => format!("rectgrad(tau={t})"),
                RectThreshold::Percentile(q) => format!("rectgrad(q={q})"),
            },
            RuleKind::LrpAlphabeta => format!("lrp_alphabeta(alpha={},beta={})", self.alpha, self.beta),
            k => k.name().to_string(),
        }
    }

    pub fn threshold(&self) -> RectThreshold {
        match self.tau {
            Some(t) => RectThreshold::Fixed(t),
            None => RectThreshold::Percentile(self.q),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(NfrError::InvalidSpec(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        match self.kind {
            RuleKind::RectGrad => {
                if !(0.0..=100.0).contains(&self.q) {
                    return Err(NfrError::InvalidSpec(format!("q must lie in [0, 100], got {}", self.q)));
                }
                if let Some(t) = self.tau {
                    if t.is_nan() {
                        return Err(NfrError::InvalidSpec("tau is NaN".into()));
                    }
                }
            }
            RuleKind::LrpAlphabeta => {
                if !self.alpha.is_finite() || !self.beta.is_finite() || self.beta < 0.0 {
                    return Err(NfrError::InvalidSpec(format!(
                        "alpha and beta must be finite with beta >= 0, got {} and {}",
                        self.alpha, self.beta
                    )));
                }
                if (self.alpha - self.beta - 1.0).abs() > 1e-12 {
                    return Err(NfrError::InvalidSpec(format!(
                        "alpha - beta must equal 1, got {} - {}",
                        self.alpha, self.beta
                    )));
                }
            }
            RuleKind::Dtd => match (&self.lo, &self.hi) {
                (None, None) => {}
                (Some(lo), Some(hi)) => {
                    if lo.len() != hi.len() || lo.is_empty() {
                        return Err(NfrError::InvalidSpec(format!(
                            "lo and hi must have equal nonzero lengths, got {} and {}",
                            lo.len(),
                            hi.len()
                        )));
                    }
                    if let Some(i) = lo.iter().zip(hi).position(|(l, h)| l.partial_cmp(h).is_none_or(|o| o.is_gt())) {
                        return Err(NfrError::InvalidSpec(format!(
                            "bound {i}: lo {} exceeds hi {}",
                            lo[i], hi[i]
                        )));
                    }
                }
                _ => return Err(NfrError::InvalidSpec("dtd needs both lo and hi, or neither".into())),
            },
            _ => {}
        }
        Ok(())
    }

    /// Per-input bounds for the zB step, expanded to `x.numel()` entries.
    /// Without explicit bounds the scalar range `[min x, max x]` is used.
    /// Errors when a bound does not contain its input entry.
    pub fn input_bounds(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = x.numel();
        let (lo, hi) = match (&self.lo, &self.hi) {
            (Some(lo), Some(hi)) => {
                let expand = |b: &Vec<f64>| -> Result<Vec<f64>> {
                    match b.len() {
                        1 => Ok(vec![b[0]; n]),
                        m if m == n => Ok(b.clone()),
                        m => Err(NfrError::ShapeMismatch {
                            expected: format!("1 or {n} bounds"),
                            got: format!("{m}"),
                        }),
                    }
                };
                (expand(lo)?, expand(hi)?)
            }
            _ => (vec![x.min(); n], vec![x.max(); n]),
        };
        for (i, &xi) in x.data().iter().enumerate() {
            if xi < lo[i] || xi > hi[i] {
                return Err(NfrError::InvalidArgument(format!(
                    "input entry {i} = {xi} lies outside [{}, {}]",
                    lo[i], hi[i]
                )));
            }
        }
        Ok((lo, hi))
    }
}
