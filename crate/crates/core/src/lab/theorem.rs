use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{NfrError, Result};
use crate::net::{build_orthogonal_net, build_random_mlp, forward, Network};
use crate::rules::{rule_step, Relevance, RelevanceForm, RuleKind, RuleSpec};
use crate::sampling::{derive_seed, rng_from_seed, standard_normal, DistSpec};
use crate::tensor::{Shape, Tensor};

use super::alignment::{alignment, mean_std};
use super::cascade::{curve_map, CurveRule};

const NET_STREAM: u64 = 0x4E45_5431;
const INPUT_STREAM: u64 = 0x494E_5031;
const RELEVANCE_STREAM: u64 = 0x5245_4C31;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem1Summary {
    pub rule: String,
    pub dist: String,
    pub d: usize,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Trials with a defined alignment.
    pub trials: usize,
}

/// Alignment of raw input relevance with `x` on fresh `d → n → 1` nets.
///
/// Trial `t` draws its net from `derive_seed(dist.seed, ·, t)` and its
/// Gaussian input likewise, so two distributions with the same seed see the
/// same inputs. Trials whose relevance vanishes are skipped.
pub fn theorem1_experiment(d: usize, n_hidden: usize, dist: &DistSpec, rule: &CurveRule, trials: usize) -> Result<Theorem1Summary> {
    if d == 0 || n_hidden == 0 || trials == 0 {
        return Err(NfrError::InvalidArgument(format!(
            "theorem1 needs positive d, n_hidden and trials, got {d}, {n_hidden}, {trials}"
        )));
    }
    if let CurveRule::Rule(spec) = rule {
        if !matches!(spec.kind, RuleKind::Gbp | RuleKind::Zplus | RuleKind::RectGrad) {
            return Err(NfrError::UnsupportedRule(format!("theorem1 with {}", spec.name())));
        }
    }
    dist.validate()?;
    let values: Vec<Option<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| -> Result<Option<f64>> {
            let net = build_random_mlp(&[d, n_hidden, 1], &dist.with_seed(derive_seed(dist.seed, NET_STREAM, t)))?;
            let x = standard_normal(&Shape::vector(d)?, derive_seed(dist.seed, INPUT_STREAM, t));
            let trace = forward(&net, &x)?;
            let depth = match rule {
                CurveRule::Activation => 1,
                CurveRule::Rule(_) => 2,
            };
            let r0 = curve_map(&net, &trace, rule, depth, 0, false)?;
            match alignment(&r0, &x) {
                Ok(a) => Ok(Some(a.value)),
                Err(NfrError::UndefinedAlignment(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let defined: Vec<f64> = values.into_iter().flatten().collect();
    if defined.is_empty() {
        return Err(NfrError::UndefinedAlignment("every theorem1 trial"));
    }
    let (mean, std) = mean_std(&defined);
    Ok(Theorem1Summary {
        rule: rule.label(),
        dist: dist.kind.name().into(),
        d,
        n: n_hidden,
        mean,
        std,
        trials: defined.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem2Summary {
    pub d: usize,
    pub n: usize,
    pub trials: usize,
    pub holds: usize,
    pub holds_fraction: f64,
    /// `|α(R_a, x) − α(R_b, x)|` on the all-equal-activation fixture.
    pub equality_gap: f64,
    pub equality_holds: bool,
}

/// Slack for `α(R_a, x) ≥ α(R_b, x)`; both sides are cosines in `[−1, 1]`.
pub const THEOREM2_SLACK: f64 = 1e-12;
pub const EQUALITY_TOL: f64 = 1e-9;

fn gbp_to_input(net: &Network, trace: &crate::net::ForwardTrace, r1: Vec<f64>) -> Result<Tensor> {
    let r = Relevance::new(1, Tensor::from_vec(r1)?, RelevanceForm::Gradient);
    let (r0, _) = rule_step(net, trace, &RuleSpec::new(RuleKind::Gbp), &r)?;
    Ok(r0.into_values())
}

/// Alignments `(α(R_a, x), α(R_b, x))` after one GBP backstep from the hidden
/// layer of an orthogonal net with relevances `r_a`, `r_b`.
pub fn theorem2_pair(net: &Network, x: &Tensor, r_a: Vec<f64>, r_b: Vec<f64>) -> Result<(f64, f64)> {
    let trace = forward(net, x)?;
    let ra = gbp_to_input(net, &trace, r_a)?;
    let rb = gbp_to_input(net, &trace, r_b)?;
    Ok((alignment(&ra, x)?.value, alignment(&rb, x)?.value))
}

/// Relevance proportional to the activation against i.i.d. uniform relevance
/// on orthogonal equal-norm nets; counts trials with `α(R_a) ≥ α(R_b)`.
pub fn theorem2_experiment(d: usize, n: usize, trials: usize, seed: u64) -> Result<Theorem2Summary> {
    if n > d {
        return Err(NfrError::Infeasible(format!("{n} orthogonal neurons in {d} dimensions")));
    }
    if n == 0 || trials == 0 {
        return Err(NfrError::InvalidArgument("theorem2 needs positive n and trials".into()));
    }
    let outcomes: Vec<bool> = (0..trials as u64)
        .into_par_iter()
        .map(|t| -> Result<bool> {
            let net = build_orthogonal_net(d, n, 1.0, derive_seed(seed, NET_STREAM, t))?;
            let mut rng = rng_from_seed(derive_seed(seed, RELEVANCE_STREAM, t));
            let mut attempt = 0u64;
            let (x, a) = loop {
                let x = standard_normal(&Shape::vector(d)?, derive_seed(derive_seed(seed, INPUT_STREAM, t), 0, attempt));
                let a = forward(&net, &x)?.activation(1)?.clone().into_data();
                if a.iter().any(|&v| v > 0.0) {
                    break (x, a);
                }
                attempt += 1;
            };
            let c: f64 = rng.random_range(0.1..10.0);
            let r_a = a.iter().map(|v| c * v).collect();
            let r_b = (0..n).map(|_| rng.random::<f64>()).collect();
            let (alpha_a, alpha_b) = theorem2_pair(&net, &x, r_a, r_b)?;
            Ok(alpha_a >= alpha_b - THEOREM2_SLACK)
        })
        .collect::<Result<_>>()?;
    let holds = outcomes.iter().filter(|&&h| h).count();
    let equality_gap = theorem2_equality_gap(seed)?;
    Ok(Theorem2Summary {
        d,
        n,
        trials,
        holds,
        holds_fraction: holds as f64 / trials as f64,
        equality_gap,
        equality_holds: equality_gap <= EQUALITY_TOL,
    })
}

/// `d = n = 8`, `x = Σ w_i` so every hidden activation equals 1, `r_b ∝ A`.
pub fn theorem2_equality_gap(seed: u64) -> Result<f64> {
    let net = build_orthogonal_net(8, 8, 1.0, seed)?;
    let mut x = vec![0.0; 8];
    for w in net.layer(1)?.neuron_vectors() {
        for (xi, wi) in x.iter_mut().zip(&w) {
            *xi += wi;
        }
    }
    let x = Tensor::from_vec(x)?;
    let a = forward(&net, &x)?.activation(1)?.clone().into_data();
    let (alpha_a, alpha_b) = theorem2_pair(&net, &x, a.clone(), a.iter().map(|v| 3.5 * v).collect())?;
    Ok((alpha_a - alpha_b).abs())
}
