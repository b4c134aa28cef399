//! Key information sufficiency: feed a normalized attribution back through the
//! model and measure how far the class-weighted last-layer features move.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NfrError, Result};
use crate::net::{forward, ForwardTrace, LabeledDataset, Network};
use crate::rules::{attribute_traced, RuleSpec};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAttribution {
    pub values: Tensor,
    /// `R` was constant, so the result is the constant `min x`.
    pub degenerate: bool,
}

/// `R̃ = (R − min R)(max x − min x)/(max R − min R) + min x`. When `R` already
/// spans exactly `[min x, max x]` the map is the identity and `R` is returned
/// unchanged.
pub fn normalize_attribution(r: &Tensor, x: &Tensor) -> Result<NormalizedAttribution> {
    if r.shape() != x.shape() {
        return Err(NfrError::ShapeMismatch {
            expected: format!("{}", x.shape()),
            got: format!("{}", r.shape()),
        });
    }
    let (r_lo, r_hi) = (r.min(), r.max());
    let (x_lo, x_hi) = (x.min(), x.max());
    if r_lo == r_hi {
        return Ok(NormalizedAttribution { values: Tensor::filled(x.shape().clone(), x_lo)?, degenerate: true });
    }
    if r_lo == x_lo && r_hi == x_hi {
        return Ok(NormalizedAttribution { values: r.clone(), degenerate: false });
    }
    let values = r.map(|v| (v - r_lo) * (x_hi - x_lo) / (r_hi - r_lo) + x_lo)?;
    Ok(NormalizedAttribution { values, degenerate: false })
}

/// `S = 1 − ‖v ⊙ A* − v ⊙ A‖₁ / ‖v ⊙ A‖₁`, evaluated as `(den − num) / den`.
pub fn kis_from_features(a: &[f64], a_star: &[f64], v: &[f64]) -> Result<f64> {
    if a.len() != v.len() || a_star.len() != v.len() {
        return Err(NfrError::ShapeMismatch {
            expected: format!("{} features", v.len()),
            got: format!("{} and {}", a.len(), a_star.len()),
        });
    }
    let den: f64 = a.iter().zip(v).map(|(a, v)| (v * a).abs()).sum();
    if den == 0.0 {
        return Err(NfrError::UndefinedKis);
    }
    let num: f64 = a.iter().zip(a_star).zip(v).map(|((a, s), v)| (v * s - v * a).abs()).sum();
    Ok((den - num) / den)
}

fn last_features(net: &Network, trace: &ForwardTrace) -> Result<Vec<f64>> {
    Ok(trace.activation(net.depth() - 1)?.data().to_vec())
}

/// KIS of feeding `fed` in place of `x`, for class `k`.
pub fn kis_of_input(net: &Network, x: &Tensor, fed: &Tensor, k: usize) -> Result<f64> {
    let v = net.class_weights(k)?;
    let a = last_features(net, &forward(net, x)?)?;
    let a_star = last_features(net, &forward(net, fed)?)?;
    kis_from_features(&a, &a_star, &v)
}

/// KIS of attribution `r` for input `x` and class `k`.
pub fn kis(net: &Network, x: &Tensor, r: &Tensor, k: usize) -> Result<f64> {
    kis_of_input(net, x, &normalize_attribution(r, x)?.values, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionVariant {
    Signed,
    Abs,
}

/// `𝕀(R > mean R) ⊙ x` (signed) or `𝕀(|R| > mean |R|) ⊙ x` (abs).
pub fn insertion_input(r: &Tensor, x: &Tensor, variant: InsertionVariant) -> Result<Tensor> {
    let scores = match variant {
        InsertionVariant::Signed => r.clone(),
        InsertionVariant::Abs => r.map(f64::abs)?,
    };
    let mean = scores.mean();
    scores.zip_map(x, |s, x| if s > mean { x } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KisVariant {
    Kis,
    InsertionSigned,
    InsertionAbs,
}

impl KisVariant {
    pub fn name(self) -> &'static str {
        match self {
            KisVariant::Kis => "kis",
            KisVariant::InsertionSigned => "insertion_signed",
            KisVariant::InsertionAbs => "insertion_abs",
        }
    }

    /// The input fed for the second forward pass.
    pub fn fed_input(self, r: &Tensor, x: &Tensor) -> Result<Tensor> {
        match self {
            KisVariant::Kis => Ok(normalize_attribution(r, x)?.values),
            KisVariant::InsertionSigned => insertion_input(r, x, InsertionVariant::Signed),
            KisVariant::InsertionAbs => insertion_input(r, x, InsertionVariant::Abs),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KisRecord {
    pub sample_id: usize,
    #[serde(rename = "S")]
    pub s: Option<f64>,
    #[serde(rename = "pred")]
    pub predicted_class: usize,
    pub label: usize,
    pub correct: bool,
    pub variant: &'static str,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct KisReport {
    pub records: Vec<KisRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count_correct: usize,
    pub count_incorrect: usize,
}

impl KisReport {
    fn mean_where(&self, correct: bool) -> Option<f64> {
        let s: Vec<f64> = self.records.iter().filter(|r| r.correct == correct).filter_map(|r| r.s).collect();
        (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64)
    }

    pub fn mean_correct(&self) -> Option<f64> {
        self.mean_where(true)
    }

    pub fn mean_incorrect(&self) -> Option<f64> {
        self.mean_where(false)
    }

    pub fn error_count(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `bins` equal-width bins over `[min S, 1]` split by correctness.
    pub fn histogram(&self, bins: usize) -> Result<Vec<HistogramBin>> {
        if bins == 0 {
            return Err(NfrError::InvalidArgument("histogram needs at least one bin".into()));
        }
        let values: Vec<(f64, bool)> = self.records.iter().filter_map(|r| r.s.map(|s| (s, r.correct))).collect();
        let lo = values.iter().map(|v| v.0).fold(f64::INFINITY, f64::min).min(0.0);
        let hi = 1.0;
        let width = (hi - lo) / bins as f64;
        let mut out: Vec<HistogramBin> = (0..bins)
            .map(|b| HistogramBin {
                bin_lo: lo + b as f64 * width,
                bin_hi: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
                count_correct: 0,
                count_incorrect: 0,
            })
            .collect();
        for (s, correct) in values {
            let b = (((s - lo) / width).floor() as usize).min(bins - 1);
            if correct {
                out[b].count_correct += 1;
            } else {
                out[b].count_incorrect += 1;
            }
        }
        Ok(out)
    }

    pub fn write_histogram_csv<W: Write>(&self, bins: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for b in self.histogram(bins)? {
            w.serialize(b)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-sample KIS with attributions from `attribution(net, trace, k)` for the
/// predicted class `k`. Failures are recorded per sample.
pub fn kis_report_with<F>(net: &Network, data: &LabeledDataset, variant: KisVariant, attribution: F) -> KisReport
where
    F: Fn(&Network, &ForwardTrace, usize) -> Result<Tensor> + Sync,
{
    let records = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (x, label) = data.get(i).expect("index in range");
            let mut rec = KisRecord {
                sample_id: i,
                s: None,
                predicted_class: 0,
                label,
                correct: false,
                variant: variant.name(),
                error: None,
            };
            let outcome = forward(net, x).and_then(|trace| {
                let k = trace.predicted_class();
                rec.predicted_class = k;
                rec.correct = k == label;
                let r = attribution(net, &trace, k)?;
                kis_of_input(net, x, &variant.fed_input(&r, x)?, k)
            });
            match outcome {
                Ok(s) => rec.s = Some(s),
                Err(e) => rec.error = Some(e.to_string()),
            }
            rec
        })
        .collect();
    KisReport { records }
}

pub fn kis_report(net: &Network, data: &LabeledDataset, rule: &RuleSpec, variant: KisVariant) -> KisReport {
    kis_report_with(net, data, variant, |net, trace, k| Ok(attribute_traced(net, trace, rule, k)?.values))
}
