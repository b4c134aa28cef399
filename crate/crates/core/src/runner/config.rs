use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NfrError, Result};
use crate::kis::KisVariant;
use crate::lab::{Perturbation, SplitSide};
use crate::net::{LayerSpec, TrainConfig};
use crate::rules::RuleSpec;
use crate::sampling::DistKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Attribute,
    Cascade,
    Theorem1,
    Theorem2,
    Sanity,
    Split,
    Geometry,
    Kis,
    NfrCheck,
}

impl Subcommand {
    pub const ALL: [Subcommand; 9] = [
        Subcommand::Attribute,
        Subcommand::Cascade,
        Subcommand::Theorem1,
        Subcommand::Theorem2,
        Subcommand::Sanity,
        Subcommand::Split,
        Subcommand::Geometry,
        Subcommand::Kis,
        Subcommand::NfrCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Attribute => "attribute",
            Subcommand::Cascade => "cascade",
            Subcommand::Theorem1 => "theorem1",
            Subcommand::Theorem2 => "theorem2",
            Subcommand::Sanity => "sanity",
            Subcommand::Split => "split",
            Subcommand::Geometry => "geometry",
            Subcommand::Kis => "kis",
            Subcommand::NfrCheck => "nfr-check",
        }
    }

    pub fn parse(name: &str) -> Result<Subcommand> {
        Subcommand::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| NfrError::config("subcommand", format!("unknown subcommand {name:?}")))
    }
}

/// Weight distribution without a seed; seeds come from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistConfig {
    pub kind: DistKind,
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// An NFRNET1 file.
    Path(PathBuf),
    Mlp { dims: Vec<usize>, dist: DistConfig },
    Layers { input_shape: Vec<usize>, layers: Vec<LayerSpec>, dist: DistConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// A directory of `sample_*.nfrt` files plus `labels.csv`.
    Dir {
        path: PathBuf,
        #[serde(default)]
        class_count: Option<usize>,
    },
    /// NFRT1 tensors, all labeled 0.
    Files(Vec<PathBuf>),
    Bars { count: usize, side: usize, noise: f64 },
    Blobs { count: usize, dim: usize, separation: f64 },
    /// Standard-normal inputs shaped like the model input.
    Gaussian { count: usize },
}

/// A JSON run description. Every field except the ones a subcommand needs is
/// optional; unknown fields are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcommand: Option<Subcommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    /// Number of independent random models drawn from `model` (cascade).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nets: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    /// Training set when it differs from `data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<RuleSpec>,
    /// Add the activation-substitution curve (cascade, theorem1).
    #[serde(default)]
    pub activation: bool,
    /// Explain this class instead of the predicted one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<usize>>,
    /// Measure alignment after the bottom process (cascade).
    #[serde(default)]
    pub with_bottom: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Hidden widths (theorem1).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub widths: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dists: Vec<DistConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub perturbations: Vec<Perturbation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sides: Vec<SplitSide>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<KisVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
}

/// Field path like `model.mlp.dims` from a serde path.
fn field_of(path: &serde_path_to_error::Path) -> String {
    let s = path.to_string();
    if s == "." || s.is_empty() {
        "<root>".into()
    } else {
        s
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = field_of(e.path());
            let inner = e.into_inner();
            let message = inner.to_string();
            let field = match (field.as_str(), message.strip_prefix("unknown field `")) {
                ("<root>", Some(rest)) => rest.split('`').next().unwrap_or("<root>").to_string(),
                _ => field,
            };
            NfrError::config(field, message)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| NfrError::config("--config", format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let cfg = RunConfig::from_json(
            r#"{
                "subcommand": "nfr-check",
                "seed": 3,
                "model": {"mlp": {"dims": [4, 8, 2], "dist": {"kind": "ring"}}},
                "data": {"gaussian": {"count": 5}},
                "rules": [{"kind": "gbp"}, {"kind": "rectgrad", "tau": 0.0}],
                "perturbations": [{"mode": "remove", "keep_fraction": 0.5}],
                "sides": ["max", "min"],
                "variants": ["kis", "insertion_abs"]
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.subcommand, Some(Subcommand::NfrCheck));
        assert_eq!(cfg.rules.len(), 2);
        assert_eq!(cfg.model, Some(ModelConfig::Mlp { dims: vec![4, 8, 2], dist: DistConfig { kind: DistKind::Ring, scale: 1.0 } }));
        let again = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let field = |text: &str| match RunConfig::from_json(text) {
            Err(NfrError::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(field(r#"{"sed": 1}"#), "sed");
        assert_eq!(field(r#"{"model": {"mlp": {"dims": "x", "dist": {"kind": "gaussian"}}}}"#), "model.mlp.dims");
        assert_eq!(field(r#"{"rules": [{"kind": "gbp", "qq": 1}]}"#), "rules[0].qq");
        assert_eq!(field(r#"{"trials": -1}"#), "trials");
        assert!(matches!(Subcommand::parse("plot"), Err(NfrError::Config { .. })));
        assert_eq!(Subcommand::parse("nfr-check").unwrap(), Subcommand::NfrCheck);
    }
}
