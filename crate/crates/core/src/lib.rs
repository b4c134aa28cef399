//! Modified-backpropagation attribution lab for bias-free ReLU networks.

pub mod error;
pub mod kis;
pub mod lab;
pub mod net;
pub mod rules;
pub mod runner;
pub mod sampling;
pub mod tensor;

pub use error::{NfrError, Result};
pub use kis::{kis, normalize_attribution, KisReport, KisVariant};
pub use lab::{alignment, cascade_substitute, AlignmentReport, CascadeCurve, CurveRule};
pub use net::{forward, ForwardTrace, LabeledDataset, Layer, LayerSpec, Network};
pub use rules::{attribute, nfr_check, Attribution, RuleKind, RuleSpec};
pub use sampling::{DistKind, DistSpec};
pub use tensor::{dot, norm2, Shape, Tensor};
