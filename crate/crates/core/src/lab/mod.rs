//! Alignment experiments: cascade and activation substitution, width and
//! isotropy sweeps, orthogonal-frame comparisons, weight geometry, sanity
//! checks and activation splits.

mod alignment;
mod cascade;
mod geometry;
mod sanity;
mod split;
mod theorem;

pub use alignment::{alignment, AlignmentReport};
pub use cascade::{
    activation_raw, activation_substitute, cascade_curve, cascade_raw, cascade_substitute, curve_map, curve_over,
    full_depths, CascadeCurve, ClassMode, CurvePoint, CurveRule,
};
pub use geometry::{orthogonality_stats, LayerGeometry, LayerGeometryStats, MAX_PAIRS};
pub use sanity::{sanity_experiment, Perturbation, SanityRecord, SanityTable};
pub use split::{activation_split_attrib, split_positions, SplitSide};
pub use theorem::{
    theorem1_experiment, theorem2_equality_gap, theorem2_experiment, theorem2_pair, Theorem1Summary, Theorem2Summary,
    EQUALITY_TOL, THEOREM2_SLACK,
};
