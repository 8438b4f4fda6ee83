//! Model selection: level cross-validation, importance weighting and
//! penalized pruning.

pub mod cv;
pub mod prune;
pub mod ratio;

pub use cv::{iwcv_risk, level_cv, make_folds, write_selection_report, FoldPlan, LevelSelection, RiskKind, SelectionRow};
pub use prune::{
    codelength, default_penalty_grid, leaf_penalty, optimal_pruning, sn_penalty, sn_prune, tune_penalty,
    PenalizedNode, PenalizedTree, PruneSolution, PrunedTree, SnVariant,
};
pub use ratio::{auto_ratio_level, estimate_density_ratio, DensityRatio, RatioEstimate};
