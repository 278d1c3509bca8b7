//! Weighted-sum-rate maximization via successive convex approximation: the
//! concave surrogate construction, the projected-gradient inner solver, the
//! outer loop with rank repair and permutation strategies, the
//! direct-optimization baseline, and power allocation for the fixed
//! baseline precoders.

mod algorithm;
mod baselines;
mod complexity;
mod problem;
mod solver;

pub use algorithm::{
    direct_sca, fixed_permutation_order, permutation_search, permutations,
    rank_repair_and_reoptimize, recover_outcome, sca_maximize, single_user_capacity, sns_geometry,
    sns_optimize_order, water_filling, Csi, InitStrategy, PermutationSearch, PermutationStrategy,
    RepairedOutcome, ScaOptions, ScaOutcome, ScaState, SnsOptions, SnsRun,
};
pub use baselines::{baseline_pa, BaselineRun, BaselineScheme};
pub use complexity::{complexity_report, variable_count, ComplexityEntry};
pub use problem::{
    fo_logdet, surrogate_rates, AffineLogDet, SurrogateGradient, SurrogateModel, SurrogateValue,
    VarKind, VarSet, WsrGeometry,
};
pub use solver::{solve_inner, InnerSolution, KktResiduals, SolveStatus, SolverOptions};
