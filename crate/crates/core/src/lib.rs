//! Exponential dichotomies, node operators, and Fredholm indices for linear
//! nonautonomous systems u'(t) = A(t) u(t) in finite dimension.
//!
//! The crate builds evolution families, constructs dichotomy projections on
//! both half-lines, truncates the difference operator to windows, and
//! cross-checks the resulting index data: the index of the difference
//! operator, the index of the node operator, the index of the Fredholm pair
//! of limit subspaces, and — for selfadjoint asymptotics — the spectral flow
//! all have to agree.

pub mod analyze;
pub mod dichotomy;
pub mod error;
pub mod evolution;
pub mod flow;
pub mod fredholm;
pub mod numerics;
pub mod problems;
pub mod reduction;
pub mod subspace;
pub mod verify;

pub use analyze::{
    run as run_analysis, AnalysisTask, IntegerSummary, PlotData, RunOptions, RunReport,
    StageReport, StageStatus, Verdict, REPORT_SCHEMA,
};
pub use dichotomy::{
    dichotomy_constants, extend_to_continuous, halfline_dichotomy, verify_dichotomy,
    DichotomyCheck, DichotomyRecord, Method, Side,
};
pub use error::{Error, Result};
pub use evolution::{discretize, long_product, CoeffFn, EvolutionFamily, FamilyKind, StepWindow};
pub use flow::{
    commensurability_check, perturbation_invariance, piecewise_pipeline,
    random_vanishing_perturbation, spectral_flow, CommensurabilityReport, Crossing, FlowReport,
    InvarianceReport, PiecewiseReport, SelfadjointPath,
};
pub use fredholm::{
    dichotomy_theorem_verify, left_inverse_dplus, Boundary, FredholmNumbers, NodeOperator,
    TheoremReport, TruncatedD,
};
pub use problems::{find as find_problem, registry, Expectation, Problem, ProblemKind};
pub use reduction::{
    grid_difference, map_b, map_r, map_s, verify_correspondence, CorrespondenceReport,
    GridSequence, SampledFunction, TimeFunction, WeightFunction,
};
pub use subspace::{
    fredholm_pair, hyperbolicity_gap, relative_dimension, riesz_projection, stable_projector,
    PairReport, Projector, Subspace,
};
pub use verify::{available_tags, checks, run_verify_suite, Check, CheckOutcome, SuiteSummary};
