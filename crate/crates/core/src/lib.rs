//! Cross-fitted multiply-robust estimation of natural direct and indirect
//! effects with neural-network nuisance models.

pub mod domain;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod neurnet;
pub mod nuisance;
pub mod synth;
pub mod wavelet;

pub use domain::{
    effect_arithmetic, mu_bounds, read_observations_csv, validate_table, write_observations_csv,
    Effect, EffectReport, MediatorKind, NuisanceFit, ObservationTable, PhiScores, Z_95,
};
pub use error::{Error, Result};
pub use estimator::{
    bias_decomposition, crossfit, crossfit_traced, estimate, estimate_effects, expected_score,
    phi_means, score_phi, score_phi_total, BiasDecomposition, DiscreteLaw, Estimate,
    FoldDiagnostics, DEFAULT_FOLDS, MAX_FOLDS, MIN_FOLDS,
};
pub use harness::{
    run_benchmark, BenchmarkConfig, BenchmarkResult, EffectSummary, Histogram, LearnerConfig,
    LearnerSummary,
};
pub use neurnet::{NetworkModel, NetworkSpec};
pub use nuisance::{
    assign_folds, cv_select, default_grid, fit_nuisances, fit_nuisances_traced, parse_grid_json,
    pretune_plan, FitPlan, LearnerKind, TargetDiagnostic, TargetId,
};
pub use synth::{generate, oracle_nuisance_fit, CaseId, OracleNuisance, ScenarioSpec};
