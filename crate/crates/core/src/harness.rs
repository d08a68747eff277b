//! Replicated benchmark harness for the synthetic designs: draw R datasets
//! from one scenario, run every configured learner through the cross-fitted
//! estimator on each dataset, and summarize bias, spread, RMSE, and
//! confidence-interval coverage against the design truths.
//!
//! Within one replicate every learner sees the same dataset, so learner
//! columns are directly comparable. Replicates run in parallel; results are
//! collected in replicate order and reduced sequentially, so the output is
//! bitwise identical regardless of thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{Effect, MediatorKind, ObservationTable};
use crate::error::{Error, Result};
use crate::estimator::{estimate_effects, crossfit, DEFAULT_FOLDS};
use crate::neurnet::NetworkSpec;
use crate::nuisance::{pretune_plan, FitPlan, LearnerKind};
use crate::synth::{generate, OracleNuisance, ScenarioSpec};

/// Learner configuration by name; the oracle is resolved against the
/// scenario when the benchmark runs.
#[derive(Debug, Clone)]
pub enum LearnerConfig {
    Oracle,
    Linear,
    Dnn(Vec<NetworkSpec>),
}

impl LearnerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerConfig::Oracle => "oracle",
            LearnerConfig::Linear => "linear",
            LearnerConfig::Dnn(_) => "dnn",
        }
    }
}

/// One benchmark run: R replicates of a scenario, estimated by each learner.
#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub scenario: ScenarioSpec,
    pub replicates: usize,
    /// Cross-fitting folds V.
    pub folds: usize,
    /// Folds for DNN hyperparameter selection.
    pub cv_folds: usize,
    pub learners: Vec<LearnerConfig>,
    /// Optional external tuning sample: when present, DNN hyperparameters
    /// are selected once on it and reused across all replicates and folds.
    pub tune_table: Option<ObservationTable>,
}

impl BenchmarkConfig {
    pub fn new(scenario: ScenarioSpec, replicates: usize, folds: usize) -> BenchmarkConfig {
        BenchmarkConfig {
            scenario,
            replicates,
            folds,
            cv_folds: 3,
            learners: vec![LearnerConfig::Oracle],
            tune_table: None,
        }
    }
}

pub const HISTOGRAM_BINS: usize = 20;

/// Equal-width bin counts over the replicate estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn build(values: &[f64]) -> Histogram {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            return Histogram {
                lo,
                hi,
                counts: vec![values.len()],
            };
        }
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        let mut counts = vec![0usize; HISTOGRAM_BINS];
        for &v in values {
            let bin = (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
        Histogram { lo, hi, counts }
    }
}

/// Replication summary for one learner × effect cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectSummary {
    pub effect: Effect,
    pub truth: f64,
    pub mean_estimate: f64,
    /// mean_estimate − truth.
    pub bias: f64,
    /// Monte-Carlo spread with the population convention (divide by R), so
    /// that rmse² = bias² + se_population² holds exactly.
    pub se_population: f64,
    /// Spread with the sample convention (divide by R−1).
    pub se_sample: f64,
    pub rmse: f64,
    /// Mean of the per-replicate standard-error estimates σ̂/√n.
    pub mean_se_estimate: f64,
    /// Share of replicates whose 95% interval covers the truth.
    pub coverage: f64,
    /// How many replicates hit the negative-variance floor.
    pub variance_floored_count: usize,
    pub histogram: Histogram,
}

/// All effect summaries for one learner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnerSummary {
    pub learner: String,
    pub effects: BTreeMap<Effect, EffectSummary>,
}

/// Complete benchmark output (deliberately free of wall-clock fields so a
/// rerun from the same configuration is byte-identical).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkResult {
    pub case: String,
    pub n: usize,
    pub p: usize,
    pub alpha: f64,
    pub base_seed: u64,
    pub replicates: usize,
    pub folds: usize,
    pub truths: BTreeMap<Effect, f64>,
    pub learners: Vec<LearnerSummary>,
}

/// Per-replicate, per-learner estimation record.
struct ReplicateRecord {
    estimates: BTreeMap<Effect, f64>,
    ses: BTreeMap<Effect, f64>,
    covered: BTreeMap<Effect, bool>,
    floored: BTreeMap<Effect, bool>,
}

fn run_replicate(
    cfg: &BenchmarkConfig,
    plans: &[FitPlan],
    truths: &BTreeMap<Effect, f64>,
    replicate: usize,
) -> Result<Vec<ReplicateRecord>> {
    let seed = cfg.scenario.seed.wrapping_add(replicate as u64);
    let mut spec = cfg.scenario.clone();
    spec.seed = seed;
    let (table, oracle) = generate(&spec)?;
    let mut records = Vec::with_capacity(cfg.learners.len());
    for (learner, base_plan) in cfg.learners.iter().zip(plans) {
        let kind = match learner {
            LearnerConfig::Oracle => LearnerKind::Oracle(oracle.clone()),
            LearnerConfig::Linear => LearnerKind::Linear,
            LearnerConfig::Dnn(grid) => LearnerKind::Dnn(grid.clone()),
        };
        let plan = base_plan.clone().with_seed(seed);
        let scores = crossfit(&table, &kind, &plan, cfg.folds, seed)?;
        let reports = estimate_effects(&scores)?;
        let mut estimates = BTreeMap::new();
        let mut ses = BTreeMap::new();
        let mut covered = BTreeMap::new();
        let mut floored = BTreeMap::new();
        for (effect, report) in reports {
            let truth = truths[&effect];
            estimates.insert(effect, report.estimate);
            ses.insert(effect, report.se());
            covered.insert(effect, report.ci_low <= truth && truth <= report.ci_high);
            floored.insert(effect, report.variance_floored);
        }
        records.push(ReplicateRecord {
            estimates,
            ses,
            covered,
            floored,
        });
    }
    Ok(records)
}

/// Run the benchmark. Replicate r uses base seed + r for data generation,
/// fold assignment, and learner seeding; any replicate failure surfaces as
/// [`Error::ReplicateFailed`] carrying the smallest failing replicate index.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    if cfg.replicates < 2 {
        return Err(Error::InvalidConfig(
            "replicates must be at least 2 (spread summaries need repetition)".into(),
        ));
    }
    if cfg.learners.is_empty() {
        return Err(Error::InvalidConfig(
            "at least one learner must be configured".into(),
        ));
    }
    cfg.scenario.validate()?;
    let oracle = OracleNuisance::new(cfg.scenario.case_id, cfg.scenario.alpha)?;
    let truths = oracle.effect_truths();

    // Resolve one fit plan per learner up front: DNN learners tune on the
    // external sample here (once), never inside replicates.
    let mut plans = Vec::with_capacity(cfg.learners.len());
    for learner in &cfg.learners {
        let base = FitPlan::new(MediatorKind::Continuous).with_cv_folds(cfg.cv_folds);
        let plan = match (learner, &cfg.tune_table) {
            (LearnerConfig::Dnn(grid), Some(tune)) => pretune_plan(grid, tune, &base)?,
            _ => base,
        };
        plans.push(plan);
    }

    let outcomes: Vec<Result<Vec<ReplicateRecord>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, &plans, &truths, r))
        .collect();
    let mut records = Vec::with_capacity(cfg.replicates);
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(rec) => records.push(rec),
            Err(source) => {
                return Err(Error::ReplicateFailed {
                    replicate: r,
                    source: Box::new(source),
                })
            }
        }
    }

    let r_f = cfg.replicates as f64;
    let mut learners = Vec::with_capacity(cfg.learners.len());
    for (li, learner) in cfg.learners.iter().enumerate() {
        let mut effects = BTreeMap::new();
        for effect in Effect::ALL {
            let truth = truths[&effect];
            let estimates: Vec<f64> =
                records.iter().map(|r| r[li].estimates[&effect]).collect();
            let mean_estimate = estimates.iter().sum::<f64>() / r_f;
            let centered_ss: f64 = estimates
                .iter()
                .map(|e| (e - mean_estimate) * (e - mean_estimate))
                .sum();
            let se_population = (centered_ss / r_f).sqrt();
            let se_sample = (centered_ss / (r_f - 1.0)).sqrt();
            let rmse = (estimates.iter().map(|e| (e - truth) * (e - truth)).sum::<f64>()
                / r_f)
                .sqrt();
            let mean_se_estimate =
                records.iter().map(|r| r[li].ses[&effect]).sum::<f64>() / r_f;
            let coverage = records.iter().filter(|r| r[li].covered[&effect]).count() as f64 / r_f;
            let variance_floored_count =
                records.iter().filter(|r| r[li].floored[&effect]).count();
            effects.insert(
                effect,
                EffectSummary {
                    effect,
                    truth,
                    mean_estimate,
                    bias: mean_estimate - truth,
                    se_population,
                    se_sample,
                    rmse,
                    mean_se_estimate,
                    coverage,
                    variance_floored_count,
                    histogram: Histogram::build(&estimates),
                },
            );
        }
        learners.push(LearnerSummary {
            learner: learner.name().to_string(),
            effects,
        });
    }

    Ok(BenchmarkResult {
        case: cfg.scenario.case_id.to_string(),
        n: cfg.scenario.n,
        p: cfg.scenario.p,
        alpha: cfg.scenario.alpha,
        base_seed: cfg.scenario.seed,
        replicates: cfg.replicates,
        folds: cfg.folds,
        truths,
        learners,
    })
}

/// Convenience: an oracle-only benchmark at the default fold count.
pub fn oracle_benchmark(scenario: ScenarioSpec, replicates: usize) -> Result<BenchmarkResult> {
    run_benchmark(&BenchmarkConfig::new(scenario, replicates, DEFAULT_FOLDS))
}
