//! Multiply-robust estimation of the cross-world means
//! φ(d,d') = E[Y(d, M(d'))] and the natural effects built from them.
//!
//! The per-observation score for φ(d,d') combines three terms — a
//! density-ratio-weighted outcome residual, an inverse-propensity-weighted
//! cross-world regression residual, and the cross-world regression itself:
//!
//! ```text
//! ψ_{d,d'}(O) = 1{D=d}·w(X,M)·(Y − μ̂(X,d,M))
//!             + (1 − 1{D=d'}/â(d'|X))·ĉ(X,d,d')
//!             + (1{D=d'}/â(d'|X))·μ̂(X,d,M)
//! ```
//!
//! where ĉ(x,d,d') estimates ∫ μ̂(x,d,m) f(m|x,d') dm and the mediator
//! weight w is f̂(M|X,d')/(â(d|X)·f̂(M|X,d)) — computed on the continuous
//! path through the Bayes rewrite â(d'|X,M)/(â(d|X,M)·â(d'|X)), which
//! needs only binary regressions. For d = d' the score collapses to the
//! one-arm form 1{D=d}·Y/â(d|X) + (1 − 1{D=d}/â(d|X))·ĉ(X,d,d), and the
//! implementation reuses that reduced form so ψ_{d,d} and the total-effect
//! score are bitwise identical.
//!
//! Estimation is V-fold cross-fitted: nuisances are trained on V−1 folds
//! and scored on the held-out fold, scores are pooled, and each effect's
//! variance comes from the empirical second moment of its score contrast.
//!
//! The module also carries a fully discrete verification oracle
//! ([`DiscreteLaw`]): closed-form φ, exact enumeration of E[ψ̃] under a
//! truth law when the score is built from a (possibly wrong) fitted law,
//! and the three-term bias decomposition whose products of nuisance errors
//! make the multiple-robustness property checkable to machine precision.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::Serialize;

use crate::domain::{
    effect_arithmetic, Effect, EffectReport, MediatorKind, NuisanceFit, ObservationTable,
    PhiScores,
};
use crate::error::{Error, Result};
use crate::nuisance::{assign_folds, fit_nuisances_traced, FitPlan, LearnerKind, TargetDiagnostic};

/// Cross-fitting fold counts the estimator accepts.
pub const MIN_FOLDS: usize = 2;
pub const MAX_FOLDS: usize = 10;
/// Default number of cross-fitting folds.
pub const DEFAULT_FOLDS: usize = 5;

fn check_pair(d: u8, d_prime: u8) -> Result<()> {
    if d > 1 || d_prime > 1 {
        return Err(Error::InvalidConfig(format!(
            "treatment indices must be 0 or 1, got ({d}, {d_prime})"
        )));
    }
    Ok(())
}

fn check_fit_length(table: &ObservationTable, fit: &NuisanceFit) -> Result<()> {
    if fit.a_x.len() != table.len() {
        return Err(Error::DimensionMismatch {
            expected: table.len(),
            got: fit.a_x.len(),
        });
    }
    Ok(())
}

/// Propensity of arm `d` from the fitted P̂r(D=1|X).
fn arm_propensity(a1: f64, d: u8) -> f64 {
    if d == 1 {
        a1
    } else {
        1.0 - a1
    }
}

/// Reduced one-arm score whose mean estimates φ(d,d) — also the building
/// block of the total effect.
pub fn score_phi_total(table: &ObservationTable, fit: &NuisanceFit, d: u8) -> Result<Vec<f64>> {
    check_pair(d, d)?;
    check_fit_length(table, fit)?;
    let n = table.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let a_d = arm_propensity(fit.a_x[i], d);
        let w = if table.d[i] == d { 1.0 / a_d } else { 0.0 };
        out.push(w * table.y[i] + (1.0 - w) * fit.cross_mu[d as usize][d as usize][i]);
    }
    Ok(out)
}

/// Per-observation score for φ(d,d'). For d = d' this delegates to
/// [`score_phi_total`], so the diagonal scores are bitwise equal to the
/// total-effect scores.
pub fn score_phi(
    table: &ObservationTable,
    fit: &NuisanceFit,
    d: u8,
    d_prime: u8,
) -> Result<Vec<f64>> {
    check_pair(d, d_prime)?;
    if d == d_prime {
        return score_phi_total(table, fit, d);
    }
    check_fit_length(table, fit)?;
    let n = table.len();
    let mu_d = if d == 1 { &fit.mu_d1 } else { &fit.mu_d0 };
    let cross = &fit.cross_mu[d as usize][d_prime as usize];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Mediator weight f̂(M|x,d')/(â(d|x)·f̂(M|x,d)), by path.
        let w_med = match fit.mediator_kind {
            MediatorKind::Continuous => {
                let a_xm = fit.a_xm.as_ref().expect("continuous fit carries a_xm")[i];
                arm_propensity(a_xm, d_prime)
                    / (arm_propensity(a_xm, d) * arm_propensity(fit.a_x[i], d_prime))
            }
            MediatorKind::Binary => {
                let f_d0 = fit.f_m_d0.as_ref().expect("binary fit carries f_m_d0")[i];
                let f_d1 = fit.f_m_d1.as_ref().expect("binary fit carries f_m_d1")[i];
                let f_at = |arm: u8| if arm == 1 { f_d1 } else { f_d0 };
                f_at(d_prime) / (arm_propensity(fit.a_x[i], d) * f_at(d))
            }
        };
        let ind_d = f64::from(table.d[i] == d);
        let ind_dp = f64::from(table.d[i] == d_prime);
        let inv_a_dp = 1.0 / arm_propensity(fit.a_x[i], d_prime);
        let term1 = ind_d * w_med * (table.y[i] - mu_d[i]);
        let term2 = (1.0 - ind_dp * inv_a_dp) * cross[i];
        let term3 = ind_dp * inv_a_dp * mu_d[i];
        out.push(term1 + term2 + term3);
    }
    Ok(out)
}

/// All six score vectors (four φ(d,d') and the two one-arm reductions) for
/// one table/fit pair.
pub fn compute_scores(table: &ObservationTable, fit: &NuisanceFit) -> Result<PhiScores> {
    let psi_total = [
        score_phi_total(table, fit, 0)?,
        score_phi_total(table, fit, 1)?,
    ];
    let psi = [
        [psi_total[0].clone(), score_phi(table, fit, 0, 1)?],
        [score_phi(table, fit, 1, 0)?, psi_total[1].clone()],
    ];
    PhiScores::from_parts(psi, psi_total)
}

/// Per-fold fitting record from a cross-fitted run.
#[derive(Debug, Clone, Serialize)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub train_rows: usize,
    pub held_rows: usize,
    pub targets: Vec<TargetDiagnostic>,
}

const FOLD_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// V-fold cross-fitting with diagnostics: rows are partitioned by
/// [`assign_folds`] under `seed`; for each fold the nuisances are fit on
/// the other V−1 folds (with a fold-derived plan seed) and scored on the
/// held-out rows; scores are scattered back into sample order.
pub fn crossfit_traced(
    table: &ObservationTable,
    kind: &LearnerKind,
    plan: &FitPlan,
    folds: usize,
    seed: u64,
) -> Result<(PhiScores, Vec<FoldDiagnostics>)> {
    if !(MIN_FOLDS..=MAX_FOLDS).contains(&folds) {
        return Err(Error::FoldCountOutOfRange { v: folds });
    }
    let n = table.len();
    let fold_rows = assign_folds(n, folds, seed)?;
    let mut psi: [[Vec<f64>; 2]; 2] =
        std::array::from_fn(|_| std::array::from_fn(|_| vec![f64::NAN; n]));
    let mut psi_total: [Vec<f64>; 2] = std::array::from_fn(|_| vec![f64::NAN; n]);
    let mut diagnostics = Vec::with_capacity(folds);
    for (k, held) in fold_rows.iter().enumerate() {
        let mut train_rows: Vec<usize> = Vec::with_capacity(n - held.len());
        for (other, rows) in fold_rows.iter().enumerate() {
            if other != k {
                train_rows.extend_from_slice(rows);
            }
        }
        let train = table.select(&train_rows);
        let held_table = table.select(held);
        let mut fold_plan = plan.clone();
        fold_plan.seed = plan
            .seed
            .wrapping_add((k as u64 + 1).wrapping_mul(FOLD_SEED_MIX));
        let (fit, targets) = fit_nuisances_traced(&train, &held_table, kind, &fold_plan)?;
        let scores = compute_scores(&held_table, &fit)?;
        for (local, &row) in held.iter().enumerate() {
            for d in 0..2usize {
                psi_total[d][row] = scores.psi_total(d as u8)[local];
                for dp in 0..2usize {
                    psi[d][dp][row] = scores.psi(d as u8, dp as u8)[local];
                }
            }
        }
        diagnostics.push(FoldDiagnostics {
            fold: k,
            train_rows: train_rows.len(),
            held_rows: held.len(),
            targets,
        });
    }
    // Defensive: the fold partition must have scored every row.
    for (row, v) in psi_total[0].iter().enumerate() {
        if v.is_nan() {
            return Err(Error::UncoveredRow { row });
        }
    }
    let scores = PhiScores::from_parts(psi, psi_total)?;
    Ok((scores, diagnostics))
}

/// [`crossfit_traced`] without the diagnostics.
pub fn crossfit(
    table: &ObservationTable,
    kind: &LearnerKind,
    plan: &FitPlan,
    folds: usize,
    seed: u64,
) -> Result<PhiScores> {
    crossfit_traced(table, kind, plan, folds, seed).map(|(scores, _)| scores)
}

/// Sample means of the four φ(d,d') score vectors.
pub fn phi_means(scores: &PhiScores) -> BTreeMap<(u8, u8), f64> {
    let mut out = BTreeMap::new();
    for d in 0..2u8 {
        for dp in 0..2u8 {
            let v = scores.psi(d, dp);
            out.insert((d, dp), v.iter().sum::<f64>() / v.len() as f64);
        }
    }
    out
}

fn contrast(scores: &PhiScores, effect: Effect) -> (Vec<f64>, Vec<f64>) {
    let (plus, minus) = match effect {
        Effect::Total => (scores.psi_total(1), scores.psi_total(0)),
        Effect::Nde0 => (scores.psi(1, 0), scores.psi(0, 0)),
        Effect::Nde1 => (scores.psi(1, 1), scores.psi(0, 1)),
        Effect::Nie0 => (scores.psi(0, 1), scores.psi(0, 0)),
        Effect::Nie1 => (scores.psi(1, 1), scores.psi(1, 0)),
    };
    (plus.to_vec(), minus.to_vec())
}

/// Point estimates, variances, and confidence intervals for every effect.
///
/// Point estimates come from [`effect_arithmetic`] applied to the φ̂ means,
/// so the telescoping identities hold by construction. Each variance is
/// N⁻² Σᵢ δᵢ² − N⁻¹ τ̂², the plug-in estimate of Var(τ̂) from the score
/// contrast δᵢ; a negative value (possible only through rounding) is
/// floored at zero and flagged on the report.
pub fn estimate_effects(scores: &PhiScores) -> Result<BTreeMap<Effect, EffectReport>> {
    let n = scores.n();
    let estimates = effect_arithmetic(&phi_means(scores))?;
    let mut out = BTreeMap::new();
    for (&effect, &estimate) in &estimates {
        let (plus, minus) = contrast(scores, effect);
        let sum_sq: f64 = plus
            .iter()
            .zip(&minus)
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum();
        let n_f = n as f64;
        let raw_variance = sum_sq / (n_f * n_f) - estimate * estimate / n_f;
        out.insert(effect, EffectReport::from_estimate(effect, estimate, raw_variance, n));
    }
    Ok(out)
}

/// Full estimation result.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub reports: BTreeMap<Effect, EffectReport>,
    /// Cross-world mean estimates φ̂(d,d').
    pub phi: BTreeMap<(u8, u8), f64>,
    pub n: usize,
    pub folds: usize,
    pub fold_diagnostics: Vec<FoldDiagnostics>,
}

/// Cross-fit, score, and report every effect in one call.
pub fn estimate(
    table: &ObservationTable,
    kind: &LearnerKind,
    plan: &FitPlan,
    folds: usize,
    seed: u64,
) -> Result<Estimate> {
    let (scores, fold_diagnostics) = crossfit_traced(table, kind, plan, folds, seed)?;
    let reports = estimate_effects(&scores)?;
    let phi = phi_means(&scores);
    Ok(Estimate {
        reports,
        phi,
        n: table.len(),
        folds,
        fold_diagnostics,
    })
}

// ---------------------------------------------------------------------------
// Discrete verification oracle
// ---------------------------------------------------------------------------

/// A fully discrete data law: scalar X on a finite support, binary D and M,
/// and a mean outcome per (x,d,m) cell. Small enough to enumerate, so the
/// identification functional, the score's expectation, and the estimator's
/// bias under misspecified nuisances are all exact arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    /// P(X = x_k), all positive, summing to one.
    px: Vec<f64>,
    /// a(1|x_k).
    a1: Vec<f64>,
    /// f1[d][k] = f(M=1 | x_k, d).
    f1: [Vec<f64>; 2],
    /// mu[d][m][k] = μ(x_k, d, m).
    mu: [[Vec<f64>; 2]; 2],
}

impl DiscreteLaw {
    pub fn new(
        px: Vec<f64>,
        a1: Vec<f64>,
        f1: [Vec<f64>; 2],
        mu: [[Vec<f64>; 2]; 2],
    ) -> Result<DiscreteLaw> {
        let k = px.len();
        if k == 0 {
            return Err(Error::NonDiscreteLaw("empty X support".into()));
        }
        let total: f64 = px.iter().sum();
        if (total - 1.0).abs() > 1e-12 || px.iter().any(|&p| p <= 0.0) {
            return Err(Error::NonDiscreteLaw(format!(
                "P(X) must be positive and sum to 1 (sum = {total})"
            )));
        }
        for (name, probs) in [("a(1|x)", &a1), ("f(1|x,0)", &f1[0]), ("f(1|x,1)", &f1[1])] {
            if probs.len() != k {
                return Err(Error::NonDiscreteLaw(format!(
                    "{name} has {} entries for {k} support points",
                    probs.len()
                )));
            }
            if probs.iter().any(|&p| !(0.0..=1.0).contains(&p) || p == 0.0 || p == 1.0) {
                return Err(Error::NonDiscreteLaw(format!(
                    "{name} must lie strictly inside (0, 1)"
                )));
            }
        }
        for d in 0..2 {
            for m in 0..2 {
                if mu[d][m].len() != k {
                    return Err(Error::NonDiscreteLaw(format!(
                        "mu[{d}][{m}] has {} entries for {k} support points",
                        mu[d][m].len()
                    )));
                }
                if mu[d][m].iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonDiscreteLaw(format!(
                        "mu[{d}][{m}] contains a non-finite value"
                    )));
                }
            }
        }
        Ok(DiscreteLaw { px, a1, f1, mu })
    }

    pub fn n_points(&self) -> usize {
        self.px.len()
    }

    /// a(d|x_k).
    pub fn a(&self, d: u8, k: usize) -> f64 {
        arm_propensity(self.a1[k], d)
    }

    /// f(m|x_k, d) for m ∈ {0,1}.
    pub fn f(&self, m: usize, k: usize, d: u8) -> f64 {
        let p1 = self.f1[d as usize][k];
        if m == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    /// μ(x_k, d, m).
    pub fn mu_at(&self, k: usize, d: u8, m: usize) -> f64 {
        self.mu[d as usize][m][k]
    }

    /// Exact cross-world regression Σ_m μ(x_k,d,m)·f(m|x_k,d').
    pub fn cross_mu_at(&self, k: usize, d: u8, d_prime: u8) -> f64 {
        (0..2).map(|m| self.mu_at(k, d, m) * self.f(m, k, d_prime)).sum()
    }

    /// Closed-form identification functional
    /// φ(d,d') = Σ_x p(x) Σ_m μ(x,d,m) f(m|x,d').
    pub fn phi(&self, d: u8, d_prime: u8) -> f64 {
        (0..self.n_points())
            .map(|k| self.px[k] * self.cross_mu_at(k, d, d_prime))
            .sum()
    }

    /// All four φ(d,d') values.
    pub fn phi_grid(&self) -> BTreeMap<(u8, u8), f64> {
        let mut out = BTreeMap::new();
        for d in 0..2u8 {
            for dp in 0..2u8 {
                out.insert((d, dp), self.phi(d, dp));
            }
        }
        out
    }

    /// The effect truths implied by the law.
    pub fn effects(&self) -> Result<BTreeMap<Effect, f64>> {
        effect_arithmetic(&self.phi_grid())
    }

    /// One table row per (x, d, m) atom with Y fixed at this law's μ, plus
    /// each atom's joint probability. Because the score is linear in Y,
    /// summing probability-weighted scores over these rows reproduces the
    /// score's exact expectation under the law.
    fn atoms(&self) -> (ObservationTable, Vec<f64>) {
        let k = self.n_points();
        let n = 4 * k;
        let mut x = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        let mut m = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for idx in 0..k {
            for d_obs in 0..2u8 {
                for m_obs in 0..2usize {
                    x.push(idx as f64);
                    d.push(d_obs);
                    m.push(m_obs as f64);
                    y.push(self.mu_at(idx, d_obs, m_obs));
                    w.push(self.px[idx] * self.a(d_obs, idx) * self.f(m_obs, idx, d_obs));
                }
            }
        }
        let table = ObservationTable {
            x: Array2::from_shape_vec((n, 1), x).expect("atom covariate column"),
            d,
            m,
            y,
            mediator_kind: MediatorKind::Binary,
        };
        (table, w)
    }

    /// Evaluate this law's nuisances at another law's atom rows, through the
    /// production `NuisanceFit` assembly. Errors if any value collides with
    /// the assembly's clipping, which would silently break exact-arithmetic
    /// verification.
    fn nuisance_at(&self, table: &ObservationTable) -> Result<NuisanceFit> {
        let n = table.len();
        let idx_of = |i: usize| table.x[[i, 0]] as usize;
        let a_x: Vec<f64> = (0..n).map(|i| self.a1[idx_of(i)]).collect();
        let f_m_d0: Vec<f64> = (0..n)
            .map(|i| self.f(table.m[i] as usize, idx_of(i), 0))
            .collect();
        let f_m_d1: Vec<f64> = (0..n)
            .map(|i| self.f(table.m[i] as usize, idx_of(i), 1))
            .collect();
        let mu_d0: Vec<f64> = (0..n)
            .map(|i| self.mu_at(idx_of(i), 0, table.m[i] as usize))
            .collect();
        let mu_d1: Vec<f64> = (0..n)
            .map(|i| self.mu_at(idx_of(i), 1, table.m[i] as usize))
            .collect();
        let mut cross_mu: [[Vec<f64>; 2]; 2] =
            std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; n]));
        for d in 0..2u8 {
            for dp in 0..2u8 {
                for i in 0..n {
                    cross_mu[d as usize][dp as usize][i] = self.cross_mu_at(idx_of(i), d, dp);
                }
            }
        }
        let observed_y = table.outcome_range()?;
        let fit = NuisanceFit::assemble(
            MediatorKind::Binary,
            a_x.clone(),
            None,
            Some(f_m_d0.clone()),
            Some(f_m_d1.clone()),
            mu_d0.clone(),
            mu_d1.clone(),
            cross_mu.clone(),
            observed_y,
        )?;
        let clipped = fit.a_x != a_x
            || fit.f_m_d0.as_ref() != Some(&f_m_d0)
            || fit.f_m_d1.as_ref() != Some(&f_m_d1)
            || fit.mu_d0 != mu_d0
            || fit.mu_d1 != mu_d1
            || fit.cross_mu != cross_mu;
        if clipped {
            return Err(Error::NonDiscreteLaw(
                "law values collide with nuisance clipping; verification would be inexact".into(),
            ));
        }
        Ok(fit)
    }
}

/// Exact expectation, under `truth`, of the score built from `fitted`
/// nuisances: E[ψ̃_{d,d'}(O)] by enumeration over the truth law's atoms,
/// routed through the production score path.
pub fn expected_score(
    truth: &DiscreteLaw,
    fitted: &DiscreteLaw,
    d: u8,
    d_prime: u8,
) -> Result<f64> {
    check_pair(d, d_prime)?;
    if truth.n_points() != fitted.n_points() {
        return Err(Error::NonDiscreteLaw(format!(
            "truth has {} support points, fitted {}",
            truth.n_points(),
            fitted.n_points()
        )));
    }
    let (table, weights) = truth.atoms();
    let fit = fitted.nuisance_at(&table)?;
    let scores = score_phi(&table, &fit, d, d_prime)?;
    Ok(scores.iter().zip(&weights).map(|(s, w)| s * w).sum())
}

/// The three bias terms of the cross-world score under misspecification.
///
/// Each term is a product of errors from two of the three nuisance groups
/// (propensity a, mediator law f, outcome regression μ), so the bias
/// E[ψ̃_{d,d'}] − φ(d,d') vanishes whenever at least two groups are correct
/// — the multiple-robustness property. `sum()` reproduces the enumerated
/// bias to machine precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasDecomposition {
    /// Propensity × mediator-law errors.
    pub term_af: f64,
    /// Mediator-law × outcome errors.
    pub term_fmu: f64,
    /// Propensity × outcome errors.
    pub term_amu: f64,
}

impl BiasDecomposition {
    pub fn sum(&self) -> f64 {
        self.term_af + self.term_fmu + self.term_amu
    }
}

/// Exact bias decomposition of E[ψ̃_{d,d'}] − φ(d,d') when the score uses
/// `fitted` nuisances but observations follow `truth`.
pub fn bias_decomposition(
    truth: &DiscreteLaw,
    fitted: &DiscreteLaw,
    d: u8,
    d_prime: u8,
) -> Result<BiasDecomposition> {
    check_pair(d, d_prime)?;
    if truth.n_points() != fitted.n_points() {
        return Err(Error::NonDiscreteLaw(format!(
            "truth has {} support points, fitted {}",
            truth.n_points(),
            fitted.n_points()
        )));
    }
    let mut term_af = 0.0;
    let mut term_fmu = 0.0;
    let mut term_amu = 0.0;
    for k in 0..truth.n_points() {
        let px = truth.px[k];
        let a_ratio_dp = 1.0 - truth.a(d_prime, k) / fitted.a(d_prime, k);
        let a_ratio_d = 1.0 - truth.a(d, k) / fitted.a(d, k);
        for m in 0..2usize {
            let f_t_d = truth.f(m, k, d);
            let f_t_dp = truth.f(m, k, d_prime);
            let f_f_d = fitted.f(m, k, d);
            let f_f_dp = fitted.f(m, k, d_prime);
            let mu_t = truth.mu_at(k, d, m);
            let mu_f = fitted.mu_at(k, d, m);
            term_af += px * a_ratio_dp * (f_f_dp / f_t_dp - 1.0) * mu_f * f_t_dp;
            term_fmu += px * (1.0 - (f_t_d / f_f_d) * (f_f_dp / f_t_dp)) * (mu_f - mu_t) * f_t_dp;
            term_amu += px * a_ratio_d * (f_f_dp / f_f_d) * (mu_f - mu_t) * f_t_d;
        }
    }
    Ok(BiasDecomposition {
        term_af,
        term_fmu,
        term_amu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, CaseId, OracleNuisance, ScenarioSpec};
    use proptest::prelude::*;

    fn truth_law() -> DiscreteLaw {
        DiscreteLaw::new(
            vec![0.4, 0.6],
            vec![0.3, 0.7],
            [vec![0.35, 0.6], vec![0.55, 0.25]],
            [
                [vec![1.0, 2.0], vec![2.5, 1.5]],
                [vec![3.0, 4.0], vec![4.5, 3.5]],
            ],
        )
        .unwrap()
    }

    fn perturbed(law: &DiscreteLaw, wrong_a: bool, wrong_f: bool, wrong_mu: bool) -> DiscreteLaw {
        let mut a1 = law.a1.clone();
        let mut f1 = law.f1.clone();
        let mut mu = law.mu.clone();
        if wrong_a {
            a1 = vec![0.45, 0.55];
        }
        if wrong_f {
            f1 = [vec![0.5, 0.45], vec![0.4, 0.4]];
        }
        if wrong_mu {
            for d in 0..2 {
                for m in 0..2 {
                    for v in mu[d][m].iter_mut() {
                        *v += 0.3;
                    }
                }
            }
        }
        DiscreteLaw::new(law.px.clone(), a1, f1, mu).unwrap()
    }

    #[test]
    fn law_validation_rejects_bad_inputs() {
        assert!(matches!(
            DiscreteLaw::new(vec![], vec![], [vec![], vec![]], Default::default()),
            Err(Error::NonDiscreteLaw(_))
        ));
        assert!(DiscreteLaw::new(
            vec![0.5, 0.6],
            vec![0.3, 0.7],
            [vec![0.35, 0.6], vec![0.55, 0.25]],
            [
                [vec![1.0, 2.0], vec![2.5, 1.5]],
                [vec![3.0, 4.0], vec![4.5, 3.5]],
            ],
        )
        .is_err());
        assert!(DiscreteLaw::new(
            vec![0.4, 0.6],
            vec![0.0, 0.7],
            [vec![0.35, 0.6], vec![0.55, 0.25]],
            [
                [vec![1.0, 2.0], vec![2.5, 1.5]],
                [vec![3.0, 4.0], vec![4.5, 3.5]],
            ],
        )
        .is_err());
    }

    #[test]
    fn score_expectation_matches_phi_under_the_truth() {
        let law = truth_law();
        for d in 0..2u8 {
            for dp in 0..2u8 {
                let enumerated = expected_score(&law, &law, d, dp).unwrap();
                let phi = law.phi(d, dp);
                assert!(
                    (enumerated - phi).abs() < 1e-13,
                    "({d},{dp}): {enumerated} vs {phi}"
                );
            }
        }
    }

    #[test]
    fn two_correct_nuisance_groups_remove_all_bias() {
        let law = truth_law();
        for (wrong_a, wrong_f, wrong_mu) in
            [(true, false, false), (false, true, false), (false, false, true)]
        {
            let fitted = perturbed(&law, wrong_a, wrong_f, wrong_mu);
            for d in 0..2u8 {
                for dp in 0..2u8 {
                    let bias = expected_score(&law, &fitted, d, dp).unwrap() - law.phi(d, dp);
                    assert!(
                        bias.abs() < 1e-10,
                        "pattern a={wrong_a} f={wrong_f} mu={wrong_mu}, ({d},{dp}): bias {bias}"
                    );
                }
            }
        }
        // Every group wrong: the bias must not vanish.
        let all_wrong = perturbed(&law, true, true, true);
        let bias = expected_score(&law, &all_wrong, 1, 0).unwrap() - law.phi(1, 0);
        assert!(bias.abs() > 1e-3, "all-wrong bias {bias}");
    }

    #[test]
    fn bias_terms_reproduce_the_enumerated_bias() {
        let law = truth_law();
        let patterns = [
            (false, false, false),
            (true, false, false),
            (false, true, false),
            (false, false, true),
            (true, true, false),
            (true, false, true),
            (false, true, true),
            (true, true, true),
        ];
        for (wrong_a, wrong_f, wrong_mu) in patterns {
            let fitted = perturbed(&law, wrong_a, wrong_f, wrong_mu);
            for d in 0..2u8 {
                for dp in 0..2u8 {
                    let enumerated =
                        expected_score(&law, &fitted, d, dp).unwrap() - law.phi(d, dp);
                    let terms = bias_decomposition(&law, &fitted, d, dp).unwrap();
                    assert!(
                        (terms.sum() - enumerated).abs() < 1e-12,
                        "pattern a={wrong_a} f={wrong_f} mu={wrong_mu} ({d},{dp}): \
                         terms {} vs enumerated {enumerated}",
                        terms.sum()
                    );
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn bias_identity_holds_for_random_laws(
            px0 in 0.2f64..0.8,
            a in proptest::array::uniform2(0.15f64..0.85),
            ft in proptest::array::uniform4(0.15f64..0.85),
            ff in proptest::array::uniform4(0.15f64..0.85),
            mt in proptest::array::uniform8(1.0f64..4.0),
            shift in proptest::array::uniform8(-0.2f64..0.2),
            af in proptest::array::uniform2(0.15f64..0.85),
        ) {
            let truth = DiscreteLaw::new(
                vec![px0, 1.0 - px0],
                a.to_vec(),
                [vec![ft[0], ft[1]], vec![ft[2], ft[3]]],
                [
                    [vec![mt[0], mt[1]], vec![mt[2], mt[3]]],
                    [vec![mt[4], mt[5]], vec![mt[6], mt[7]]],
                ],
            ).unwrap();
            let mf: Vec<f64> = mt.iter().zip(&shift).map(|(m, s)| m + s).collect();
            // The enumeration is exact only while no fitted value collides
            // with the score assembly's outcome clipping (±10% of the truth
            // outcome span); discard draws where the perturbation escapes it.
            let lo = mt.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = mt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let margin = 0.1 * (hi - lo);
            prop_assume!(mf
                .iter()
                .all(|v| *v > lo - margin + 1e-9 && *v < hi + margin - 1e-9));
            let fitted = DiscreteLaw::new(
                vec![px0, 1.0 - px0],
                af.to_vec(),
                [vec![ff[0], ff[1]], vec![ff[2], ff[3]]],
                [
                    [vec![mf[0], mf[1]], vec![mf[2], mf[3]]],
                    [vec![mf[4], mf[5]], vec![mf[6], mf[7]]],
                ],
            ).unwrap();
            for d in 0..2u8 {
                for dp in 0..2u8 {
                    let enumerated = expected_score(&truth, &fitted, d, dp).unwrap()
                        - truth.phi(d, dp);
                    let terms = bias_decomposition(&truth, &fitted, d, dp).unwrap();
                    prop_assert!((terms.sum() - enumerated).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn diagonal_scores_are_bitwise_the_reduced_form() {
        let spec = ScenarioSpec::new(CaseId::Case1, 500, 5, 11);
        let (table, oracle) = generate(&spec).unwrap();
        let fit = crate::synth::oracle_nuisance_fit(&table, &oracle).unwrap();
        for d in 0..2u8 {
            let diagonal = score_phi(&table, &fit, d, d).unwrap();
            let reduced = score_phi_total(&table, &fit, d).unwrap();
            assert_eq!(diagonal, reduced);
        }
        let scores = compute_scores(&table, &fit).unwrap();
        assert_eq!(scores.psi(1, 1), scores.psi_total(1));
        assert_eq!(scores.psi(0, 0), scores.psi_total(0));
    }

    #[test]
    fn variance_matches_a_hand_computed_example() {
        let psi_total = [vec![0.0, 1.0, 1.0, 2.0], vec![1.0, 2.0, 3.0, 4.0]];
        let psi = [
            [psi_total[0].clone(), psi_total[0].clone()],
            [psi_total[1].clone(), psi_total[1].clone()],
        ];
        let scores = PhiScores::from_parts(psi, psi_total).unwrap();
        let reports = estimate_effects(&scores).unwrap();
        let total = &reports[&Effect::Total];
        // δ = (1,1,2,2): τ̂ = 1.5, Σδ² = 10,
        // Var = 10/16 − 1.5²/4 = 1/16, SE = 1/4.
        assert!((total.estimate - 1.5).abs() < 1e-15);
        assert!((total.variance - 0.0625).abs() < 1e-15);
        assert!((total.se() - 0.25).abs() < 1e-15);
        assert!((total.ci_low - (1.5 - 1.959964 * 0.25)).abs() < 1e-12);
        assert!((total.ci_high - (1.5 + 1.959964 * 0.25)).abs() < 1e-12);
        assert!(!total.variance_floored);
    }

    #[test]
    fn constant_scores_yield_zero_variance_without_panicking() {
        let psi_total = [vec![2.0; 8], vec![3.0; 8]];
        let psi = [
            [psi_total[0].clone(), vec![2.5; 8]],
            [vec![2.5; 8], psi_total[1].clone()],
        ];
        let scores = PhiScores::from_parts(psi, psi_total).unwrap();
        let reports = estimate_effects(&scores).unwrap();
        for report in reports.values() {
            assert!(report.variance >= 0.0);
            assert!(report.variance < 1e-15);
        }
        assert!((reports[&Effect::Total].estimate - 1.0).abs() < 1e-15);
    }

    #[test]
    fn report_estimates_agree_with_phi_arithmetic() {
        let spec = ScenarioSpec::new(CaseId::Case3, 600, 5, 4);
        let (table, oracle) = generate(&spec).unwrap();
        let kind = LearnerKind::Oracle(oracle);
        let plan = FitPlan::new(MediatorKind::Continuous);
        let est = estimate(&table, &kind, &plan, 3, 9).unwrap();
        let from_phi = effect_arithmetic(&est.phi).unwrap();
        for (effect, report) in &est.reports {
            assert_eq!(report.estimate, from_phi[effect]);
        }
        // Telescoping identities inherited from the φ̂ arithmetic.
        let r = &est.reports;
        let lhs = r[&Effect::Total].estimate;
        assert!((lhs - (r[&Effect::Nde0].estimate + r[&Effect::Nie1].estimate)).abs() < 1e-12);
        assert!((lhs - (r[&Effect::Nde1].estimate + r[&Effect::Nie0].estimate)).abs() < 1e-12);
    }

    #[test]
    fn oracle_crossfit_lands_near_the_design_truths() {
        let spec = ScenarioSpec::new(CaseId::Case1, 3000, 5, 7);
        let (table, oracle) = generate(&spec).unwrap();
        let kind = LearnerKind::Oracle(oracle);
        let plan = FitPlan::new(MediatorKind::Continuous);
        let est = estimate(&table, &kind, &plan, 5, 3).unwrap();
        let truths = OracleNuisance::new(CaseId::Case1, 1.2).unwrap().effect_truths();
        for (effect, report) in &est.reports {
            let truth = truths[effect];
            assert!(
                (report.estimate - truth).abs() < 0.2,
                "{effect}: {} vs {truth}",
                report.estimate
            );
            assert!(report.variance > 0.0);
        }
    }

    #[test]
    fn crossfit_is_deterministic_and_fold_seed_sensitive() {
        let spec = ScenarioSpec::new(CaseId::Case1, 400, 5, 2);
        let (table, _) = generate(&spec).unwrap();
        let kind = LearnerKind::Linear;
        let plan = FitPlan::new(MediatorKind::Continuous);
        let a = crossfit(&table, &kind, &plan, 4, 10).unwrap();
        let b = crossfit(&table, &kind, &plan, 4, 10).unwrap();
        assert_eq!(a.psi(1, 0), b.psi(1, 0));
        assert_eq!(a.psi_total(1), b.psi_total(1));
        let c = crossfit(&table, &kind, &plan, 4, 11).unwrap();
        assert_ne!(a.psi(1, 0), c.psi(1, 0));
    }

    #[test]
    fn every_row_receives_a_score() {
        let spec = ScenarioSpec::new(CaseId::Case2, 203, 5, 6);
        let (table, oracle) = generate(&spec).unwrap();
        let kind = LearnerKind::Oracle(oracle);
        let plan = FitPlan::new(MediatorKind::Continuous);
        let scores = crossfit(&table, &kind, &plan, 3, 1).unwrap();
        for d in 0..2u8 {
            assert_eq!(scores.psi_total(d).len(), 203);
            assert!(scores.psi_total(d).iter().all(|v| v.is_finite()));
            for dp in 0..2u8 {
                assert!(scores.psi(d, dp).iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn fold_counts_outside_the_window_are_rejected() {
        let spec = ScenarioSpec::new(CaseId::Case1, 200, 5, 1);
        let (table, oracle) = generate(&spec).unwrap();
        let kind = LearnerKind::Oracle(oracle);
        let plan = FitPlan::new(MediatorKind::Continuous);
        for v in [0usize, 1, 11] {
            assert!(matches!(
                crossfit(&table, &kind, &plan, v, 0),
                Err(Error::FoldCountOutOfRange { .. })
            ));
        }
    }

    #[test]
    fn fold_diagnostics_cover_every_fold() {
        let spec = ScenarioSpec::new(CaseId::Case1, 300, 5, 3);
        let (table, oracle) = generate(&spec).unwrap();
        let kind = LearnerKind::Oracle(oracle);
        let plan = FitPlan::new(MediatorKind::Continuous);
        let (_, diags) = crossfit_traced(&table, &kind, &plan, 3, 8).unwrap();
        assert_eq!(diags.len(), 3);
        for (k, diag) in diags.iter().enumerate() {
            assert_eq!(diag.fold, k);
            assert_eq!(diag.held_rows, 100);
            assert_eq!(diag.train_rows, 200);
        }
    }
}
