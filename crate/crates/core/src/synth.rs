//! Synthetic benchmark scenarios with known true effects and closed-form
//! nuisance functions.
//!
//! Every scenario draws covariates X ~ Uniform([−1,1])^p i.i.d. and then
//!
//! ```text
//! D ~ Bernoulli(s(d(X))),  M = 0.2·D + m(X) + N(0,1),  Y = 0.2·D + M + y(X) + N(0,1)
//! ```
//!
//! where s is the logistic link and d(x), m(x), y(x) are case-specific
//! nonlinear mean functions: simple algebra (Case 1), compositions of simple
//! functions (Case 2), wavelet-built Hölder functions (Cases 3–4), and
//! hierarchical compositions of Hölder functions (Case 5). Only the first
//! five covariates enter the structural equations (first three for Case 5);
//! any further columns are pure noise. Under this design the true effects
//! are τ_tot = 0.4 and τ_NDE(d) = τ_NIE(d) = 0.2 in every case, and all
//! nuisance functions have closed forms, giving an exact "oracle" learner.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{validate_table, Effect, MediatorKind, NuisanceFit, ObservationTable};
use crate::error::{Error, Result};
use crate::wavelet::{build_scaling_table, eta, HolderSpec, ScalingTable};

/// Structural coefficient of D in both the mediator and outcome equations.
const THETA: f64 = 0.2;

/// Default cascade resolution for the wavelet table behind Cases 3–5.
const ORACLE_TABLE_RESOLUTION: u32 = 12;

/// The five benchmark designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseId {
    Case1,
    Case2,
    Case3,
    Case4,
    Case5,
}

impl CaseId {
    pub const ALL: [CaseId; 5] = [
        CaseId::Case1,
        CaseId::Case2,
        CaseId::Case3,
        CaseId::Case4,
        CaseId::Case5,
    ];

    pub fn index(self) -> u8 {
        match self {
            CaseId::Case1 => 1,
            CaseId::Case2 => 2,
            CaseId::Case3 => 3,
            CaseId::Case4 => 4,
            CaseId::Case5 => 5,
        }
    }

    pub fn from_index(index: u8) -> Result<CaseId> {
        CaseId::ALL
            .get(index.wrapping_sub(1) as usize)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("case must be 1..=5, got {index}")))
    }

    /// Covariates that enter the structural equations; further columns are
    /// irrelevant noise.
    pub fn relevant_covariates(self) -> usize {
        match self {
            CaseId::Case5 => 3,
            _ => 5,
        }
    }

    /// Default Hölder smoothness exponent. Cases 1–2 do not use wavelets;
    /// their value is a placeholder that never enters the data.
    pub fn default_alpha(self) -> f64 {
        match self {
            CaseId::Case4 => 0.6,
            CaseId::Case5 => 1.5,
            _ => 1.2,
        }
    }

    fn uses_wavelets(self) -> bool {
        matches!(self, CaseId::Case3 | CaseId::Case4 | CaseId::Case5)
    }
}

impl std::fmt::Display for CaseId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "case{}", self.index())
    }
}

/// Full description of one synthetic draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub case_id: CaseId,
    pub n: usize,
    pub p: usize,
    /// Hölder smoothness exponent for Cases 3–5 (ignored by Cases 1–2).
    pub alpha: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Build a spec with the case's default smoothness exponent.
    pub fn new(case_id: CaseId, n: usize, p: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            case_id,
            n,
            p,
            alpha: case_id.default_alpha(),
            seed,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> ScenarioSpec {
        self.alpha = alpha;
        ScenarioSpec { alpha, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 100 {
            return Err(Error::InvalidConfig(format!(
                "sample size must be at least 100, got {}",
                self.n
            )));
        }
        let required = self.case_id.relevant_covariates();
        if self.p < required {
            return Err(Error::UnsupportedDimension {
                required,
                got: self.p,
            });
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Numerically stable logistic link s(x) = 1 / (1 + e^{−x}).
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn standard_normal_pdf(z: f64) -> f64 {
    (-(z * z) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Closed-form nuisance functions for one scenario:
///
/// * propensity            a(1 | x)      = s(d(x))
/// * mediator density      f(m | x, d)   = N(m; 0.2·d + m(x), 1)
/// * outcome regression    μ(x, d, m)    = 0.2·d + m + y(x)
/// * cross-world mean      ∫ μ(x, d, m) f(m | x, d') dm = 0.2·d + 0.2·d' + m(x) + y(x)
///
/// together with the true effects τ_tot = 0.4, τ_NDE(d) = τ_NIE(d) = 0.2.
#[derive(Debug, Clone)]
pub struct OracleNuisance {
    case_id: CaseId,
    alpha: f64,
    holder: Option<(HolderSpec, Arc<ScalingTable>)>,
}

impl OracleNuisance {
    pub const TAU_TOTAL: f64 = 2.0 * THETA;
    pub const TAU_DIRECT: f64 = THETA;
    pub const TAU_INDIRECT: f64 = THETA;

    pub fn new(case_id: CaseId, alpha: f64) -> Result<OracleNuisance> {
        let holder = if case_id.uses_wavelets() {
            let spec = HolderSpec::standard(alpha)?;
            let table = Arc::new(build_scaling_table(ORACLE_TABLE_RESOLUTION)?);
            Some((spec, table))
        } else {
            None
        };
        Ok(OracleNuisance {
            case_id,
            alpha,
            holder,
        })
    }

    pub fn case_id(&self) -> CaseId {
        self.case_id
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn relevant_covariates(&self) -> usize {
        self.case_id.relevant_covariates()
    }

    fn eta1(&self, t: f64) -> f64 {
        let (spec, table) = self
            .holder
            .as_ref()
            .expect("wavelet table present for Cases 3-5");
        eta(t, spec, table)
    }

    /// Treatment mean function d(x) (the logit of the propensity).
    pub fn mean_d(&self, x: &[f64]) -> f64 {
        match self.case_id {
            CaseId::Case1 => x[0] * x[1] + x[2] * x[3] * x[4] + x[0].sin(),
            CaseId::Case2 => {
                let a = [
                    x[0] * x[1],
                    x[2] * x[3] * x[4],
                    x[0].sin() * x[1].sin(),
                    x[2].sin() * x[3].sin() * x[4].sin(),
                ];
                let b = [(a[0] + a[1]).sin(), a[1].sin(), a[2], a[3]];
                0.5 * (b[0] + b[1]).sin() + 0.5 * (b[2] + b[3])
            }
            CaseId::Case3 | CaseId::Case4 => {
                x[0] * x[1] + x[2] * x[3] * x[4] + 0.5 * self.eta1(0.2 * x[0])
            }
            CaseId::Case5 => {
                let (s_direct, s_composed) = self.case5_inner(x);
                0.2 * s_direct + 0.2 * s_composed
            }
        }
    }

    /// Mediator mean function m(x).
    pub fn mean_m(&self, x: &[f64]) -> f64 {
        match self.case_id {
            CaseId::Case1 => 4.0 * x[..5].iter().map(|&v| (3.0 * v).sin()).sum::<f64>(),
            CaseId::Case2 => {
                let inner: f64 = x[..5].iter().map(|&v| v.sin()).sum();
                5.0 * inner.sin()
            }
            CaseId::Case3 | CaseId::Case4 => {
                x[..5].iter().map(|&v| self.eta1(0.5 * v)).sum::<f64>()
            }
            CaseId::Case5 => {
                let (s_direct, s_composed) = self.case5_inner(x);
                0.5 * s_direct + 0.2 * s_composed
            }
        }
    }

    /// Outcome mean function y(x).
    pub fn mean_y(&self, x: &[f64]) -> f64 {
        match self.case_id {
            CaseId::Case1 => {
                (x[0] + x[1]).powi(2) + 5.0 * x[..5].iter().sum::<f64>().sin()
            }
            CaseId::Case2 => {
                let a = [
                    (x[0] + x[1]).sin(),
                    (x[2] + x[3] + x[4]).sin(),
                    x[..5].iter().sum::<f64>().sin(),
                ];
                let b = [(a[0] + a[1]).sin(), a[2]];
                10.0 * (b[0] + b[1]).sin()
            }
            CaseId::Case3 | CaseId::Case4 => {
                x[0] * x[1] + 3.0 * self.eta1(0.2 * x[..5].iter().sum::<f64>())
            }
            CaseId::Case5 => {
                let (s_direct, s_composed) = self.case5_inner(x);
                0.2 * s_direct + 0.5 * s_composed
            }
        }
    }

    /// The two shared Case-5 building blocks: η(Σ x_i; α) over the first
    /// three covariates, and η(Σ η(x_i; α); α) composed hierarchically.
    fn case5_inner(&self, x: &[f64]) -> (f64, f64) {
        let sum: f64 = x[..3].iter().sum();
        let eta_sum: f64 = x[..3].iter().map(|&v| self.eta1(v)).sum();
        (self.eta1(sum), self.eta1(eta_sum))
    }

    /// a(1 | x) = s(d(x)).
    pub fn propensity(&self, x: &[f64]) -> f64 {
        logistic(self.mean_d(x))
    }

    /// a(1 | x, m) by Bayes' rule. On the logit scale the Gaussian mediator
    /// densities contribute log f(m|x,1) − log f(m|x,0) = 0.2(m − m(x)) − 0.02.
    pub fn propensity_given_mediator(&self, x: &[f64], m: f64) -> f64 {
        let a1 = self.propensity(x);
        let logit = (a1 / (1.0 - a1)).ln() + THETA * (m - self.mean_m(x)) - THETA * THETA / 2.0;
        logistic(logit)
    }

    /// f(m | x, d) = N(m; 0.2·d + m(x), 1).
    pub fn mediator_density(&self, x: &[f64], d: u8, m: f64) -> f64 {
        standard_normal_pdf(m - THETA * f64::from(d) - self.mean_m(x))
    }

    /// μ(x, d, m) = E[Y | X = x, D = d, M = m] = 0.2·d + m + y(x).
    pub fn outcome_mean(&self, x: &[f64], d: u8, m: f64) -> f64 {
        THETA * f64::from(d) + m + self.mean_y(x)
    }

    /// ∫ μ(x, d, m) f(m | x, d') dm = 0.2·d + 0.2·d' + m(x) + y(x); the
    /// Gaussian integral is exact because μ is linear in m.
    pub fn cross_outcome_mean(&self, x: &[f64], d: u8, d_prime: u8) -> f64 {
        THETA * f64::from(d) + THETA * f64::from(d_prime) + self.mean_m(x) + self.mean_y(x)
    }

    /// The scenario's true effects.
    pub fn effect_truths(&self) -> BTreeMap<Effect, f64> {
        BTreeMap::from([
            (Effect::Total, Self::TAU_TOTAL),
            (Effect::Nde0, Self::TAU_DIRECT),
            (Effect::Nde1, Self::TAU_DIRECT),
            (Effect::Nie0, Self::TAU_INDIRECT),
            (Effect::Nie1, Self::TAU_INDIRECT),
        ])
    }
}

/// Per-row random stream: a counter-based seed offset keeps rows independent
/// and lets the generator draw relevant coordinates, treatment, and noise
/// before irrelevant coordinates, so enlarging p never perturbs (D, M, Y).
fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((row as u64 + 1).wrapping_mul(GOLDEN)))
}

/// Draw one scenario: returns the observation table (continuous mediator)
/// and the matching closed-form oracle. Deterministic in `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<(ObservationTable, OracleNuisance)> {
    spec.validate()?;
    let oracle = OracleNuisance::new(spec.case_id, spec.alpha)?;
    let k = spec.case_id.relevant_covariates();
    let (n, p) = (spec.n, spec.p);

    let mut x = vec![0.0_f64; n * p];
    let mut d = vec![0_u8; n];
    let mut m = vec![0.0_f64; n];
    let mut y = vec![0.0_f64; n];
    for row in 0..n {
        let mut rng = row_rng(spec.seed, row);
        let xr = &mut x[row * p..(row + 1) * p];
        // Stream order: relevant coordinates, treatment uniform, mediator
        // noise, outcome noise, then irrelevant coordinates.
        for coord in xr.iter_mut().take(k) {
            *coord = rng.random_range(-1.0..=1.0);
        }
        let u_d: f64 = rng.random();
        let eps_m: f64 = rng.sample(StandardNormal);
        let eps_y: f64 = rng.sample(StandardNormal);
        for coord in xr.iter_mut().skip(k) {
            *coord = rng.random_range(-1.0..=1.0);
        }
        let treated = u_d < oracle.propensity(&xr[..k]);
        d[row] = u8::from(treated);
        m[row] = THETA * f64::from(d[row]) + oracle.mean_m(&xr[..k]) + eps_m;
        y[row] = THETA * f64::from(d[row]) + m[row] + oracle.mean_y(&xr[..k]) + eps_y;
    }
    let x = Array2::from_shape_vec((n, p), x).map_err(|e| Error::RaggedTable(e.to_string()))?;
    let table = validate_table(ObservationTable {
        x,
        d,
        m,
        y,
        mediator_kind: MediatorKind::Continuous,
    })?;
    Ok((table, oracle))
}

/// Evaluate the closed-form nuisances on every row of `table`, producing the
/// same `NuisanceFit` shape a learned fit would produce (including the
/// standard clipping, which is inert for these designs in practice).
pub fn oracle_nuisance_fit(table: &ObservationTable, oracle: &OracleNuisance) -> Result<NuisanceFit> {
    let k = oracle.relevant_covariates();
    if table.n_covariates() < k {
        return Err(Error::ScenarioMismatch(format!(
            "{} needs at least {k} covariates, table has {}",
            oracle.case_id(),
            table.n_covariates()
        )));
    }
    if table.mediator_kind != MediatorKind::Continuous {
        return Err(Error::ScenarioMismatch(
            "synthetic scenarios use a continuous mediator".into(),
        ));
    }
    let n = table.len();
    let mut a_x = Vec::with_capacity(n);
    let mut a_xm = Vec::with_capacity(n);
    let mut mu_d0 = Vec::with_capacity(n);
    let mut mu_d1 = Vec::with_capacity(n);
    let mut cross_mu: [[Vec<f64>; 2]; 2] =
        std::array::from_fn(|_| std::array::from_fn(|_| Vec::with_capacity(n)));
    for i in 0..n {
        let row = table.x.row(i);
        let x = &row.as_slice().expect("row-major covariate matrix")[..k];
        a_x.push(oracle.propensity(x));
        a_xm.push(oracle.propensity_given_mediator(x, table.m[i]));
        mu_d0.push(oracle.outcome_mean(x, 0, table.m[i]));
        mu_d1.push(oracle.outcome_mean(x, 1, table.m[i]));
        for d in 0..2u8 {
            for d_prime in 0..2u8 {
                cross_mu[d as usize][d_prime as usize]
                    .push(oracle.cross_outcome_mean(x, d, d_prime));
            }
        }
    }
    NuisanceFit::assemble(
        MediatorKind::Continuous,
        a_x,
        Some(a_xm),
        None,
        None,
        mu_d0,
        mu_d1,
        cross_mu,
        table.outcome_range()?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn generate_is_deterministic() {
        let spec = ScenarioSpec::new(CaseId::Case1, 10_000, 5, 42);
        let (a, _) = generate(&spec).unwrap();
        let (b, _) = generate(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let (a, _) = generate(&ScenarioSpec::new(CaseId::Case1, 200, 5, 1)).unwrap();
        let (b, _) = generate(&ScenarioSpec::new(CaseId::Case1, 200, 5, 2)).unwrap();
        assert_ne!(a.y, b.y);
    }

    #[test]
    fn effect_truths_are_fixed_across_cases() {
        for case in CaseId::ALL {
            let oracle = OracleNuisance::new(case, case.default_alpha()).unwrap();
            let truths = oracle.effect_truths();
            assert_eq!(truths[&Effect::Total], 0.4);
            for e in [Effect::Nde0, Effect::Nde1, Effect::Nie0, Effect::Nie1] {
                assert_eq!(truths[&e], 0.2);
            }
        }
    }

    #[test]
    fn structural_residual_has_zero_mean_at_scale() {
        // Y − M − 0.2·D − y(X) is exactly the outcome noise; its mean over
        // 10^6 rows must sit within 3 standard errors of zero.
        let spec = ScenarioSpec::new(CaseId::Case1, 1_000_000, 5, 7);
        let (table, oracle) = generate(&spec).unwrap();
        let mut sum = 0.0;
        for i in 0..table.len() {
            let x = &table.x.row(i).as_slice().unwrap().to_vec()[..5];
            sum += table.y[i] - table.m[i] - 0.2 * f64::from(table.d[i]) - oracle.mean_y(x);
        }
        let mean = sum / table.len() as f64;
        assert!(mean.abs() < 3e-3, "residual mean {mean}");
    }

    #[test]
    fn irrelevant_covariates_never_perturb_outcomes() {
        let narrow = ScenarioSpec::new(CaseId::Case1, 200, 5, 99);
        let wide = ScenarioSpec::new(CaseId::Case1, 200, 100, 99);
        let (a, _) = generate(&narrow).unwrap();
        let (b, _) = generate(&wide).unwrap();
        assert_eq!(a.d, b.d);
        assert_eq!(a.m, b.m);
        assert_eq!(a.y, b.y);
        for i in 0..200 {
            for j in 0..5 {
                assert_eq!(a.x[[i, j]], b.x[[i, j]]);
            }
        }
    }

    #[test]
    fn case5_uses_three_relevant_covariates() {
        let narrow = ScenarioSpec::new(CaseId::Case5, 150, 3, 5);
        let wide = ScenarioSpec::new(CaseId::Case5, 150, 8, 5);
        let (a, _) = generate(&narrow).unwrap();
        let (b, _) = generate(&wide).unwrap();
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn rejects_undersized_dimensions() {
        assert!(matches!(
            generate(&ScenarioSpec::new(CaseId::Case1, 200, 4, 0)),
            Err(Error::UnsupportedDimension {
                required: 5,
                got: 4
            })
        ));
        assert!(matches!(
            generate(&ScenarioSpec::new(CaseId::Case5, 200, 2, 0)),
            Err(Error::UnsupportedDimension {
                required: 3,
                got: 2
            })
        ));
        assert!(generate(&ScenarioSpec::new(CaseId::Case1, 99, 5, 0)).is_err());
    }

    #[test]
    fn all_cases_generate_finite_data() {
        for case in CaseId::ALL {
            let spec = ScenarioSpec::new(case, 120, 5, 3);
            let (table, _) = generate(&spec).unwrap();
            assert_eq!(table.len(), 120);
            assert!(table.y.iter().all(|v| v.is_finite()), "{case}");
        }
    }

    #[test]
    fn propensity_at_origin_is_half_for_case1() {
        let oracle = OracleNuisance::new(CaseId::Case1, 1.2).unwrap();
        let x = [0.0; 5];
        assert_eq!(oracle.propensity(&x), 0.5);
    }

    #[test]
    fn cross_mean_at_origin_matches_hand_computation() {
        // Case 1 at x = 0: m(0) = 0, y(0) = 0, so cross_mu(1, 0) = 0.2.
        let oracle = OracleNuisance::new(CaseId::Case1, 1.2).unwrap();
        let x = [0.0; 5];
        assert!((oracle.cross_outcome_mean(&x, 1, 0) - 0.2).abs() < 1e-15);
        assert!((oracle.cross_outcome_mean(&x, 1, 1) - 0.4).abs() < 1e-15);
        assert!((oracle.cross_outcome_mean(&x, 0, 0) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_fit_populates_closed_forms_rowwise() {
        let x = array![[0.0, 0.0, 0.0, 0.0, 0.0], [0.3, -0.2, 0.1, 0.4, -0.5]];
        let table = ObservationTable {
            x,
            d: vec![1, 0],
            m: vec![0.5, -0.3],
            y: vec![0.0, 1.0],
            mediator_kind: MediatorKind::Continuous,
        };
        let oracle = OracleNuisance::new(CaseId::Case1, 1.2).unwrap();
        let fit = oracle_nuisance_fit(&table, &oracle).unwrap();
        assert_eq!(fit.a_x[0], 0.5);
        assert!((fit.cross_mu[1][0][0] - 0.2).abs() < 1e-15);
        // mu(x=0, d, m) = 0.2 d + m.
        assert!((fit.mu_d1[0] - 0.7).abs() < 1e-15);
        assert!((fit.mu_d0[0] - 0.5).abs() < 1e-15);
        let x1 = [0.3, -0.2, 0.1, 0.4, -0.5];
        assert!((fit.a_x[1] - oracle.propensity(&x1)).abs() < 1e-15);
    }

    #[test]
    fn oracle_fit_rejects_dimension_mismatch() {
        let table = ObservationTable {
            x: array![[0.1, 0.2], [0.3, 0.4]],
            d: vec![0, 1],
            m: vec![0.0, 0.0],
            y: vec![0.0, 1.0],
            mediator_kind: MediatorKind::Continuous,
        };
        let oracle = OracleNuisance::new(CaseId::Case1, 1.2).unwrap();
        assert!(matches!(
            oracle_nuisance_fit(&table, &oracle),
            Err(Error::ScenarioMismatch(_))
        ));
    }

    #[test]
    fn cross_mean_matches_monte_carlo_integral() {
        // Fix x, draw M | X = x, D = 0 many times, and average μ(x, 1, M);
        // the closed-form cross-world mean must sit within 3 MC standard
        // errors (sd(μ) = sd(M) = 1).
        let oracle = OracleNuisance::new(CaseId::Case2, 1.2).unwrap();
        let x = [0.4, -0.7, 0.2, 0.9, -0.1];
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sum = 0.0;
        for _ in 0..draws {
            let eps: f64 = rng.sample(StandardNormal);
            let m = oracle.mean_m(&x) + eps; // d' = 0
            sum += oracle.outcome_mean(&x, 1, m);
        }
        let mc = sum / draws as f64;
        let closed = oracle.cross_outcome_mean(&x, 1, 0);
        let tol = 3.0 / (draws as f64).sqrt();
        assert!((mc - closed).abs() < tol, "mc {mc} vs closed {closed}");
    }

    #[test]
    fn case1_propensities_stay_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let oracle = OracleNuisance::new(CaseId::Case1, 1.2).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for _ in 0..1_000_000 {
            let x: [f64; 5] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            let a = oracle.propensity(&x);
            lo = lo.min(a);
            hi = hi.max(a);
        }
        assert!(lo >= 0.05, "min propensity {lo}");
        assert!(hi <= 0.95, "max propensity {hi}");
    }

    /// Gauss–Hermite nodes and weights for ∫ e^{−t²} h(t) dt, computed from
    /// the physicists' Hermite recurrence with bisection root-finding.
    fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
        let hermite = |n: usize, t: f64| -> f64 {
            let (mut prev, mut cur) = (1.0, 2.0 * t);
            if n == 0 {
                return prev;
            }
            for k in 1..n {
                let next = 2.0 * t * cur - 2.0 * k as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        };
        // Bracket sign changes on a fine grid, then bisect to convergence.
        let bound = (2.0 * order as f64 + 1.0).sqrt() + 2.0;
        let grid = 20_000;
        let mut nodes = Vec::new();
        let mut prev_t = -bound;
        let mut prev_v = hermite(order, prev_t);
        for i in 1..=grid {
            let t = -bound + 2.0 * bound * i as f64 / grid as f64;
            let v = hermite(order, t);
            if prev_v == 0.0 {
                nodes.push(prev_t);
            } else if prev_v.signum() != v.signum() {
                let (mut a, mut b) = (prev_t, t);
                for _ in 0..100 {
                    let mid = 0.5 * (a + b);
                    if hermite(order, a).signum() == hermite(order, mid).signum() {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                nodes.push(0.5 * (a + b));
            }
            prev_t = t;
            prev_v = v;
        }
        assert_eq!(nodes.len(), order, "found all Hermite roots");
        let factorial: f64 = (1..=order).map(|k| k as f64).product();
        let scale = 2.0_f64.powi(order as i32 - 1) * factorial * std::f64::consts::PI.sqrt()
            / (order as f64 * order as f64);
        let weights: Vec<f64> = nodes
            .iter()
            .map(|&t| {
                let h = hermite(order - 1, t);
                scale / (h * h)
            })
            .collect();
        (nodes, weights)
    }

    #[test]
    fn mediator_density_integrates_to_one() {
        // ∫ f(m|x,d) dm via Gauss–Hermite: substitute m = √2·t + center so
        // the integral becomes √2 Σ w_i e^{t_i²} f(√2 t_i + center | x, d).
        let (nodes, weights) = gauss_hermite(20);
        let oracle = OracleNuisance::new(CaseId::Case3, 1.2).unwrap();
        let x = [0.3, -0.6, 0.8, 0.05, -0.44];
        for d in 0..2u8 {
            let center = 0.2 * f64::from(d) + oracle.mean_m(&x);
            let integral: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(&t, &w)| {
                    let m = std::f64::consts::SQRT_2 * t + center;
                    w * (t * t).exp() * oracle.mediator_density(&x, d, m)
                })
                .sum::<f64>()
                * std::f64::consts::SQRT_2;
            assert!(
                (integral - 1.0).abs() < 1e-8,
                "d = {d}: integral {integral}"
            );
        }
    }

    #[test]
    fn bayes_propensity_is_consistent_with_densities() {
        // a(1|x,m) must satisfy a(1|x,m)/(1−a(1|x,m)) =
        // [a(1|x) f(m|x,1)] / [(1−a(1|x)) f(m|x,0)] for every (x, m).
        let oracle = OracleNuisance::new(CaseId::Case2, 1.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let x: [f64; 5] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            let m: f64 = rng.sample::<f64, _>(StandardNormal) * 3.0;
            let a1 = oracle.propensity(&x);
            let direct = a1 * oracle.mediator_density(&x, 1, m)
                / (a1 * oracle.mediator_density(&x, 1, m)
                    + (1.0 - a1) * oracle.mediator_density(&x, 0, m));
            let bayes = oracle.propensity_given_mediator(&x, m);
            assert!((bayes - direct).abs() < 1e-12, "x {x:?} m {m}");
        }
    }

    #[test]
    fn case_defaults_follow_design() {
        assert_eq!(CaseId::Case3.default_alpha(), 1.2);
        assert_eq!(CaseId::Case4.default_alpha(), 0.6);
        assert_eq!(CaseId::Case5.default_alpha(), 1.5);
        assert_eq!(CaseId::Case5.relevant_covariates(), 3);
        assert_eq!(CaseId::Case2.relevant_covariates(), 5);
    }
}
