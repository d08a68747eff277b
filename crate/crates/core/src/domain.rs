//! Core data model: observation tables, fitted nuisance values, effect
//! arithmetic, per-observation score vectors, and CSV ingestion.
//!
//! The observed data vector is O = (X, D, M, Y): covariates, a binary
//! treatment, a mediator (binary or continuous), and an outcome. Everything
//! downstream — nuisance fitting, influence-function scoring, cross-fitting —
//! consumes the types defined here.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether the mediator column is 0/1 or real-valued. The two kinds use
/// different efficient-influence-function parameterizations, so the tag is
/// explicit and never inferred from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediatorKind {
    Binary,
    Continuous,
}

impl fmt::Display for MediatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MediatorKind::Binary => write!(f, "binary"),
            MediatorKind::Continuous => write!(f, "continuous"),
        }
    }
}

/// Columnar sample of n observations: covariate matrix `x` (n × p),
/// treatment `d`, mediator `m`, outcome `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    pub x: Array2<f64>,
    pub d: Vec<u8>,
    pub m: Vec<f64>,
    pub y: Vec<f64>,
    pub mediator_kind: MediatorKind,
}

impl ObservationTable {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Number of covariate columns.
    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    /// Row-gather into a new table (used to form training / held-out splits).
    pub fn select(&self, rows: &[usize]) -> ObservationTable {
        ObservationTable {
            x: self.x.select(Axis(0), rows),
            d: rows.iter().map(|&i| self.d[i]).collect(),
            m: rows.iter().map(|&i| self.m[i]).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            mediator_kind: self.mediator_kind,
        }
    }

    /// Smallest and largest outcome value. Errors on an empty table.
    pub fn outcome_range(&self) -> Result<(f64, f64)> {
        if self.y.is_empty() {
            return Err(Error::EmptyTable);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.y {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok((lo, hi))
    }
}

/// Check every table invariant, returning the table unchanged when it is
/// well-formed. Idempotent by construction (it never mutates).
pub fn validate_table(raw: ObservationTable) -> Result<ObservationTable> {
    let n = raw.d.len();
    if n == 0 {
        return Err(Error::EmptyTable);
    }
    if raw.x.nrows() != n || raw.m.len() != n || raw.y.len() != n {
        return Err(Error::RaggedTable(format!(
            "x has {} rows, d {}, m {}, y {}",
            raw.x.nrows(),
            n,
            raw.m.len(),
            raw.y.len()
        )));
    }
    for (row, r) in raw.x.rows().into_iter().enumerate() {
        if let Some(col) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry {
                column: format!("X{}", col + 1),
                row,
            });
        }
    }
    for (row, &d) in raw.d.iter().enumerate() {
        if d > 1 {
            return Err(Error::NonBinaryTreatment {
                row,
                value: f64::from(d),
            });
        }
    }
    for (row, &m) in raw.m.iter().enumerate() {
        if !m.is_finite() {
            return Err(Error::NonFiniteEntry {
                column: "M".into(),
                row,
            });
        }
        if raw.mediator_kind == MediatorKind::Binary && m != 0.0 && m != 1.0 {
            return Err(Error::MediatorKindMismatch { row, value: m });
        }
    }
    if let Some(row) = raw.y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEntry {
            column: "Y".into(),
            row,
        });
    }
    Ok(raw)
}

/// Per-observation fitted nuisance values, already clipped, in the exact form
/// the influence-function score consumes:
///
/// * `a_x[i]`   — propensity estimate  P̂r(D=1 | X_i), clipped to `[c, 1−c]`;
/// * `a_xm[i]`  — P̂r(D=1 | X_i, M_i) for the continuous-mediator path, where
///   the mediator-density ratio is rewritten through Bayes' rule;
/// * `f_m_d0[i]`, `f_m_d1[i]` — f̂(M_i | X_i, d) for the binary path;
/// * `mu_d0[i]`, `mu_d1[i]`   — μ̂(X_i, d, M_i) at the observed mediator;
/// * `cross_mu[d][d'][i]`      — ∫ μ̂(X_i, d, m) f̂(m | X_i, d') dm, i.e. the
///   regression Ê[μ̂(X, d, M) | X = X_i, D = d'].
///
/// Exactly one of `a_xm` / the `f_m_*` pair is populated, matching the
/// mediator kind.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub mediator_kind: MediatorKind,
    pub a_x: Vec<f64>,
    pub a_xm: Option<Vec<f64>>,
    pub f_m_d0: Option<Vec<f64>>,
    pub f_m_d1: Option<Vec<f64>>,
    pub mu_d0: Vec<f64>,
    pub mu_d1: Vec<f64>,
    pub cross_mu: [[Vec<f64>; 2]; 2],
}

impl NuisanceFit {
    /// Propensity trimming constant c: estimated propensities are clipped to
    /// `[c, 1−c]`, bounding every inverse-propensity weight by 1/c = 100.
    pub const PROPENSITY_CLIP: f64 = 0.01;

    /// Outcome-model estimates are clipped to the observed outcome range
    /// expanded by this fraction on each side — an operational surrogate for
    /// the boundedness assumed of the true outcome regression.
    pub const OUTCOME_RANGE_EXPANSION: f64 = 0.10;

    /// Assemble a fit from raw predictions, applying every clipping rule.
    /// `observed_y` is the (min, max) outcome over the *training* split.
    pub fn assemble(
        mediator_kind: MediatorKind,
        a_x: Vec<f64>,
        a_xm: Option<Vec<f64>>,
        f_m_d0: Option<Vec<f64>>,
        f_m_d1: Option<Vec<f64>>,
        mu_d0: Vec<f64>,
        mu_d1: Vec<f64>,
        cross_mu: [[Vec<f64>; 2]; 2],
        observed_y: (f64, f64),
    ) -> Result<NuisanceFit> {
        let mut fit = NuisanceFit {
            mediator_kind,
            a_x,
            a_xm,
            f_m_d0,
            f_m_d1,
            mu_d0,
            mu_d1,
            cross_mu,
        };
        match mediator_kind {
            MediatorKind::Continuous => {
                if fit.a_xm.is_none() || fit.f_m_d0.is_some() || fit.f_m_d1.is_some() {
                    return Err(Error::InvalidConfig(
                        "continuous-mediator fit must populate a_xm and omit f_m_*".into(),
                    ));
                }
            }
            MediatorKind::Binary => {
                if fit.a_xm.is_some() || fit.f_m_d0.is_none() || fit.f_m_d1.is_none() {
                    return Err(Error::InvalidConfig(
                        "binary-mediator fit must populate f_m_d0/f_m_d1 and omit a_xm".into(),
                    ));
                }
            }
        }
        let n = fit.a_x.len();
        let lengths_ok = fit.mu_d0.len() == n
            && fit.mu_d1.len() == n
            && fit.a_xm.as_ref().is_none_or(|v| v.len() == n)
            && fit.f_m_d0.as_ref().is_none_or(|v| v.len() == n)
            && fit.f_m_d1.as_ref().is_none_or(|v| v.len() == n)
            && fit.cross_mu.iter().flatten().all(|v| v.len() == n);
        if !lengths_ok {
            return Err(Error::RaggedTable(
                "nuisance vectors must share one length".into(),
            ));
        }
        fit.apply_clipping(observed_y);
        for (name, col) in fit.columns() {
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::PredictionNonFinite {
                    target: format!("{name}[{row}]"),
                });
            }
        }
        Ok(fit)
    }

    /// Clip propensities into `[c, 1−c]`, binary mediator probabilities into
    /// the same band (keeping both f̂(m=1) and f̂(m=0) strictly positive), and
    /// outcome-model values into the expanded observed outcome range.
    /// Idempotent: re-applying with the same range changes nothing.
    pub fn apply_clipping(&mut self, observed_y: (f64, f64)) {
        let c = Self::PROPENSITY_CLIP;
        let clip_prob = |v: &mut Vec<f64>| {
            for p in v.iter_mut() {
                *p = p.clamp(c, 1.0 - c);
            }
        };
        clip_prob(&mut self.a_x);
        if let Some(a_xm) = self.a_xm.as_mut() {
            clip_prob(a_xm);
        }
        if let Some(f) = self.f_m_d0.as_mut() {
            clip_prob(f);
        }
        if let Some(f) = self.f_m_d1.as_mut() {
            clip_prob(f);
        }

        let (lo, hi) = mu_bounds(observed_y);
        let clip_mu = |v: &mut Vec<f64>| {
            for m in v.iter_mut() {
                *m = m.clamp(lo, hi);
            }
        };
        clip_mu(&mut self.mu_d0);
        clip_mu(&mut self.mu_d1);
        for row in self.cross_mu.iter_mut() {
            for v in row.iter_mut() {
                clip_mu(v);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.a_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_x.is_empty()
    }

    fn columns(&self) -> Vec<(&'static str, &Vec<f64>)> {
        let mut cols = vec![
            ("a_x", &self.a_x),
            ("mu_d0", &self.mu_d0),
            ("mu_d1", &self.mu_d1),
            ("cross_mu[0][0]", &self.cross_mu[0][0]),
            ("cross_mu[0][1]", &self.cross_mu[0][1]),
            ("cross_mu[1][0]", &self.cross_mu[1][0]),
            ("cross_mu[1][1]", &self.cross_mu[1][1]),
        ];
        if let Some(v) = self.a_xm.as_ref() {
            cols.push(("a_xm", v));
        }
        if let Some(v) = self.f_m_d0.as_ref() {
            cols.push(("f_m_d0", v));
        }
        if let Some(v) = self.f_m_d1.as_ref() {
            cols.push(("f_m_d1", v));
        }
        cols
    }
}

/// Clipping band for outcome-model values given the observed outcome range.
pub fn mu_bounds(observed_y: (f64, f64)) -> (f64, f64) {
    let (y_lo, y_hi) = observed_y;
    let margin = NuisanceFit::OUTCOME_RANGE_EXPANSION * (y_hi - y_lo);
    (y_lo - margin, y_hi + margin)
}

/// The five estimands: total effect and the natural direct / indirect effects
/// under each mediator arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Total,
    Nde0,
    Nde1,
    Nie0,
    Nie1,
}

impl Effect {
    pub const ALL: [Effect; 5] = [
        Effect::Total,
        Effect::Nde0,
        Effect::Nde1,
        Effect::Nie0,
        Effect::Nie1,
    ];
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Effect::Total => write!(f, "tau_tot"),
            Effect::Nde0 => write!(f, "tau_NDE(0)"),
            Effect::Nde1 => write!(f, "tau_NDE(1)"),
            Effect::Nie0 => write!(f, "tau_NIE(0)"),
            Effect::Nie1 => write!(f, "tau_NIE(1)"),
        }
    }
}

/// Turn the four cross-world means φ̂(d, d') = Ê[Y(d, M(d'))] into the five
/// effects:
///
/// ```text
/// τ̂_tot    = φ̂(1,1) − φ̂(0,0)
/// τ̂_NDE(d) = φ̂(1,d) − φ̂(0,d)
/// τ̂_NIE(d) = φ̂(d,1) − φ̂(d,0)
/// ```
///
/// The decomposition τ_tot = τ_NDE(0) + τ_NIE(1) = τ_NDE(1) + τ_NIE(0)
/// telescopes, so it holds to machine precision for any finite input.
pub fn effect_arithmetic(phi_hat: &BTreeMap<(u8, u8), f64>) -> Result<BTreeMap<Effect, f64>> {
    let phi = |d: u8, d_prime: u8| -> Result<f64> {
        match phi_hat.get(&(d, d_prime)) {
            Some(v) if v.is_finite() => Ok(*v),
            _ => Err(Error::MissingPhi { d, d_prime }),
        }
    };
    let mut out = BTreeMap::new();
    out.insert(Effect::Total, phi(1, 1)? - phi(0, 0)?);
    out.insert(Effect::Nde0, phi(1, 0)? - phi(0, 0)?);
    out.insert(Effect::Nde1, phi(1, 1)? - phi(0, 1)?);
    out.insert(Effect::Nie0, phi(0, 1)? - phi(0, 0)?);
    out.insert(Effect::Nie1, phi(1, 1)? - phi(1, 0)?);
    Ok(out)
}

/// Point estimate, estimator variance, and 95% Wald interval for one effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub effect: Effect,
    pub estimate: f64,
    /// σ̂² of the *estimator* (already divided by n), floored at zero.
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    /// True when the raw variance formula went negative and was floored.
    pub variance_floored: bool,
}

/// Two-sided 95% normal quantile used for every Wald interval.
pub const Z_95: f64 = 1.959964;

impl EffectReport {
    pub fn from_estimate(effect: Effect, estimate: f64, raw_variance: f64, n: usize) -> Self {
        let variance_floored = raw_variance < 0.0;
        let variance = raw_variance.max(0.0);
        let half = Z_95 * variance.sqrt();
        EffectReport {
            effect,
            estimate,
            variance,
            ci_low: estimate - half,
            ci_high: estimate + half,
            n,
            variance_floored,
        }
    }

    pub fn se(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Per-observation influence-function scores from a full cross-fit run:
/// ψ̂_{d,d'} for the four cross-world means and ψ̂_d for the two marginal
/// means used by the total effect.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiScores {
    psi: [[Vec<f64>; 2]; 2],
    psi_total: [Vec<f64>; 2],
}

impl PhiScores {
    /// Build from complete score vectors; all six must share one length ≥ 1.
    pub fn from_parts(psi: [[Vec<f64>; 2]; 2], psi_total: [Vec<f64>; 2]) -> Result<PhiScores> {
        let n = psi[0][0].len();
        if n == 0 {
            return Err(Error::EmptyTable);
        }
        let ok = psi.iter().flatten().all(|v| v.len() == n)
            && psi_total.iter().all(|v| v.len() == n);
        if !ok {
            return Err(Error::RaggedTable("score vectors must share one length".into()));
        }
        Ok(PhiScores { psi, psi_total })
    }

    pub fn n(&self) -> usize {
        self.psi[0][0].len()
    }

    /// ψ̂_{d,d'} scores.
    pub fn psi(&self, d: u8, d_prime: u8) -> &[f64] {
        &self.psi[d as usize][d_prime as usize]
    }

    /// ψ̂_d scores (total-effect path).
    pub fn psi_total(&self, d: u8) -> &[f64] {
        &self.psi_total[d as usize]
    }
}

/// Read an observation table from CSV. The header must contain columns named
/// `D`, `M`, and `Y`; every remaining column is a covariate, kept in file
/// order. Values are decimal floats; `D` must be exactly 0 or 1.
pub fn read_observations_csv(path: &Path, mediator_kind: MediatorKind) -> Result<ObservationTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn { name: name.into() })
    };
    let d_col = find("D")?;
    let m_col = find("M")?;
    let y_col = find("Y")?;
    let x_cols: Vec<usize> = (0..headers.len())
        .filter(|c| *c != d_col && *c != m_col && *c != y_col)
        .collect();

    let mut x = Vec::new();
    let mut d = Vec::new();
    let mut m = Vec::new();
    let mut y = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| Error::NonFiniteEntry {
                column: headers[col].to_string(),
                row,
            })
        };
        let d_val = parse(d_col)?;
        if d_val != 0.0 && d_val != 1.0 {
            return Err(Error::NonBinaryTreatment { row, value: d_val });
        }
        d.push(d_val as u8);
        m.push(parse(m_col)?);
        y.push(parse(y_col)?);
        for &c in &x_cols {
            x.push(parse(c)?);
        }
    }
    let n = d.len();
    let p = x_cols.len();
    let x = Array2::from_shape_vec((n, p), x)
        .map_err(|e| Error::RaggedTable(e.to_string()))?;
    validate_table(ObservationTable {
        x,
        d,
        m,
        y,
        mediator_kind,
    })
}

/// Write a table as CSV with columns `X1..Xp, D, M, Y`.
pub fn write_observations_csv(table: &ObservationTable, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let p = table.n_covariates();
    let mut header: Vec<String> = (1..=p).map(|i| format!("X{i}")).collect();
    header.extend(["D".into(), "M".into(), "Y".into()]);
    writer.write_record(&header)?;
    for i in 0..table.len() {
        let mut record: Vec<String> = table.x.row(i).iter().map(|v| v.to_string()).collect();
        record.push(table.d[i].to_string());
        record.push(table.m[i].to_string());
        record.push(table.y[i].to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn small_table(mediator_kind: MediatorKind) -> ObservationTable {
        ObservationTable {
            x: array![[0.1, -0.2], [0.3, 0.4], [-0.5, 0.6], [0.7, -0.8]],
            d: vec![0, 1, 1, 0],
            m: vec![0.0, 1.0, 0.0, 1.0],
            y: vec![1.0, 2.0, 3.0, 4.0],
            mediator_kind,
        }
    }

    #[test]
    fn validate_accepts_well_formed_binary_table() {
        let t = small_table(MediatorKind::Binary);
        let v = validate_table(t.clone()).unwrap();
        assert_eq!(v, t);
    }

    #[test]
    fn validate_is_idempotent() {
        let t = small_table(MediatorKind::Continuous);
        let once = validate_table(t).unwrap();
        let twice = validate_table(once.clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn validate_rejects_nonbinary_treatment() {
        let mut t = small_table(MediatorKind::Binary);
        t.d[2] = 2;
        match validate_table(t) {
            Err(Error::NonBinaryTreatment { row: 2, value }) => assert_eq!(value, 2.0),
            other => panic!("expected NonBinaryTreatment, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_nan_outcome() {
        let mut t = small_table(MediatorKind::Binary);
        t.y[1] = f64::NAN;
        match validate_table(t) {
            Err(Error::NonFiniteEntry { column, row: 1 }) => assert_eq!(column, "Y"),
            other => panic!("expected NonFiniteEntry, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_binary_tag_with_real_mediator() {
        let mut t = small_table(MediatorKind::Binary);
        t.m[0] = 0.25;
        match validate_table(t) {
            Err(Error::MediatorKindMismatch { row: 0, value }) => assert_eq!(value, 0.25),
            other => panic!("expected MediatorKindMismatch, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_empty_table() {
        let t = ObservationTable {
            x: Array2::zeros((0, 2)),
            d: vec![],
            m: vec![],
            y: vec![],
            mediator_kind: MediatorKind::Continuous,
        };
        assert!(matches!(validate_table(t), Err(Error::EmptyTable)));
    }

    fn phi_map(p11: f64, p00: f64, p10: f64, p01: f64) -> BTreeMap<(u8, u8), f64> {
        BTreeMap::from([((1, 1), p11), ((0, 0), p00), ((1, 0), p10), ((0, 1), p01)])
    }

    #[test]
    fn effect_arithmetic_matches_benchmark_truth_pattern() {
        // The synthetic designs all satisfy tau_tot = 0.4 with NDE = NIE = 0.2;
        // their phi values have the additive form 0.2 d + 0.2 d' + const.
        let effects = effect_arithmetic(&phi_map(0.4, 0.0, 0.2, 0.2)).unwrap();
        assert_eq!(effects[&Effect::Total], 0.4);
        assert_eq!(effects[&Effect::Nde0], 0.2);
        assert_eq!(effects[&Effect::Nde1], 0.2);
        assert_eq!(effects[&Effect::Nie0], 0.2);
        assert_eq!(effects[&Effect::Nie1], 0.2);
    }

    #[test]
    fn effect_arithmetic_constant_phi_gives_zero_effects() {
        let effects = effect_arithmetic(&phi_map(3.25, 3.25, 3.25, 3.25)).unwrap();
        for e in Effect::ALL {
            assert_eq!(effects[&e], 0.0);
        }
    }

    #[test]
    fn effect_arithmetic_telescopes() {
        let effects = effect_arithmetic(&phi_map(1.0, 0.0, 0.7, 0.5)).unwrap();
        assert_eq!(effects[&Effect::Total], 1.0);
        assert_eq!(effects[&Effect::Nde0], 0.7);
        assert_eq!(effects[&Effect::Nde1], 0.5);
        assert_eq!(effects[&Effect::Nie0], 0.5);
        assert!((effects[&Effect::Nie1] - 0.3).abs() < 1e-15);
        // Both telescoping decompositions recover the total effect.
        assert!((effects[&Effect::Nde0] + effects[&Effect::Nie1] - 1.0).abs() < 1e-15);
        assert!((effects[&Effect::Nde1] + effects[&Effect::Nie0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn effect_arithmetic_rejects_missing_phi() {
        let mut phi = phi_map(1.0, 0.0, 0.7, 0.5);
        phi.remove(&(1, 0));
        match effect_arithmetic(&phi) {
            Err(Error::MissingPhi { d: 1, d_prime: 0 }) => {}
            other => panic!("expected MissingPhi, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn decomposition_identity_holds_for_any_finite_phi(
            p11 in -1e3..1e3f64,
            p00 in -1e3..1e3f64,
            p10 in -1e3..1e3f64,
            p01 in -1e3..1e3f64,
        ) {
            let effects = effect_arithmetic(&phi_map(p11, p00, p10, p01)).unwrap();
            let total = effects[&Effect::Total];
            let a = effects[&Effect::Nde0] + effects[&Effect::Nie1];
            let b = effects[&Effect::Nde1] + effects[&Effect::Nie0];
            prop_assert!((total - a).abs() <= 1e-12);
            prop_assert!((total - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn nuisance_fit_clips_propensities_and_outcomes() {
        let n = 3;
        let fit = NuisanceFit::assemble(
            MediatorKind::Continuous,
            vec![0.0, 0.5, 1.0],
            Some(vec![0.005, 0.6, 0.999]),
            None,
            None,
            vec![-100.0, 0.0, 100.0],
            vec![0.0; n],
            std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; n])),
            (0.0, 10.0),
        )
        .unwrap();
        assert_eq!(fit.a_x, vec![0.01, 0.5, 0.99]);
        assert_eq!(fit.a_xm.as_ref().unwrap(), &vec![0.01, 0.6, 0.99]);
        // outcome band = [0 − 1, 10 + 1]
        assert_eq!(fit.mu_d0, vec![-1.0, 0.0, 11.0]);
    }

    #[test]
    fn nuisance_fit_clipping_is_idempotent() {
        let n = 4;
        let mut fit = NuisanceFit::assemble(
            MediatorKind::Binary,
            vec![0.2, 0.0005, 0.97, 1.0],
            None,
            Some(vec![0.5, 0.0, 1.0, 0.25]),
            Some(vec![0.5, 0.5, 0.5, 0.5]),
            vec![1.0, 2.0, 3.0, 50.0],
            vec![-50.0, 2.0, 3.0, 4.0],
            std::array::from_fn(|_| std::array::from_fn(|_| vec![1.5; n])),
            (0.0, 4.0),
        )
        .unwrap();
        let once = fit.clone();
        fit.apply_clipping((0.0, 4.0));
        assert_eq!(fit, once);
    }

    #[test]
    fn nuisance_fit_requires_path_matching_mediator_kind() {
        let err = NuisanceFit::assemble(
            MediatorKind::Continuous,
            vec![0.5],
            None, // continuous path must carry a_xm
            None,
            None,
            vec![0.0],
            vec![0.0],
            std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0])),
            (0.0, 1.0),
        );
        assert!(err.is_err());
    }

    #[test]
    fn effect_report_builds_symmetric_wald_interval() {
        let rep = EffectReport::from_estimate(Effect::Total, 1.5, 0.0625, 4);
        assert_eq!(rep.se(), 0.25);
        assert!((rep.ci_low - (1.5 - Z_95 * 0.25)).abs() < 1e-15);
        assert!((rep.ci_high - (1.5 + Z_95 * 0.25)).abs() < 1e-15);
        assert!(!rep.variance_floored);
    }

    #[test]
    fn effect_report_floors_negative_variance() {
        let rep = EffectReport::from_estimate(Effect::Nie1, 0.3, -1e-9, 100);
        assert_eq!(rep.variance, 0.0);
        assert!(rep.variance_floored);
        assert_eq!(rep.ci_low, rep.estimate);
        assert_eq!(rep.ci_high, rep.estimate);
    }

    #[test]
    fn phi_scores_reject_ragged_vectors() {
        let psi: [[Vec<f64>; 2]; 2] = [
            [vec![1.0, 2.0], vec![1.0, 2.0]],
            [vec![1.0, 2.0], vec![1.0]],
        ];
        let psi_total = [vec![1.0, 2.0], vec![1.0, 2.0]];
        assert!(PhiScores::from_parts(psi, psi_total).is_err());
    }

    #[test]
    fn csv_roundtrip_preserves_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        let t = small_table(MediatorKind::Continuous);
        write_observations_csv(&t, &path).unwrap();
        let back = read_observations_csv(&path, MediatorKind::Continuous).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn csv_reader_takes_covariates_in_file_order_around_named_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mixed.csv");
        std::fs::write(&path, "age,D,score,M,Y\n20,0,1.5,3.0,2.0\n30,1,2.5,4.0,5.0\n").unwrap();
        let t = read_observations_csv(&path, MediatorKind::Continuous).unwrap();
        assert_eq!(t.n_covariates(), 2);
        assert_eq!(t.x, array![[20.0, 1.5], [30.0, 2.5]]);
        assert_eq!(t.d, vec![0, 1]);
        assert_eq!(t.m, vec![3.0, 4.0]);
        assert_eq!(t.y, vec![2.0, 5.0]);
    }

    #[test]
    fn csv_reader_rejects_missing_mediator_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("no_m.csv");
        std::fs::write(&path, "X1,D,Y\n0.1,0,2.0\n").unwrap();
        match read_observations_csv(&path, MediatorKind::Continuous) {
            Err(Error::MissingColumn { name }) => assert_eq!(name, "M"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn csv_reader_rejects_fractional_treatment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad_d.csv");
        std::fs::write(&path, "X1,D,M,Y\n0.1,0.5,1.0,2.0\n").unwrap();
        assert!(matches!(
            read_observations_csv(&path, MediatorKind::Continuous),
            Err(Error::NonBinaryTreatment { row: 0, .. })
        ));
    }

    #[test]
    fn select_gathers_rows() {
        let t = small_table(MediatorKind::Continuous);
        let s = t.select(&[2, 0]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.y, vec![3.0, 1.0]);
        assert_eq!(s.d, vec![1, 0]);
        assert_eq!(s.x, array![[-0.5, 0.6], [0.1, -0.2]]);
    }
}
