//! Daubechies-6 scaling function and the Hölder-class test function η(x; α).
//!
//! The synthetic benchmark scenarios build their "rough" mean functions from
//! η(x; α) = Σ_{j∈J, l∈ℤ} 2^{−j(α+0.25)} w_{j,l}(x), a finite-level wavelet
//! series over translates of the Daubechies-6 father (scaling) function
//! φ_D6. φ_D6 has no closed form; we evaluate it by running the cascade
//! algorithm on a fixed dyadic grid over its support [0, 5] and
//! interpolating linearly between samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Support width of the Daubechies-6 scaling function: φ_D6 lives on [0, 5].
pub const SUPPORT_WIDTH: usize = 5;

/// Wavelet levels J = {0, 3, 6, 9, 10, 16} used by every benchmark scenario.
pub const STANDARD_LEVELS: [u32; 6] = [0, 3, 6, 9, 10, 16];

/// Default offset in the coefficient exponent 2^{−j(α + 0.25)}.
pub const STANDARD_COEFF_EXPONENT: f64 = 0.25;

/// The six Daubechies-6 refinement coefficients c_k in φ(x) = Σ c_k φ(2x−k),
/// from the closed forms (1 + √10 ± √(5+2√10))/16 etc., then renormalized so
/// they sum to exactly 2 to suppress rounding drift in the cascade.
fn d6_coefficients() -> [f64; 6] {
    let s10 = 10.0_f64.sqrt();
    let s5 = (5.0 + 2.0 * s10).sqrt();
    let mut c = [
        (1.0 + s10 + s5) / 16.0,
        (5.0 + s10 + 3.0 * s5) / 16.0,
        (10.0 - 2.0 * s10 + 2.0 * s5) / 16.0,
        (10.0 - 2.0 * s10 - 2.0 * s5) / 16.0,
        (5.0 + s10 - 3.0 * s5) / 16.0,
        (1.0 + s10 - s5) / 16.0,
    ];
    let sum: f64 = c.iter().sum();
    for v in c.iter_mut() {
        *v *= 2.0 / sum;
    }
    c
}

/// Samples of φ_D6 on the dyadic grid {i·2^−r : 0 ≤ i ≤ 5·2^r}.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingTable {
    values: Vec<f64>,
    resolution: u32,
}

/// Build the φ_D6 sample table at grid spacing 2^−resolution by the cascade
/// algorithm: start from the indicator of [0, 1) and repeatedly apply the
/// two-scale refinement relation v'(t) = Σ_k c_k v(2t − k) on the fixed grid
/// until the sup-norm change falls below 1e−13 (the fixed point of the
/// refinement operator is φ_D6 itself). Endpoint samples are pinned to the
/// exact support values φ(0) = φ(5) = 0. Deterministic.
pub fn build_scaling_table(resolution: u32) -> Result<ScalingTable> {
    if !(4..=20).contains(&resolution) {
        return Err(Error::ResolutionOutOfRange(resolution));
    }
    let c = d6_coefficients();
    let step = 1usize << resolution; // samples per unit interval
    let len = SUPPORT_WIDTH * step + 1;
    let mut v = vec![0.0_f64; len];
    for sample in v.iter_mut().take(step) {
        *sample = 1.0; // indicator of [0, 1)
    }
    let mut next = vec![0.0_f64; len];
    const MAX_ITERATIONS: usize = 200;
    const CONVERGENCE_TOL: f64 = 1e-13;
    for _ in 0..MAX_ITERATIONS {
        let mut delta = 0.0_f64;
        for i in 0..len {
            let mut acc = 0.0;
            for (k, &ck) in c.iter().enumerate() {
                let idx = 2 * i as i64 - (k * step) as i64;
                if (0..len as i64).contains(&idx) {
                    acc += ck * v[idx as usize];
                }
            }
            delta = delta.max((acc - v[i]).abs());
            next[i] = acc;
        }
        std::mem::swap(&mut v, &mut next);
        if delta < CONVERGENCE_TOL {
            break;
        }
    }
    v[0] = 0.0;
    v[len - 1] = 0.0;
    Ok(ScalingTable {
        values: v,
        resolution,
    })
}

impl ScalingTable {
    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid_spacing(&self) -> f64 {
        (-(self.resolution as f64)).exp2()
    }

    /// Largest absolute finite-difference slope over the grid — an empirical
    /// Lipschitz constant for φ_D6 at this resolution.
    pub fn max_abs_slope(&self) -> f64 {
        let h = self.grid_spacing();
        self.values
            .windows(2)
            .map(|w| ((w[1] - w[0]) / h).abs())
            .fold(0.0, f64::max)
    }
}

/// Evaluate φ_D6(t): exactly 0 outside the support [0, 5], linear
/// interpolation between adjacent grid samples inside.
pub fn eval_scaling(table: &ScalingTable, t: f64) -> f64 {
    if !(0.0..=5.0).contains(&t) {
        return 0.0;
    }
    let u = t * (1u64 << table.resolution) as f64;
    let i = u.floor();
    let idx = i as usize;
    if idx + 1 >= table.values.len() {
        return *table.values.last().unwrap();
    }
    let frac = u - i;
    table.values[idx] * (1.0 - frac) + table.values[idx + 1] * frac
}

/// Parameters of the Hölder test function η(·; α).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderSpec {
    /// Smoothness exponent α > 0.
    pub alpha: f64,
    /// Wavelet levels J, sorted ascending and deduplicated.
    pub levels: Vec<u32>,
    /// Offset in the coefficient exponent 2^{−j(α + offset)}; 0.25 places
    /// η in the Hölder ball of exponent α under the normalized dilation.
    pub coeff_exponent: f64,
    /// Use the L2-normalized dilation w_{j,l}(x) = 2^{j/2} φ(2^j x − l)
    /// (true, the default) or the plain dilation φ(2^j x − l) (false).
    pub normalized: bool,
}

impl HolderSpec {
    /// The benchmark configuration: levels {0,3,6,9,10,16}, exponent offset
    /// 0.25, normalized dilation.
    pub fn standard(alpha: f64) -> Result<HolderSpec> {
        HolderSpec::new(alpha, STANDARD_LEVELS.to_vec(), STANDARD_COEFF_EXPONENT, true)
    }

    pub fn new(
        alpha: f64,
        mut levels: Vec<u32>,
        coeff_exponent: f64,
        normalized: bool,
    ) -> Result<HolderSpec> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "Hölder exponent alpha must be positive and finite, got {alpha}"
            )));
        }
        if levels.is_empty() {
            return Err(Error::InvalidConfig(
                "Hölder level set J must be nonempty".into(),
            ));
        }
        if !coeff_exponent.is_finite() {
            return Err(Error::InvalidConfig(
                "coefficient exponent must be finite".into(),
            ));
        }
        levels.sort_unstable();
        levels.dedup();
        Ok(HolderSpec {
            alpha,
            levels,
            coeff_exponent,
            normalized,
        })
    }
}

/// Evaluate η(x; α) = Σ_{j∈J} 2^{−j(α+offset)} Σ_l w_{j,l}(x).
///
/// For each level j only shifts l with 2^j x − l ∈ (0, 5) can contribute
/// (φ_D6 is supported on [0, 5]), so at most 5 translates are summed per
/// level and the double series is exact, not truncated. Pure and
/// deterministic: identical inputs give bitwise-identical output.
pub fn eta(x: f64, spec: &HolderSpec, table: &ScalingTable) -> f64 {
    let mut total = 0.0;
    for &j in &spec.levels {
        let coeff = (-(j as f64) * (spec.alpha + spec.coeff_exponent)).exp2();
        let norm = if spec.normalized {
            (j as f64 / 2.0).exp2()
        } else {
            1.0
        };
        let arg = (j as f64).exp2() * x;
        let mut level_sum = 0.0;
        let l_min = (arg - SUPPORT_WIDTH as f64).floor() as i64 + 1;
        let l_max = arg.ceil() as i64 - 1;
        for l in l_min..=l_max {
            level_sum += eval_scaling(table, arg - l as f64);
        }
        total += coeff * norm * level_sum;
    }
    total
}
