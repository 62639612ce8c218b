//! Closed-form ground truth for the explicit special case with generating
//! function `E[s^X] = 1 - (1-s)^alpha`.
//!
//! Two families of expected-cumulative-weight curves are exposed:
//!
//! * the **printed** family reproduces the worked-example formula
//!   `E[B_k | W_k] = (1+alpha)/2 W_k + (2-alpha)/4 (1 - W_k^{a/(1-a)}) W_k^{(1-2a)/(1-a)}`
//!   with the forest coefficient rescaled by `forest_factor / (1/2)`. Its
//!   limit at the paper flags is `alpha (2 - 5 alpha^2) / (4 (1-alpha)^2 (1-2alpha))`.
//! * the **exact** family is the true conditional mean of the first-
//!   principles cluster sampler: it keeps the `+1` of the tilted degree
//!   (or drops it under the D-1 thinning convention) and the exact
//!   `1 - W^{1/(1-alpha)}` bracket that the printed derivation replaces by
//!   its leading order. Monte Carlo means of the sampler converge to this
//!   family, while the printed family is what the half-factor question is
//!   scored against.
//!
//! Both reduce to geometric series in the chain moments
//! `E[W_k^c] = E[W_0^c] (E[P^c])^k`.

use serde::{Deserialize, Serialize};

use crate::conventions::{BetaConvention, ForestFactor, ThinCount};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OracleConfig {
    pub alpha: f64,
    pub forest_factor: ForestFactor,
    pub beta_convention: BetaConvention,
    pub thin_count: ThinCount,
}

impl OracleConfig {
    pub fn new(
        alpha: f64,
        forest_factor: ForestFactor,
        beta_convention: BetaConvention,
        thin_count: ThinCount,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::Domain(format!(
                "oracle requires alpha in (0, 1/2); the weight series diverges at {alpha}"
            )));
        }
        Ok(OracleConfig { alpha, forest_factor, beta_convention, thin_count })
    }

    pub fn paper_flags(alpha: f64) -> Result<Self> {
        Self::new(alpha, ForestFactor::Half, BetaConvention::Paper, ThinCount::D)
    }

    fn backbone_coefficient(&self) -> f64 {
        backbone_coefficient(self.alpha, self.beta_convention)
    }
}

/// E[beta | W] / W for the special case, per convention.
pub fn backbone_coefficient(alpha: f64, convention: BetaConvention) -> f64 {
    match convention {
        // stays (probability alpha) carry W, jumps a Unif[0, W]
        BetaConvention::Paper => 0.5 * (1.0 + alpha),
        // jumps (probability 1-alpha) carry W, stays a Unif[0, W]
        BetaConvention::Complement => 1.0 - 0.5 * alpha,
    }
}

/// E[W_k^c] = E[W_0^c] (E[P^c])^k for the special-case chain, where W_0 has
/// density theta'(u) = a/(1-a) u^{a/(1-a)-1} and P is the ratio factor.
pub fn expected_w_moment(alpha: f64, c: f64, i: u32) -> f64 {
    expected_w0_moment(alpha, c) * ratio_factor_moment(alpha, c).powi(i as i32)
}

/// E[W_0^c] = (a/(1-a)) / (c + a/(1-a)).
pub fn expected_w0_moment(alpha: f64, c: f64) -> f64 {
    let r = alpha / (1.0 - alpha);
    r / (c + r)
}

/// E[P^c] = alpha + (1-alpha) / (1 + c (1-alpha)/alpha).
pub fn ratio_factor_moment(alpha: f64, c: f64) -> f64 {
    alpha + (1.0 - alpha) / (1.0 + c * (1.0 - alpha) / alpha)
}

/// The exponent (1-2a)/(1-a) carried by the forest term.
fn forest_exponent(alpha: f64) -> f64 {
    (1.0 - 2.0 * alpha) / (1.0 - alpha)
}

// --- printed family ---------------------------------------------------

/// Printed-formula E[B_k]: (bb - F) E[W_k] + F E[W_k^{(1-2a)/(1-a)}] with
/// F = forest_factor (2-alpha).
pub fn expected_bk(config: &OracleConfig, k: u32) -> f64 {
    let a = config.alpha;
    let bb = config.backbone_coefficient();
    let ff = config.forest_factor.as_f64() * (2.0 - a);
    (bb - ff / 2.0) * expected_w_moment(a, 1.0, k)
        + (ff / 2.0) * expected_w_moment(a, forest_exponent(a), k)
}

/// Printed-formula partial sum E[C_k] = sum_{i=0..k} E[B_i].
pub fn expected_ck(config: &OracleConfig, k: u32) -> f64 {
    let a = config.alpha;
    let bb = config.backbone_coefficient();
    let ff2 = config.forest_factor.as_f64() * (2.0 - a) / 2.0;
    let r1 = ratio_factor_moment(a, 1.0);
    let rq = ratio_factor_moment(a, forest_exponent(a));
    (bb - ff2) * expected_w0_moment(a, 1.0) * geometric_partial(r1, k)
        + ff2 * expected_w0_moment(a, forest_exponent(a)) * geometric_partial(rq, k)
}

/// Printed-formula limit of E[C_k].
pub fn expected_ck_limit(config: &OracleConfig) -> f64 {
    let a = config.alpha;
    let bb = config.backbone_coefficient();
    let ff2 = config.forest_factor.as_f64() * (2.0 - a) / 2.0;
    let r1 = ratio_factor_moment(a, 1.0);
    let rq = ratio_factor_moment(a, forest_exponent(a));
    (bb - ff2) * expected_w0_moment(a, 1.0) / (1.0 - r1)
        + ff2 * expected_w0_moment(a, forest_exponent(a)) / (1.0 - rq)
}

/// Geometric tail bound |limit - partial(k)| <= G (2a)^{k+1} / (1 - 2a);
/// both series ratios are at most 2 alpha.
pub fn expected_ck_tail_bound(config: &OracleConfig, k: u32) -> f64 {
    let a = config.alpha;
    let bb = config.backbone_coefficient();
    let ff2 = config.forest_factor.as_f64() * (2.0 - a) / 2.0;
    let g = (bb - ff2).abs() * expected_w0_moment(a, 1.0)
        + ff2 * expected_w0_moment(a, forest_exponent(a));
    g * (2.0 * a).powi(k as i32 + 1) / (1.0 - 2.0 * a)
}

// --- exact family ------------------------------------------------------

/// Exact conditional mean E[B_k | W_k = w] of the first-principles sampler
/// under the configured thinning and backbone conventions.
pub fn exact_expected_bk_given_w(config: &OracleConfig, w: f64) -> f64 {
    let a = config.alpha;
    let bb = config.backbone_coefficient();
    let q = forest_exponent(a);
    // Binom(D-1, w) thinning gives E = (1-a)(w^{-a/(1-a)} - w); the edge
    // count per attached tree is |T|+1 with E[|T|] = 1/(1-a), each edge a
    // Unif[0, w] weight.
    let forest_dm1 = 0.5 * (2.0 - a) * (w.powf(q) - w * w);
    let extra_d = (2.0 - a) / (2.0 * (1.0 - a)) * w * w;
    let forest = match config.thin_count {
        ThinCount::DMinus1 => forest_dm1,
        ThinCount::D => forest_dm1 + extra_d,
    };
    bb * w + forest
}

/// Exact E[B_k] over the chain.
pub fn exact_expected_bk(config: &OracleConfig, k: u32) -> f64 {
    let a = config.alpha;
    let bb = config.backbone_coefficient();
    let q = forest_exponent(a);
    let m1 = expected_w_moment(a, 1.0, k);
    let mq = expected_w_moment(a, q, k);
    let m2 = expected_w_moment(a, 2.0, k);
    let extra = match config.thin_count {
        ThinCount::DMinus1 => 0.0,
        ThinCount::D => (2.0 - a) / (2.0 * (1.0 - a)),
    };
    bb * m1 + 0.5 * (2.0 - a) * (mq - m2) + extra * m2
}

/// Exact E[C_k] = sum_{i=0..k} of [`exact_expected_bk`].
pub fn exact_expected_ck(config: &OracleConfig, k: u32) -> f64 {
    exact_ck_series(config, |r| geometric_partial(r, k))
}

/// Limit of the exact E[C_k].
pub fn exact_expected_ck_limit(config: &OracleConfig) -> f64 {
    exact_ck_series(config, |r| 1.0 / (1.0 - r))
}

fn exact_ck_series<F: Fn(f64) -> f64>(config: &OracleConfig, series: F) -> f64 {
    let a = config.alpha;
    let bb = config.backbone_coefficient();
    let q = forest_exponent(a);
    let extra = match config.thin_count {
        ThinCount::DMinus1 => 0.0,
        ThinCount::D => (2.0 - a) / (2.0 * (1.0 - a)),
    };
    let s1 = expected_w0_moment(a, 1.0) * series(ratio_factor_moment(a, 1.0));
    let sq = expected_w0_moment(a, q) * series(ratio_factor_moment(a, q));
    let s2 = expected_w0_moment(a, 2.0) * series(ratio_factor_moment(a, 2.0));
    bb * s1 + 0.5 * (2.0 - a) * (sq - s2) + extra * s2
}

fn geometric_partial(r: f64, k: u32) -> f64 {
    // sum_{i=0}^{k} r^i
    (1.0 - r.powi(k as i32 + 1)) / (1.0 - r)
}

// --- small analytic utilities ------------------------------------------

/// Laplace transform of a standard uniform, (1 - e^{-s})/s, with a Taylor
/// branch below 1e-4.
pub fn uniform_laplace(s: f64) -> f64 {
    assert!(s >= 0.0);
    if s < 1e-4 {
        1.0 - s / 2.0 + s * s / 6.0
    } else {
        (1.0 - (-s).exp()) / s
    }
}

/// Closed-form survival probability of the special case.
pub fn special_case_theta(alpha: f64, p: f64) -> f64 {
    p.powf(alpha / (1.0 - alpha))
}

/// Stay probability and jump-CDF exponent of the special-case chain.
pub fn special_case_transitions(alpha: f64) -> (f64, f64) {
    (alpha, alpha / (1.0 - alpha))
}
