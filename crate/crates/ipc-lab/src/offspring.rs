//! Offspring distributions of the branching-process tree.
//!
//! Three families are provided, all supported on {1, 2, ...}:
//!
//! * `Sibuya { alpha }` for `alpha` in (0,1): generating function
//!   `E[s^X] = 1 - (1-s)^alpha`, an infinite-mean power-law tail.
//! * `DiscretePareto { alpha }`: `P(X = k) = k^-alpha - (k+1)^-alpha`,
//!   so the survival function is exactly `(k+1)^-alpha`.
//! * `Deterministic { fixed_value }`: point mass.
//!
//! Everything downstream (percolation solver, chain, cluster sampler)
//! consumes distributions through [`Offspring`], which bundles a spec with
//! sampler options and lazily built lookup tables.

use std::sync::OnceLock;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::uniform_open01;
use crate::special::{ln_gamma_fn, upper_gamma, zeta};

/// Serialisable description of an offspring law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum OffspringSpec {
    Sibuya { alpha: f64 },
    DiscretePareto { alpha: f64 },
    Deterministic { fixed_value: u64 },
}

impl OffspringSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OffspringSpec::Sibuya { alpha } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::Config(format!(
                        "sibuya requires alpha in (0,1), got {alpha}"
                    )));
                }
            }
            OffspringSpec::DiscretePareto { alpha } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::Config(format!(
                        "discrete_pareto requires alpha > 0, got {alpha}"
                    )));
                }
            }
            OffspringSpec::Deterministic { fixed_value } => {
                if fixed_value < 1 {
                    return Err(Error::Config("deterministic requires fixed_value >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Tail exponent, when the family has one.
    pub fn alpha(&self) -> Option<f64> {
        match *self {
            OffspringSpec::Sibuya { alpha } | OffspringSpec::DiscretePareto { alpha } => {
                Some(alpha)
            }
            OffspringSpec::Deterministic { .. } => None,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            OffspringSpec::Sibuya { .. } => "sibuya",
            OffspringSpec::DiscretePareto { .. } => "discrete_pareto",
            OffspringSpec::Deterministic { .. } => "deterministic",
        }
    }
}

/// What to do with draws beyond 64-bit range (small-alpha Sibuya tails
/// legitimately reach far past 2^63).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HugeDrawPolicy {
    /// Return the draw as an unbounded integer (default).
    Unbounded,
    /// Return u64::MAX and mark the draw as saturated.
    Saturate,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SamplerOptions {
    /// Where the Sibuya inverse transform switches from the exact survival
    /// recursion to the asymptotic tail inversion.
    pub recursion_cutoff: u64,
    pub huge_policy: HugeDrawPolicy,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions { recursion_cutoff: 1_000_000, huge_policy: HugeDrawPolicy::Unbounded }
    }
}

/// One offspring draw. `Big` and `Saturated` only occur for heavy-tailed
/// specs under the corresponding [`HugeDrawPolicy`].
#[derive(Clone, Debug, PartialEq)]
pub enum OffspringDraw {
    Value(u64),
    Big(BigUint),
    Saturated,
}

impl OffspringDraw {
    pub fn approx_f64(&self) -> f64 {
        match self {
            OffspringDraw::Value(v) => *v as f64,
            OffspringDraw::Big(b) => {
                let bits = b.bits();
                if bits <= 64 {
                    u64::try_from(b.clone()).map(|v| v as f64).unwrap_or(f64::MAX)
                } else {
                    // leading 53 bits + exponent
                    let shift = bits - 53;
                    let top: BigUint = b >> shift;
                    let top = u64::try_from(top).unwrap_or(u64::MAX) as f64;
                    top * 2f64.powi(shift as i32)
                }
            }
            OffspringDraw::Saturated => u64::MAX as f64,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match self {
            OffspringDraw::Value(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_huge(&self) -> bool {
        !matches!(self, OffspringDraw::Value(_))
    }
}

/// Generating function value `f = E[s^X]` with its first two derivatives.
#[derive(Clone, Copy, Debug)]
pub struct GeneratingFunctionValue {
    pub f: f64,
    pub f1: f64,
    pub f2: f64,
}

/// Generating function evaluated at `s = 1 - eps`, parameterised by the
/// complement so that near-critical callers never form `1 - tiny`.
/// `gap = 1 - f(1-eps)`.
#[derive(Clone, Copy, Debug)]
pub struct GfComplement {
    pub eps: f64,
    pub gap: f64,
    pub f1: f64,
    pub f2: f64,
}

impl GfComplement {
    pub fn f(&self) -> f64 {
        1.0 - self.gap
    }
}

const SIBUYA_TABLE_MAX: usize = 1 << 22;
const PARETO_PMF_TABLE: usize = 1 << 20;
const EM_SWITCH_EPS: f64 = 1e-3;
const EM_HEAD_LEN: usize = 20_000;

/// Runtime offspring object: spec + sampler options + lazy tables.
/// Immutable after construction and shareable across threads.
#[derive(Debug)]
pub struct Offspring {
    spec: OffspringSpec,
    opts: SamplerOptions,
    /// Sibuya survival values S(0), S(1), ... up to the recursion cutoff.
    sibuya_survival: OnceLock<Vec<f64>>,
    /// Discrete-Pareto pmf values p_1, p_2, ... for the series engine.
    pareto_pmf: OnceLock<Vec<f64>>,
    /// (k+1)^-alpha head for the Euler-Maclaurin evaluation.
    pareto_pow: OnceLock<Vec<f64>>,
}

impl Offspring {
    pub fn new(spec: OffspringSpec) -> Result<Self> {
        Self::with_options(spec, SamplerOptions::default())
    }

    pub fn with_options(spec: OffspringSpec, opts: SamplerOptions) -> Result<Self> {
        spec.validate()?;
        if opts.recursion_cutoff < 2 {
            return Err(Error::Config("recursion cutoff must be >= 2".into()));
        }
        Ok(Offspring {
            spec,
            opts,
            sibuya_survival: OnceLock::new(),
            pareto_pmf: OnceLock::new(),
            pareto_pow: OnceLock::new(),
        })
    }

    pub fn sibuya(alpha: f64) -> Result<Self> {
        Self::new(OffspringSpec::Sibuya { alpha })
    }

    pub fn discrete_pareto(alpha: f64) -> Result<Self> {
        Self::new(OffspringSpec::DiscretePareto { alpha })
    }

    pub fn deterministic(fixed_value: u64) -> Result<Self> {
        Self::new(OffspringSpec::Deterministic { fixed_value })
    }

    pub fn spec(&self) -> OffspringSpec {
        self.spec
    }

    pub fn options(&self) -> SamplerOptions {
        self.opts
    }

    /// E[X]; infinite for Sibuya and for discrete Pareto with alpha <= 1.
    pub fn mean(&self) -> f64 {
        match self.spec {
            OffspringSpec::Deterministic { fixed_value } => fixed_value as f64,
            OffspringSpec::Sibuya { .. } => f64::INFINITY,
            OffspringSpec::DiscretePareto { alpha } => {
                if alpha > 1.0 {
                    zeta(alpha)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Critical percolation probability 1/E[X], with the convention that it
    /// is 0 when the mean is infinite.
    pub fn critical_probability(&self) -> f64 {
        let m = self.mean();
        if m.is_finite() {
            1.0 / m
        } else {
            0.0
        }
    }

    /// P(X = k) for k >= 1.
    pub fn pmf(&self, k: u64) -> Result<f64> {
        if k < 1 {
            return Err(Error::Domain(format!("pmf requires k >= 1, got {k}")));
        }
        Ok(match self.spec {
            OffspringSpec::Deterministic { fixed_value } => {
                if k == fixed_value {
                    1.0
                } else {
                    0.0
                }
            }
            OffspringSpec::Sibuya { alpha } => {
                // p_1 = alpha, p_{k+1} = p_k (k - alpha) / (k + 1)
                let mut p = alpha;
                for j in 1..k {
                    p *= (j as f64 - alpha) / (j as f64 + 1.0);
                }
                p
            }
            OffspringSpec::DiscretePareto { alpha } => pareto_pmf(alpha, k as f64),
        })
    }

    /// P(X > k) for k >= 0.
    pub fn survival(&self, k: u64) -> f64 {
        match self.spec {
            OffspringSpec::Deterministic { fixed_value } => {
                if k < fixed_value {
                    1.0
                } else {
                    0.0
                }
            }
            OffspringSpec::Sibuya { alpha } => {
                if k <= 1 << 21 {
                    let mut s = 1.0;
                    for j in 1..=k {
                        s *= 1.0 - alpha / j as f64;
                    }
                    s
                } else {
                    sibuya_survival_asymptotic(alpha, k as f64)
                }
            }
            OffspringSpec::DiscretePareto { alpha } => (k as f64 + 1.0).powf(-alpha),
        }
    }

    /// Survival function accepting real-valued (possibly astronomically
    /// large) arguments; used by empirical-CDF checks on huge draws.
    pub fn survival_f64(&self, x: f64) -> f64 {
        match self.spec {
            OffspringSpec::Deterministic { fixed_value } => {
                if x < fixed_value as f64 {
                    1.0
                } else {
                    0.0
                }
            }
            OffspringSpec::Sibuya { alpha } => {
                if x <= (1 << 21) as f64 {
                    self.survival(x as u64)
                } else {
                    sibuya_survival_asymptotic(alpha, x)
                }
            }
            OffspringSpec::DiscretePareto { alpha } => (x + 1.0).powf(-alpha),
        }
    }

    /// Streaming pmf values p_1, p_2, p_3, ... without O(k^2) recomputation.
    pub fn pmf_iter(&self) -> PmfIter<'_> {
        PmfIter { offspring: self, k: 0, sibuya_p: 0.0 }
    }

    /// Generating function triple at `s` in [0, 1].
    pub fn gf(&self, s: f64) -> Result<GeneratingFunctionValue> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("gf requires s in [0,1], got {s}")));
        }
        let c = self.gf_complement(1.0 - s)?;
        Ok(GeneratingFunctionValue { f: c.f(), f1: c.f1, f2: c.f2 })
    }

    /// Generating function triple at `s = 1 - eps`, stable for tiny `eps`.
    pub fn gf_complement(&self, eps: f64) -> Result<GfComplement> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Domain(format!("gf complement requires eps in [0,1], got {eps}")));
        }
        Ok(match self.spec {
            OffspringSpec::Sibuya { alpha } => {
                if eps == 0.0 {
                    GfComplement { eps, gap: 0.0, f1: f64::INFINITY, f2: f64::INFINITY }
                } else {
                    let gap = eps.powf(alpha);
                    GfComplement {
                        eps,
                        gap,
                        f1: alpha * eps.powf(alpha - 1.0),
                        f2: alpha * (1.0 - alpha) * eps.powf(alpha - 2.0),
                    }
                }
            }
            OffspringSpec::Deterministic { fixed_value } => {
                let m = fixed_value as f64;
                let log_s = (-eps).ln_1p();
                let s_pow = |p: f64| (p * log_s).exp();
                GfComplement {
                    eps,
                    gap: -(m * log_s).exp_m1(),
                    f1: m * s_pow(m - 1.0),
                    f2: m * (m - 1.0) * s_pow(m - 2.0),
                }
            }
            OffspringSpec::DiscretePareto { alpha } => self.pareto_gf_complement(alpha, eps),
        })
    }

    fn pareto_pmf_table(&self, alpha: f64) -> &[f64] {
        self.pareto_pmf.get_or_init(|| {
            (1..=PARETO_PMF_TABLE as u64).map(|k| pareto_pmf(alpha, k as f64)).collect()
        })
    }

    fn pareto_pow_table(&self, alpha: f64) -> &[f64] {
        self.pareto_pow.get_or_init(|| {
            (0..EM_HEAD_LEN as u64).map(|k| (k as f64 + 1.0).powf(-alpha)).collect()
        })
    }

    fn pareto_gf_complement(&self, alpha: f64, eps: f64) -> GfComplement {
        if eps == 0.0 {
            let f1 = if alpha > 1.0 { zeta(alpha) } else { f64::INFINITY };
            let f2 = if alpha > 2.0 { 2.0 * (zeta(alpha - 1.0) - zeta(alpha)) } else { f64::INFINITY };
            return GfComplement { eps, gap: 0.0, f1, f2 };
        }
        if eps >= EM_SWITCH_EPS {
            self.pareto_series(alpha, eps)
        } else {
            self.pareto_euler_maclaurin(alpha, eps)
        }
    }

    /// Direct power series in s = 1 - eps; terms decay like s^k so the loop
    /// is O(1/eps) and only used for eps above the switch. The survival gap
    /// 1 - f is accumulated as sum p_k (1 - s^k) plus the pmf tail, which
    /// keeps it a sum of positive terms with no cancellation.
    fn pareto_series(&self, alpha: f64, eps: f64) -> GfComplement {
        let s = 1.0 - eps;
        let table = self.pareto_pmf_table(alpha);
        let mut gap = 0.0f64;
        let mut f1 = 0.0f64;
        let mut f2 = 0.0f64;
        let mut s_pow = 1.0f64; // s^{k-1}
        let mut one_minus = eps; // 1 - s^k, via 1 - s^{k+1} = (1 - s^k) s + eps
        let mut k = 1u64;
        loop {
            let p = if (k as usize) <= table.len() {
                table[k as usize - 1]
            } else {
                pareto_pmf(alpha, k as f64)
            };
            let kf = k as f64;
            gap += p * one_minus;
            f1 += kf * p * s_pow;
            if k >= 2 {
                f2 += kf * (kf - 1.0) * p * s_pow / s;
            }
            let tail = (kf + 1.0).powf(-alpha) * s_pow * s;
            if tail * (kf + 2.0) * (kf + 2.0) < 1e-17 * (f2.abs() + f1 + 1e-12) && k > 8 {
                // survival mass never reached by the loop counts fully
                // toward the gap (1 - s^j is within 1e-16 of 1 out here)
                gap += (kf + 1.0).powf(-alpha);
                break;
            }
            s_pow *= s;
            one_minus = one_minus * s + eps;
            k += 1;
            if k as usize > 64 * PARETO_PMF_TABLE {
                break; // defensive; unreachable for eps above the switch
            }
        }
        GfComplement { eps, gap, f1, f2 }
    }

    /// Euler-Maclaurin evaluation for tiny eps: survival-form sums with an
    /// incomplete-gamma integral tail. Write z = 1-eps, delta = -ln z and
    ///   A  = sum_{k>=0} (k+1)^-a z^k,
    ///   B  = sum_{k>=1} k (k+1)^-a z^{k-1},
    ///   C2 = sum_{k>=2} k(k-1) (k+1)^-a z^{k-2};
    /// then 1-f = eps*A, f' = A - eps*B, f'' = 2B - eps*C2.
    fn pareto_euler_maclaurin(&self, alpha: f64, eps: f64) -> GfComplement {
        let delta = -(-eps).ln_1p();
        let z = 1.0 - eps;
        let pow = self.pareto_pow_table(alpha);
        let n = pow.len();
        let mut a = 0.0f64;
        let mut b = 0.0f64;
        let mut c2 = 0.0f64;
        let mut zk = 1.0f64; // z^k
        for (k, &w) in pow.iter().enumerate() {
            let kf = k as f64;
            a += w * zk;
            b += kf * w * zk / z;
            c2 += kf * (kf - 1.0) * w * zk / (z * z);
            zk *= z;
        }
        let t_a = em_tail(alpha, delta, n);
        let t_b = (em_tail(alpha - 1.0, delta, n) - t_a) / z;
        let t_c2 = (em_tail(alpha - 2.0, delta, n) - 3.0 * em_tail(alpha - 1.0, delta, n)
            + 2.0 * t_a)
            / (z * z);
        a += t_a;
        b += t_b;
        c2 += t_c2;
        GfComplement { eps, gap: eps * a, f1: a - eps * b, f2: 2.0 * b - eps * c2 }
    }

    /// Draw one offspring value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> OffspringDraw {
        match self.spec {
            OffspringSpec::Deterministic { fixed_value } => OffspringDraw::Value(fixed_value),
            OffspringSpec::DiscretePareto { alpha } => {
                let u = uniform_open01(rng);
                // X = floor(U^{-1/alpha}) has survival (k+1)^-alpha
                let ln_x = -u.ln() / alpha;
                if ln_x < 43.0 * std::f64::consts::LN_2 {
                    OffspringDraw::Value(u.powf(-1.0 / alpha).floor() as u64)
                } else {
                    self.huge_draw(ln_x)
                }
            }
            OffspringSpec::Sibuya { alpha } => self.sample_sibuya(alpha, rng),
        }
    }

    /// Draw with a hard cap; `None` means the draw exceeded the cap
    /// (direct-invasion runs abort on this).
    pub fn sample_capped<R: Rng + ?Sized>(&self, rng: &mut R, cap: u64) -> Option<u64> {
        match self.sample(rng) {
            OffspringDraw::Value(v) if v <= cap => Some(v),
            _ => None,
        }
    }

    fn sibuya_table(&self, alpha: f64) -> &[f64] {
        self.sibuya_survival.get_or_init(|| {
            let len = (self.opts.recursion_cutoff as usize).min(SIBUYA_TABLE_MAX);
            let mut t = Vec::with_capacity(len + 1);
            let mut s = 1.0f64;
            t.push(s);
            for j in 1..=len as u64 {
                s *= 1.0 - alpha / j as f64;
                t.push(s);
            }
            t
        })
    }

    fn sample_sibuya<R: Rng + ?Sized>(&self, alpha: f64, rng: &mut R) -> OffspringDraw {
        let u = uniform_open01(rng);
        let table = self.sibuya_table(alpha);
        // X = min { k >= 1 : S(k) < u }; the table is strictly decreasing.
        if table[table.len() - 1] < u {
            let k = table.partition_point(|&s| s >= u);
            return OffspringDraw::Value(k as u64);
        }
        // Continue the exact recursion up to the configured cutoff if the
        // table was capped short of it.
        let mut k = (table.len() - 1) as u64;
        let mut s = table[table.len() - 1];
        while k < self.opts.recursion_cutoff {
            k += 1;
            s *= 1.0 - alpha / k as f64;
            if s < u {
                return OffspringDraw::Value(k);
            }
        }
        // Tail inversion: solve (x+1)^-alpha (1 + c1/(x+1)) = u Gamma(1-alpha)
        // in log space, one correction pass.
        let ln_y = u.ln() + ln_gamma_fn(1.0 - alpha);
        let c1 = alpha * (alpha + 1.0) / 2.0;
        let l0 = -ln_y / alpha;
        let l1 = l0 + (c1 * (-l0).exp()).ln_1p() / alpha;
        if l1 < 43.0 * std::f64::consts::LN_2 {
            let x = (l1.exp() - 1.0).floor().max(self.opts.recursion_cutoff as f64 + 1.0);
            OffspringDraw::Value(x as u64)
        } else {
            self.huge_draw(l1)
        }
    }

    /// Materialise a draw known only through ln(value). Values beyond 2^53
    /// are approximate in the mantissa, which is far below the total-
    /// variation error of the asymptotic tail inversion itself.
    fn huge_draw(&self, ln_value: f64) -> OffspringDraw {
        match self.opts.huge_policy {
            HugeDrawPolicy::Saturate => {
                if ln_value >= 64.0 * std::f64::consts::LN_2 {
                    OffspringDraw::Saturated
                } else {
                    OffspringDraw::Value(ln_value.exp() as u64)
                }
            }
            HugeDrawPolicy::Unbounded => {
                let bits = ln_value / std::f64::consts::LN_2;
                if bits < 63.0 {
                    return OffspringDraw::Value(ln_value.exp().floor() as u64);
                }
                let shift = (bits.floor() as u64).saturating_sub(52);
                let mantissa = ((bits - shift as f64) * std::f64::consts::LN_2).exp() as u64;
                OffspringDraw::Big(BigUint::from(mantissa) << shift)
            }
        }
    }
}

/// Euler-Maclaurin tail sum_{k>=n} (k+1)^-beta e^{-delta k}.
fn em_tail(beta: f64, delta: f64, n: usize) -> f64 {
    let nf = n as f64;
    let phi = |x: f64| (x + 1.0).powf(-beta) * (-delta * x).exp();
    // integral_n^inf (x+1)^-beta e^{-delta x} dx
    let integral =
        (delta + (beta - 1.0) * delta.ln()).exp() * upper_gamma(1.0 - beta, delta * (nf + 1.0));
    let e = (-delta * nf).exp();
    let p = (nf + 1.0).powf(-beta);
    let phi1 = -e * (beta * p / (nf + 1.0) + delta * p);
    let phi3 = -e
        * (beta * (beta + 1.0) * (beta + 2.0) * p / (nf + 1.0).powi(3)
            + 3.0 * delta * beta * (beta + 1.0) * p / (nf + 1.0).powi(2)
            + 3.0 * delta * delta * beta * p / (nf + 1.0)
            + delta.powi(3) * p);
    integral + 0.5 * phi(nf) - phi1 / 12.0 + phi3 / 720.0
}

/// Stable discrete-Pareto pmf k^-alpha - (k+1)^-alpha.
fn pareto_pmf(alpha: f64, k: f64) -> f64 {
    k.powf(-alpha) * (-(-alpha * (1.0 / k).ln_1p()).exp_m1())
}

/// S(k) = Gamma(k+1-alpha) / (Gamma(1-alpha) Gamma(k+1)) for large k,
/// via the asymptotic ratio with one correction term.
fn sibuya_survival_asymptotic(alpha: f64, k: f64) -> f64 {
    let c1 = alpha * (alpha + 1.0) / 2.0;
    (-alpha * (k + 1.0).ln() - ln_gamma_fn(1.0 - alpha) + (c1 / (k + 1.0)).ln_1p()).exp()
}

/// Iterator over pmf values p_1, p_2, ...
pub struct PmfIter<'a> {
    offspring: &'a Offspring,
    k: u64,
    sibuya_p: f64,
}

impl Iterator for PmfIter<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        self.k += 1;
        let k = self.k;
        Some(match self.offspring.spec {
            OffspringSpec::Deterministic { fixed_value } => {
                if k == fixed_value {
                    1.0
                } else {
                    0.0
                }
            }
            OffspringSpec::Sibuya { alpha } => {
                if k == 1 {
                    self.sibuya_p = alpha;
                } else {
                    self.sibuya_p *= (k as f64 - 1.0 - alpha) / k as f64;
                }
                self.sibuya_p
            }
            OffspringSpec::DiscretePareto { alpha } => {
                let table = self.offspring.pareto_pmf_table(alpha);
                if (k as usize) <= table.len() {
                    table[k as usize - 1]
                } else {
                    pareto_pmf(alpha, k as f64)
                }
            }
        })
    }
}
