//! Level-by-level sampler of the k-cut cluster from the backbone
//! decomposition.
//!
//! Conditionally on the future-maximum weight `w` at a backbone vertex,
//! the level consists of: the size-biased tilted degree `D`, the binomial
//! thinning `D_hat` of its candidate edges at retention `w`, and `D_hat`
//! independent subcritical trees whose offspring law is the extinction-
//! conditioned dual of the percolated offspring. Each attached tree of
//! total progeny `|T|` carries `|T| + 1` edge weights, i.i.d. uniform on
//! `[0, w]`.
//!
//! Deep levels have astronomically many microscopic trees; above a
//! threshold the per-level totals are drawn from a moment-matched
//! bivariate Gaussian whose moments come from the generating function
//! (exact for every family), and the sample is flagged approximate.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::chain::{sample_beta, sample_w0, StepContext};
use crate::conventions::{Conventions, ThinCount};
use crate::error::{Error, Result};
use crate::offspring::{Offspring, OffspringSpec};
use crate::percolation::PercolationCurve;
use crate::special::ln_gamma_fn;

/// Thresholds steering the approximation ladder.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SimOptions {
    /// Above this thinned degree a level is aggregated in bulk.
    pub bulk_threshold: f64,
    /// Above this tilted-degree mean the series inversion hands over to the
    /// negative-binomial route (explicit family) or refuses (others).
    pub degree_series_threshold: f64,
    /// Largest n for exact binomial thinning.
    pub exact_binomial_threshold: f64,
    /// Collect (w, weight) pairs of individually sampled forest edges
    /// (tests only; unbounded memory on large runs).
    pub record_weights: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            bulk_threshold: 1e4,
            degree_series_threshold: 1e4,
            exact_binomial_threshold: 1e7,
            record_weights: false,
        }
    }
}

/// Outcome of one backbone level.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LevelSample {
    pub k: u32,
    /// Conditioning future-maximum weight W_k.
    pub w: f64,
    /// Backbone degree D (integer-valued; f64 because deep levels exceed u64).
    pub degree: f64,
    /// Thinned degree D_hat.
    pub kept: f64,
    /// Vertices added at this level, including the backbone vertex itself.
    pub vertices: f64,
    /// Total forest edge weight added at this level.
    pub forest_weight: f64,
    /// True when any approximation (bulk totals, Gaussian thinning, ...)
    /// entered this level.
    pub approx: bool,
}

/// A full simulated cluster: per-level samples plus running totals.
#[derive(Clone, Debug)]
pub struct ClusterPath {
    pub levels: Vec<LevelSample>,
    /// Backbone edge weight sampled in the k -> k+1 transition (beta_{k+1}).
    pub beta: Vec<f64>,
    /// Running vertex count M_k.
    pub m: Vec<f64>,
    /// Running cumulative weight C_k. Level k contributes its forest weight
    /// plus (under `include_backbone_weights`) the transition edge
    /// beta_{k+1}, matching the worked example's accounting.
    pub c: Vec<f64>,
    pub conventions: Conventions,
    /// Forest edge weights with their level w, when recording was enabled.
    pub recorded_weights: Vec<(f64, f64)>,
}

impl ClusterPath {
    /// Cumulative weight of the strict k-cut cluster: the accounting above
    /// minus the trailing backbone edge, which the physical k-cut excludes.
    pub fn c_strict(&self, k: usize) -> f64 {
        if self.conventions.include_backbone_weights {
            self.c[k] - self.beta[k]
        } else {
            self.c[k]
        }
    }

    pub fn depth(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }
}

/// Per-level solver context shared by the degree sampler, the dual trees,
/// and the chain transition.
#[derive(Clone, Copy, Debug)]
pub struct LevelContext {
    pub step: StepContext,
    /// Second tilted moment E[X^2 (1 - w theta)^(X-1)].
    pub m2: f64,
    /// Extinction probability eta = 1 - theta.
    pub eta: f64,
    /// Tilt point s = 1 - w theta.
    pub s: f64,
    /// Dual offspring mean w m1 (subcritical: < 1).
    pub dual_mean: f64,
    /// f'' at the tilt point, for the bulk variance.
    pub f2: f64,
}

pub fn level_context(
    offspring: &Offspring,
    curve: &PercolationCurve,
    w: f64,
) -> Result<LevelContext> {
    let theta = curve.theta(w)?;
    if theta <= 0.0 {
        return Err(Error::Domain(format!("level context needs w above criticality, got {w}")));
    }
    let eps = w * theta;
    let c = offspring.gf_complement(eps)?;
    let m1 = c.f1;
    let m2 = (1.0 - eps) * c.f2 + c.f1;
    let denom = 1.0 - w * c.f1;
    let theta_prime = if denom.abs() < 1e-8 {
        curve.theta_prime(w)?
    } else {
        theta * c.f1 / denom
    };
    let q = m1 * theta / theta_prime;
    if !(-1e-9..=1.0 + 1e-9).contains(&q) {
        return Err(Error::ModelConsistency(format!(
            "jump probability {q} outside [0,1] at w={w}"
        )));
    }
    let dual_mean = w * m1;
    if dual_mean > 1.0 + 1e-9 {
        return Err(Error::ModelConsistency(format!(
            "dual offspring mean {dual_mean} supercritical at w={w}"
        )));
    }
    Ok(LevelContext {
        step: StepContext {
            w,
            theta,
            theta_prime,
            m1,
            jump_probability: q.clamp(0.0, 1.0),
        },
        m2,
        eta: 1.0 - theta,
        s: 1.0 - eps,
        dual_mean: dual_mean.min(1.0),
        f2: c.f2,
    })
}

// --- backbone degree ----------------------------------------------------

/// Draw the size-biased tilted backbone degree, pmf proportional to
/// x (1 - w theta)^(x-1) P(X = x).
pub fn sample_backbone_degree<R: Rng + ?Sized>(
    offspring: &Offspring,
    curve: &PercolationCurve,
    w: f64,
    rng: &mut R,
) -> Result<f64> {
    let ctx = level_context(offspring, curve, w)?;
    let opts = SimOptions::default();
    Ok(sample_degree_ctx(offspring, &ctx, &opts, rng)?.0)
}

fn sample_degree_ctx<R: Rng + ?Sized>(
    offspring: &Offspring,
    ctx: &LevelContext,
    opts: &SimOptions,
    rng: &mut R,
) -> Result<(f64, bool)> {
    if let OffspringSpec::Deterministic { fixed_value } = offspring.spec() {
        // tilting preserves a point mass
        return Ok((fixed_value as f64, false));
    }
    let mean = ctx.m2 / ctx.step.m1;
    if !mean.is_finite() {
        return Err(Error::ModelConsistency("tilted degree normaliser not finite".into()));
    }
    if mean <= opts.degree_series_threshold {
        // inverse transform over the tilted series; expected cost is the
        // mean itself
        let u = rng.gen::<f64>();
        let target = u * ctx.step.m1; // u * normaliser
        let mut acc = 0.0f64;
        let mut s_pow = 1.0f64; // s^(x-1)
        for (i, p) in offspring.pmf_iter().enumerate() {
            let x = (i + 1) as f64;
            acc += x * p * s_pow;
            if acc >= target {
                return Ok((x, false));
            }
            s_pow *= ctx.s;
            if s_pow < 1e-300 {
                // representable mass exhausted; the draw sits at the end
                return Ok((x, false));
            }
            if i > 100_000_000 {
                return Err(Error::ModelConsistency(
                    "tilted degree inversion exceeded its iteration cap".into(),
                ));
            }
        }
        unreachable!("pmf iterator is infinite");
    }
    match offspring.spec() {
        OffspringSpec::Sibuya { alpha } => {
            // Exact: the tilted law is 1 + NegBinomial(1 - alpha, s), i.e.
            // 1 + Poisson(Gamma(1 - alpha, s/(1-s))), valid at any tilt.
            let scale = ctx.s / (1.0 - ctx.s);
            let g = Gamma::new(1.0 - alpha, scale)
                .map_err(|e| Error::ModelConsistency(format!("gamma mixing: {e}")))?;
            let lambda = g.sample(rng);
            if lambda <= 0.0 {
                return Ok((1.0, false));
            }
            if lambda < 1e12 {
                let d = Poisson::new(lambda)
                    .map_err(|e| Error::ModelConsistency(format!("poisson: {e}")))?
                    .sample(rng);
                Ok((1.0 + d, false))
            } else {
                // normal-matched Poisson; relative error O(lambda^-1/2)
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                Ok(((1.0 + lambda + lambda.sqrt() * z).round().max(1.0), true))
            }
        }
        _ => Err(Error::ModelConsistency(format!(
            "tilted degree mean {mean:.3e} beyond the series threshold has no exact sampler \
             for {:?}",
            offspring.spec()
        ))),
    }
}

// --- thinning ------------------------------------------------------------

/// Binomial thinning of the backbone degree at retention probability `w`.
/// Exact below the configured threshold, Poisson- or Gaussian-matched above.
pub fn thin_degree<R: Rng + ?Sized>(
    degree: f64,
    w: f64,
    convention: ThinCount,
    rng: &mut R,
) -> (f64, bool) {
    thin_degree_opts(degree, w, convention, &SimOptions::default(), rng)
}

fn thin_degree_opts<R: Rng + ?Sized>(
    degree: f64,
    w: f64,
    convention: ThinCount,
    opts: &SimOptions,
    rng: &mut R,
) -> (f64, bool) {
    let n = match convention {
        ThinCount::D => degree,
        ThinCount::DMinus1 => (degree - 1.0).max(0.0),
    };
    if n <= 0.0 || w <= 0.0 {
        return (0.0, false);
    }
    if w >= 1.0 {
        return (n, false);
    }
    if n <= opts.exact_binomial_threshold {
        let b = rand_distr::Binomial::new(n as u64, w).expect("valid binomial");
        return (b.sample(rng) as f64, false);
    }
    let mean = n * w;
    if w < 1e-3 && mean < 1e7 {
        // Poisson limit; total-variation error is O(n w^2)
        if mean <= 0.0 {
            return (0.0, true);
        }
        let d = Poisson::new(mean).expect("valid poisson").sample(rng);
        (d.min(n), true)
    } else {
        let sd = (n * w * (1.0 - w)).sqrt();
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        ((mean + sd * z).round().clamp(0.0, n), true)
    }
}

// --- dual (conditionally finite) trees ----------------------------------

/// Per-level sampler of the extinction-conditioned dual offspring.
/// Families with closed forms draw in O(1); discrete Pareto uses rejection
/// when the extinction probability is moderate and a lazily built pmf
/// table otherwise.
pub struct DualOffspring<'a> {
    offspring: &'a Offspring,
    ctx: LevelContext,
    w: f64,
    /// lazily extended cumulative pmf for the table route
    table: Vec<f64>,
    route: DualRoute,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum DualRoute {
    SibuyaClosed,
    SmallSupport,
    Rejection,
    Table,
}

impl<'a> DualOffspring<'a> {
    pub fn new(offspring: &'a Offspring, ctx: LevelContext, w: f64) -> Result<Self> {
        let route = match offspring.spec() {
            OffspringSpec::Sibuya { .. } => DualRoute::SibuyaClosed,
            OffspringSpec::Deterministic { .. } => DualRoute::SmallSupport,
            OffspringSpec::DiscretePareto { alpha } => {
                if alpha <= 1.0 {
                    return Err(Error::ModelConsistency(
                        "dual tree sampling for infinite-mean discrete Pareto is not supported"
                            .into(),
                    ));
                }
                if ctx.eta >= 0.05 {
                    DualRoute::Rejection
                } else {
                    DualRoute::Table
                }
            }
        };
        Ok(DualOffspring { offspring, ctx, w, table: Vec::new(), route })
    }

    /// pmf of the dual offspring at x, eta^(x-1) P(Binom(X, w) = x).
    fn pmf(&self, x: u64) -> f64 {
        dual_pmf(self.offspring, self.w, self.ctx.eta, x, 200_000)
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<u64> {
        match self.route {
            DualRoute::SibuyaClosed => {
                let alpha = match self.offspring.spec() {
                    OffspringSpec::Sibuya { alpha } => alpha,
                    _ => unreachable!(),
                };
                // P(X~ = 0) = (1 - w^alpha)/eta; P(X~ = k) = w^alpha eta^(k-1) p_k
                let u = rng.gen::<f64>();
                let w_a = self.w.powf(alpha);
                let mut acc = (1.0 - w_a) / self.ctx.eta;
                if u < acc {
                    return Ok(0);
                }
                let mut factor = w_a; // w^alpha eta^(k-1)
                for (i, p) in self.offspring.pmf_iter().enumerate() {
                    acc += factor * p;
                    if u < acc {
                        return Ok(i as u64 + 1);
                    }
                    factor *= self.ctx.eta;
                    if factor < 1e-320 {
                        return Ok(i as u64 + 1);
                    }
                }
                unreachable!()
            }
            DualRoute::SmallSupport | DualRoute::Table => {
                let u = rng.gen::<f64>();
                let mut acc = 0.0;
                let mut x = 0u64;
                loop {
                    if (x as usize) >= self.table.len() {
                        self.table.push(self.pmf(x));
                    }
                    acc = if x == 0 {
                        self.table[0]
                    } else {
                        acc + self.table[x as usize]
                    };
                    if u < acc || acc >= 1.0 - 1e-12 {
                        return Ok(x);
                    }
                    x += 1;
                    if x > 1_000_000 {
                        return Err(Error::ModelConsistency(
                            "dual pmf table exhausted without covering the draw".into(),
                        ));
                    }
                }
            }
            DualRoute::Rejection => {
                // draw Binom(X, w), accept with probability eta^b; accepted
                // values have the dual pmf
                for _ in 0..100_000 {
                    let x = match self.offspring.sample(rng).as_u64() {
                        Some(v) => v,
                        None => continue, // astronomically unlikely for alpha > 1
                    };
                    let b = rand_distr::Binomial::new(x, self.w)
                        .expect("valid binomial")
                        .sample(rng);
                    let accept = self.ctx.eta.powi(b.min(1 << 30) as i32);
                    if rng.gen::<f64>() < accept {
                        return Ok(b);
                    }
                }
                Err(Error::ModelConsistency("dual rejection sampler starved".into()))
            }
        }
    }
}

/// Direct numeric evaluation of the dual pmf
/// eta^(x-1) sum_{y >= max(x,1)} C(y,x) w^x (1-w)^(y-x) P(X = y),
/// truncated when the summand tail is negligible.
pub fn dual_pmf(offspring: &Offspring, w: f64, eta: f64, x: u64, y_cap: usize) -> f64 {
    dual_pmf_from(offspring, w, eta, x, y_cap, false)
}

/// Same double sum but over y > x strictly (excluding the y = x term);
/// kept so tests can document which reading matches the dual generating
/// function.
pub fn dual_pmf_strict_y(offspring: &Offspring, w: f64, eta: f64, x: u64, y_cap: usize) -> f64 {
    dual_pmf_from(offspring, w, eta, x, y_cap, true)
}

fn dual_pmf_from(
    offspring: &Offspring,
    w: f64,
    eta: f64,
    x: u64,
    y_cap: usize,
    strict: bool,
) -> f64 {
    let ln_w = w.ln();
    let ln_1w = (1.0f64 - w).ln();
    let xf = x as f64;
    let mut sum = 0.0f64;
    let y_start = if strict { x + 1 } else { x }.max(1);
    let mut pmf = offspring.pmf_iter();
    let mut y = 1u64;
    let mut p = pmf.next().unwrap();
    while y < y_start {
        y += 1;
        p = pmf.next().unwrap();
    }
    loop {
        let yf = y as f64;
        let ln_binom =
            ln_gamma_fn(yf + 1.0) - ln_gamma_fn(xf + 1.0) - ln_gamma_fn(yf - xf + 1.0);
        let term = (ln_binom + xf * ln_w + (yf - xf) * ln_1w).exp() * p;
        sum += term;
        if y as usize > y_cap || (term < 1e-18 * sum && yf > xf / w.max(1e-9) + 8.0) {
            break;
        }
        y += 1;
        p = pmf.next().unwrap();
    }
    eta.powi(x as i32 - 1) * sum
}

/// Simulate one conditionally finite attached tree: returns its total
/// progeny and the sum of (progeny + 1) i.i.d. Unif[0, w] edge weights.
pub fn sample_finite_tree<R: Rng + ?Sized>(
    offspring: &Offspring,
    curve: &PercolationCurve,
    w: f64,
    rng: &mut R,
) -> Result<(u64, f64)> {
    let ctx = level_context(offspring, curve, w)?;
    let mut dual = DualOffspring::new(offspring, ctx, w)?;
    sample_finite_tree_with(&mut dual, w, rng, &mut None)
}

fn sample_finite_tree_with<R: Rng + ?Sized>(
    dual: &mut DualOffspring<'_>,
    w: f64,
    rng: &mut R,
    weight_log: &mut Option<&mut Vec<(f64, f64)>>,
) -> Result<(u64, f64)> {
    let mut vertices = 1u64;
    let mut frontier = 1u64;
    while frontier > 0 {
        let mut next = 0u64;
        for _ in 0..frontier {
            next += dual.sample(rng)?;
        }
        vertices += next;
        frontier = next;
        if vertices > 2_000_000_000 {
            return Err(Error::ModelConsistency(
                "attached tree exceeded two billion vertices; dual law looks supercritical"
                    .into(),
            ));
        }
    }
    let mut weight = 0.0;
    for _ in 0..=vertices {
        let u = rng.gen::<f64>() * w;
        if let Some(log) = weight_log.as_deref_mut() {
            log.push((w, u));
        }
        weight += u;
    }
    Ok((vertices, weight))
}

// --- levels and clusters --------------------------------------------------

/// Sample one backbone level at conditioning weight `w_k`.
pub fn sample_level<R: Rng + ?Sized>(
    offspring: &Offspring,
    curve: &PercolationCurve,
    k: u32,
    w_k: f64,
    conventions: &Conventions,
    opts: &SimOptions,
    rng: &mut R,
) -> Result<LevelSample> {
    let ctx = level_context(offspring, curve, w_k)?;
    sample_level_ctx(offspring, &ctx, k, conventions, opts, rng, &mut None)
}

fn sample_level_ctx<R: Rng + ?Sized>(
    offspring: &Offspring,
    ctx: &LevelContext,
    k: u32,
    conventions: &Conventions,
    opts: &SimOptions,
    rng: &mut R,
    weight_log: &mut Option<&mut Vec<(f64, f64)>>,
) -> Result<LevelSample> {
    let w = ctx.step.w;
    let (degree, mut approx) = sample_degree_ctx(offspring, ctx, opts, rng)?;
    let (kept, thin_approx) = thin_degree_opts(degree, w, conventions.thin_count, opts, rng);
    approx |= thin_approx;

    let mut vertices = 1.0f64; // the backbone vertex itself
    let mut forest_weight = 0.0f64;
    if kept > 0.0 {
        if kept <= opts.bulk_threshold {
            let mut dual = DualOffspring::new(offspring, *ctx, w)?;
            for _ in 0..kept as u64 {
                let (n, s) = sample_finite_tree_with(&mut dual, w, rng, weight_log)?;
                vertices += n as f64;
                forest_weight += s;
            }
        } else {
            let (v, s) = bulk_level_totals(ctx, kept, rng);
            vertices += v;
            forest_weight += s;
            approx = true;
        }
    }
    Ok(LevelSample { k, w, degree, kept, vertices, forest_weight, approx })
}

/// Moment-matched bivariate Gaussian for (total tree vertices, total forest
/// weight) over `kept` attached trees. All moments come straight from the
/// generating function:
///   mu~ = w m1, sigma~^2 = w^2 eta f'' + mu~(1 - mu~),
///   E[N] = 1/(1-mu~), Var N = sigma~^2/(1-mu~)^3,
///   S | N ~ sum of (N+1) Unif[0,w].
/// Negative-mass clamping biases strongly skewed regimes; such levels are
/// flagged approximate and their exact means are preserved by construction.
fn bulk_level_totals<R: Rng + ?Sized>(ctx: &LevelContext, kept: f64, rng: &mut R) -> (f64, f64) {
    let w = ctx.step.w;
    let mu = ctx.dual_mean;
    let sigma2 = (w * w * ctx.eta * ctx.f2 + mu * (1.0 - mu)).max(0.0);
    let one = 1.0 - mu;
    let mean_n = 1.0 / one;
    let var_n = sigma2 / (one * one * one);
    let mean_edges = mean_n + 1.0;
    let mean_s = 0.5 * w * mean_edges;
    let var_s = w * w * (mean_edges / 12.0 + var_n / 4.0);
    let cov_ns = 0.5 * w * var_n;

    let m_v = kept * mean_n;
    let sd_v = (kept * var_n).sqrt();
    let m_s = kept * mean_s;
    let var_s_tot = kept * var_s;
    let cov_tot = kept * cov_ns;

    let z1: f64 = rng.sample(rand_distr::StandardNormal);
    let z2: f64 = rng.sample(rand_distr::StandardNormal);
    let v = (m_v + sd_v * z1).round().max(kept); // every tree has >= 1 vertex
    // conditional normal for S given the vertex draw
    let (s_mean_c, s_var_c) = if sd_v > 0.0 {
        (m_s + cov_tot / (sd_v * sd_v) * (v - m_v), var_s_tot - cov_tot * cov_tot / (sd_v * sd_v))
    } else {
        (m_s, var_s_tot)
    };
    let s = s_mean_c + s_var_c.max(0.0).sqrt() * z2;
    // pathwise bound: (v + kept) edges, each weight below w
    let s = s.clamp(0.0, w * (v + kept));
    (v, s)
}

/// Simulate the full k-cut cluster to depth `k_max`.
///
/// Each level k draws its forest at W_k, then performs the chain
/// transition and samples the backbone edge beta_{k+1}; the running C
/// includes that edge (when configured), mirroring the accounting of the
/// worked example where level k carries E[beta_{k+1} | W_k].
pub fn simulate_cluster<R: Rng + ?Sized>(
    offspring: &Offspring,
    curve: &PercolationCurve,
    k_max: u32,
    conventions: &Conventions,
    opts: &SimOptions,
    rng: &mut R,
) -> Result<ClusterPath> {
    let mut recorded = Vec::new();
    let mut levels = Vec::with_capacity(k_max as usize + 1);
    let mut beta = Vec::with_capacity(k_max as usize + 1);
    let mut m = Vec::with_capacity(k_max as usize + 1);
    let mut c = Vec::with_capacity(k_max as usize + 1);
    let mut w = sample_w0(curve, rng)?;
    let mut total_m = 0.0;
    let mut total_c = 0.0;
    for k in 0..=k_max {
        let ctx = level_context(offspring, curve, w)?;
        let level = {
            let mut log = if opts.record_weights { Some(&mut recorded) } else { None };
            sample_level_ctx(offspring, &ctx, k, conventions, opts, rng, &mut log)?
        };
        // chain transition out of this level
        let (w_next, jumped) = crate::chain::step_from_context(curve, &ctx.step, rng)?;
        let b = sample_beta(w, w_next, jumped, conventions.beta_convention, rng);
        total_m += level.vertices;
        total_c += level.forest_weight;
        if conventions.include_backbone_weights {
            total_c += b;
        }
        levels.push(level);
        beta.push(b);
        m.push(total_m);
        c.push(total_c);
        w = w_next;
    }
    Ok(ClusterPath { levels, beta, m, c, conventions: *conventions, recorded_weights: recorded })
}

/// Simulate the forests along a frozen chain (conditional sampling given
/// (W_k); used by independence checks).
pub fn simulate_cluster_on_chain<R: Rng + ?Sized>(
    offspring: &Offspring,
    curve: &PercolationCurve,
    w_path: &[f64],
    conventions: &Conventions,
    opts: &SimOptions,
    rng: &mut R,
) -> Result<Vec<LevelSample>> {
    let mut out = Vec::with_capacity(w_path.len());
    for (k, &w) in w_path.iter().enumerate() {
        let ctx = level_context(offspring, curve, w)?;
        out.push(sample_level_ctx(offspring, &ctx, k as u32, conventions, opts, rng, &mut None)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conventions::BetaConvention;
    use crate::oracle;
    use crate::percolation::solve_theta;
    use crate::rng::battery_rng;
    use crate::stats::{ks_one_sample, ks_two_sample, ks_two_sample_threshold, RunningMoments, KS_COEFF_99};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn setup(spec: OffspringSpec) -> (Arc<Offspring>, PercolationCurve) {
        let off = Arc::new(Offspring::new(spec).unwrap());
        let curve = PercolationCurve::with_defaults(off.clone()).unwrap();
        (off, curve)
    }

    #[test]
    fn deterministic_degree_is_fixed() {
        let (off, curve) = setup(OffspringSpec::Deterministic { fixed_value: 2 });
        let mut rng = battery_rng(30, 0);
        for _ in 0..50 {
            assert_eq!(sample_backbone_degree(&off, &curve, 0.8, &mut rng).unwrap(), 2.0);
        }
    }

    #[test]
    fn tilted_degree_mean_matches_generating_function() {
        // E[D] = 1 + (1-alpha) s/(1-s) for the explicit family
        let alpha = 0.25;
        let (off, curve) = setup(OffspringSpec::Sibuya { alpha });
        let w = 0.5;
        let theta = solve_theta(&off, w).unwrap();
        let s = 1.0 - w * theta;
        let expected = 1.0 + (1.0 - alpha) * s / (1.0 - s);
        let mut rng = battery_rng(30, 1);
        let mut stats = RunningMoments::default();
        for _ in 0..100_000 {
            let d = sample_backbone_degree(&off, &curve, w, &mut rng).unwrap();
            assert!(d >= 1.0);
            stats.push(d);
        }
        let err = (stats.mean() - expected).abs();
        assert!(err < 3.5 * stats.std_error(), "E[D] {} vs {expected}", stats.mean());
    }

    #[test]
    fn negative_binomial_route_agrees_with_series() {
        // the two exact routes must produce the same law
        let alpha = 0.3;
        let (off, curve) = setup(OffspringSpec::Sibuya { alpha });
        let w = 0.02; // tilted mean ~ 93
        let ctx = level_context(&off, &curve, w).unwrap();
        let series_opts =
            SimOptions { degree_series_threshold: 1e9, ..Default::default() };
        let nb_opts = SimOptions { degree_series_threshold: 0.0, ..Default::default() };
        let n = 40_000;
        let mut rng = battery_rng(30, 2);
        let a: Vec<f64> =
            (0..n).map(|_| sample_degree_ctx(&off, &ctx, &series_opts, &mut rng).unwrap().0).collect();
        let b: Vec<f64> =
            (0..n).map(|_| sample_degree_ctx(&off, &ctx, &nb_opts, &mut rng).unwrap().0).collect();
        let d = ks_two_sample(&a, &b);
        let threshold = ks_two_sample_threshold(n, n, KS_COEFF_99);
        assert!(d < threshold, "KS {d} >= {threshold}");
    }

    #[test]
    fn thinning_edge_cases() {
        let mut rng = battery_rng(30, 3);
        assert_eq!(thin_degree(5.0, 1.0, ThinCount::D, &mut rng).0, 5.0);
        assert_eq!(thin_degree(5.0, 1.0, ThinCount::DMinus1, &mut rng).0, 4.0);
        assert_eq!(thin_degree(5.0, 0.0, ThinCount::D, &mut rng).0, 0.0);
        assert_eq!(thin_degree(1.0, 0.7, ThinCount::DMinus1, &mut rng).0, 0.0);
    }

    #[test]
    fn thinning_means_exact_and_approximate() {
        let mut rng = battery_rng(30, 4);
        // exact route: n = 1e6 within the exact threshold
        let mut stats = RunningMoments::default();
        for _ in 0..10_000 {
            stats.push(thin_degree(1e6, 1e-6, ThinCount::D, &mut rng).0);
        }
        assert!((stats.mean() - 1.0).abs() < 3.0 * stats.std_error().max(0.03));
        // Poisson route
        let mut stats = RunningMoments::default();
        for _ in 0..10_000 {
            let (v, approx) = thin_degree(1e9, 2e-8, ThinCount::D, &mut rng);
            assert!(approx);
            stats.push(v);
        }
        assert!((stats.mean() - 20.0).abs() < 4.0 * stats.std_error());
        // Gaussian route
        let mut stats = RunningMoments::default();
        for _ in 0..10_000 {
            let (v, approx) = thin_degree(1e9, 0.5, ThinCount::D, &mut rng);
            assert!(approx);
            stats.push(v);
        }
        assert!((stats.mean() - 5e8).abs() < 4.0 * stats.std_error());
        assert_relative_eq!(stats.variance(), 2.5e8, max_relative = 0.1);
    }

    #[test]
    fn dual_pmf_closed_form_matches_double_sum() {
        // the sibuya dual reduction against direct evaluation of the
        // binomially mixed double sum, and documentation that the sum must
        // include the y = x term to match the generating-function dual
        for &alpha in &[0.25, 0.4] {
            let off = Offspring::sibuya(alpha).unwrap();
            for &w in &[0.2, 0.5, 0.8] {
                let theta = solve_theta(&off, w).unwrap();
                let eta = 1.0 - theta;
                let w_a = w.powf(alpha);
                let mut mismatch_strict = 0.0f64;
                for x in 0..=15u64 {
                    let closed = if x == 0 {
                        (1.0 - w_a) / eta
                    } else {
                        w_a * eta.powi(x as i32 - 1) * off.pmf(x).unwrap()
                    };
                    let direct = dual_pmf(&off, w, eta, x, 400_000);
                    assert!(
                        (closed - direct).abs() < 1e-9,
                        "alpha={alpha} w={w} x={x}: closed {closed} vs direct {direct}"
                    );
                    let strict = dual_pmf_strict_y(&off, w, eta, x, 400_000);
                    mismatch_strict = mismatch_strict.max((closed - strict).abs());
                }
                // dropping y = x changes the pmf measurably: the strict
                // reading of the double sum does not define the dual law
                assert!(mismatch_strict > 1e-6, "strict-y variant unexpectedly matched");
            }
        }
    }

    #[test]
    fn dual_pmf_normalises() {
        for (spec, w) in [
            (OffspringSpec::Sibuya { alpha: 0.3 }, 0.6),
            (OffspringSpec::DiscretePareto { alpha: 3.0 }, 0.9),
            (OffspringSpec::Deterministic { fixed_value: 3 }, 0.8),
        ] {
            let off = Offspring::new(spec).unwrap();
            let theta = solve_theta(&off, w).unwrap();
            let eta = 1.0 - theta;
            let total: f64 = (0..400u64).map(|x| dual_pmf(&off, w, eta, x, 400_000)).sum();
            assert!((total - 1.0).abs() < 1e-8, "{spec:?} at w={w}: pmf sums to {total}");
        }
    }

    #[test]
    fn finite_tree_moments_explicit_family() {
        let alpha = 0.25;
        let (off, curve) = setup(OffspringSpec::Sibuya { alpha });
        let mut rng = battery_rng(30, 5);
        for &w in &[0.3, 0.7] {
            let mut edges = RunningMoments::default();
            let mut weights = RunningMoments::default();
            let ctx = level_context(&off, &curve, w).unwrap();
            let mut dual = DualOffspring::new(&off, ctx, w).unwrap();
            for _ in 0..100_000 {
                let (n, s) = sample_finite_tree_with(&mut dual, w, &mut rng, &mut None).unwrap();
                edges.push(n as f64 + 1.0);
                weights.push(s);
            }
            // E[|T| + 1] = (2 - alpha)/(1 - alpha), E[S] = w/2 E[|T| + 1]
            let target_edges = (2.0 - alpha) / (1.0 - alpha);
            assert!(
                (edges.mean() - target_edges).abs() < 3.5 * edges.std_error(),
                "w={w}: E[|T|+1] {} vs {target_edges}",
                edges.mean()
            );
            let target_weight = 0.5 * w * target_edges;
            assert!(
                (weights.mean() - target_weight).abs() < 3.5 * weights.std_error(),
                "w={w}: E[S] {} vs {target_weight}",
                weights.mean()
            );
        }
    }

    #[test]
    fn dual_mean_for_pareto_routes() {
        // rejection route (moderate eta) and table route (eta near zero)
        let (off, curve) = setup(OffspringSpec::DiscretePareto { alpha: 3.0 });
        let mut rng = battery_rng(30, 6);
        for &w in &[0.9, 0.9999] {
            let ctx = level_context(&off, &curve, w).unwrap();
            let mut dual = DualOffspring::new(&off, ctx, w).unwrap();
            let mut stats = RunningMoments::default();
            for _ in 0..60_000 {
                stats.push(dual.sample(&mut rng).unwrap() as f64);
            }
            assert!(
                (stats.mean() - ctx.dual_mean).abs() < 4.0 * stats.std_error(),
                "w={w}: dual mean {} vs {}",
                stats.mean(),
                ctx.dual_mean
            );
        }
    }

    #[test]
    fn level_conditional_mean_matches_exact_oracle() {
        // E[B_k | W_k = w] including the transition edge, against the
        // exact conditional oracle, for both thinning conventions
        let alpha = 0.25;
        let (off, curve) = setup(OffspringSpec::Sibuya { alpha });
        let w = 0.25;
        let mut rng = battery_rng(30, 7);
        for thin in [ThinCount::D, ThinCount::DMinus1] {
            let conventions = Conventions { thin_count: thin, ..Default::default() };
            let cfg = oracle::OracleConfig::new(
                alpha,
                crate::conventions::ForestFactor::Half,
                BetaConvention::Paper,
                thin,
            )
            .unwrap();
            let opts = SimOptions::default();
            let ctx = level_context(&off, &curve, w).unwrap();
            let mut stats = RunningMoments::default();
            for _ in 0..100_000 {
                let level =
                    sample_level_ctx(&off, &ctx, 0, &conventions, &opts, &mut rng, &mut None)
                        .unwrap();
                let (w_next, jumped) =
                    crate::chain::step_from_context(&curve, &ctx.step, &mut rng).unwrap();
                let b = sample_beta(w, w_next, jumped, conventions.beta_convention, &mut rng);
                stats.push(level.forest_weight + b);
            }
            let target = oracle::exact_expected_bk_given_w(&cfg, w);
            assert!(
                (stats.mean() - target).abs() < 3.5 * stats.std_error(),
                "{thin:?}: E[B|w] {} vs {target} (se {})",
                stats.mean(),
                stats.std_error()
            );
        }
    }

    #[test]
    fn degenerate_level_at_tiny_w() {
        let (off, curve) = setup(OffspringSpec::Sibuya { alpha: 0.25 });
        let mut rng = battery_rng(30, 8);
        let conventions = Conventions::default();
        let opts = SimOptions::default();
        // deep in the chain w is astronomically small: D_hat concentrates
        // on its Poisson-ish mean and weights vanish
        let level = sample_level(&off, &curve, 0, 1e-200, &conventions, &opts, &mut rng).unwrap();
        assert!(level.vertices >= 1.0);
        assert!(level.forest_weight <= 1e-150);
    }

    #[test]
    fn bulk_and_exact_aggregation_agree() {
        // pin D_hat = 2000 and compare per-level totals from individual
        // trees against the moment-matched bulk draw
        let alpha = 0.25;
        let (off, curve) = setup(OffspringSpec::Sibuya { alpha });
        let w = 0.3;
        let kept = 2000.0;
        let ctx = level_context(&off, &curve, w).unwrap();
        let mut rng = battery_rng(30, 9);
        let reps = 400;
        let mut exact_v = RunningMoments::default();
        let mut exact_s = RunningMoments::default();
        let mut bulk_v = RunningMoments::default();
        let mut bulk_s = RunningMoments::default();
        for _ in 0..reps {
            let mut dual = DualOffspring::new(&off, ctx, w).unwrap();
            let mut v = 0.0;
            let mut s = 0.0;
            for _ in 0..kept as u64 {
                let (n, ws) = sample_finite_tree_with(&mut dual, w, &mut rng, &mut None).unwrap();
                v += n as f64;
                s += ws;
            }
            exact_v.push(v);
            exact_s.push(s);
            let (v, s) = bulk_level_totals(&ctx, kept, &mut rng);
            bulk_v.push(v);
            bulk_s.push(s);
        }
        let se_v = (exact_v.std_error().powi(2) + bulk_v.std_error().powi(2)).sqrt();
        assert!(
            (exact_v.mean() - bulk_v.mean()).abs() < 3.5 * se_v,
            "vertex means {} vs {}",
            exact_v.mean(),
            bulk_v.mean()
        );
        let se_s = (exact_s.std_error().powi(2) + bulk_s.std_error().powi(2)).sqrt();
        assert!(
            (exact_s.mean() - bulk_s.mean()).abs() < 3.5 * se_s,
            "weight means {} vs {}",
            exact_s.mean(),
            bulk_s.mean()
        );
        // variances agree within the sampling noise of a variance estimate
        let ratio_v = bulk_v.variance() / exact_v.variance();
        let ratio_s = bulk_s.variance() / exact_s.variance();
        assert!(ratio_v > 0.7 && ratio_v < 1.4, "vertex variance ratio {ratio_v}");
        assert!(ratio_s > 0.7 && ratio_s < 1.4, "weight variance ratio {ratio_s}");
    }

    #[test]
    fn cluster_invariants_hold_pathwise() {
        let (off, curve) = setup(OffspringSpec::Sibuya { alpha: 0.25 });
        let conventions = Conventions::default();
        let opts = SimOptions::default();
        let mut rng = battery_rng(30, 10);
        for _ in 0..300 {
            let path = simulate_cluster(&off, &curve, 12, &conventions, &opts, &mut rng).unwrap();
            let mut prev_c = 0.0;
            let mut prev_m = 0.0;
            let mut prev_w = 1.0;
            for (k, level) in path.levels.iter().enumerate() {
                assert!(level.kept <= level.degree);
                assert!(level.vertices >= level.kept + 1.0);
                assert!(level.w <= prev_w);
                prev_w = level.w;
                assert!(path.c[k] >= prev_c);
                assert!(path.m[k] >= prev_m);
                prev_c = path.c[k];
                prev_m = path.m[k];
                assert!(path.c[k] < path.m[k], "C must stay below M");
                assert!(path.beta[k] <= level.w);
            }
            assert_relative_eq!(
                path.c[0],
                path.levels[0].forest_weight + path.beta[0],
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn forest_weights_are_conditionally_uniform() {
        // pooled rescaled forest edge weights against Unif[0,1]
        let (off, curve) = setup(OffspringSpec::Sibuya { alpha: 0.3 });
        let conventions = Conventions::default();
        let opts = SimOptions { record_weights: true, ..Default::default() };
        let mut rng = battery_rng(30, 11);
        let mut pooled = Vec::new();
        while pooled.len() < 100_000 {
            let path = simulate_cluster(&off, &curve, 6, &conventions, &opts, &mut rng).unwrap();
            pooled.extend(path.recorded_weights.iter().map(|&(w, u)| u / w));
        }
        let d = ks_one_sample(&pooled, |x| x.clamp(0.0, 1.0));
        assert!(d < KS_COEFF_99 / (pooled.len() as f64).sqrt(), "KS {d}");
    }

    #[test]
    fn forests_independent_given_the_chain() {
        // freeze one chain path; B_j, B_k sample-correlations vanish
        let (off, curve) = setup(OffspringSpec::Sibuya { alpha: 0.25 });
        let conventions = Conventions::default();
        let opts = SimOptions::default();
        let mut rng = battery_rng(30, 12);
        let chain =
            crate::chain::sample_product_chain(0.25, 5, BetaConvention::Paper, &mut rng).unwrap();
        let n = 30_000;
        let mut b1 = Vec::with_capacity(n);
        let mut b3 = Vec::with_capacity(n);
        for _ in 0..n {
            let levels =
                simulate_cluster_on_chain(&off, &curve, &chain.w, &conventions, &opts, &mut rng)
                    .unwrap();
            b1.push(levels[1].forest_weight);
            b3.push(levels[3].forest_weight);
        }
        let m1: f64 = b1.iter().sum::<f64>() / n as f64;
        let m3: f64 = b3.iter().sum::<f64>() / n as f64;
        let mut cov = 0.0;
        let mut v1 = 0.0;
        let mut v3 = 0.0;
        for i in 0..n {
            cov += (b1[i] - m1) * (b3[i] - m3);
            v1 += (b1[i] - m1).powi(2);
            v3 += (b3[i] - m3).powi(2);
        }
        let corr = cov / (v1 * v3).sqrt();
        assert!(corr.abs() < 3.5 / (n as f64).sqrt(), "corr {corr}");
    }
}
