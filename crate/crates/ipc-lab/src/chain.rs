//! The future-maximum-weight chain along the backbone.
//!
//! `W_k` is the largest weight the invasion adds strictly after the k-th
//! backbone vertex. It is a non-increasing Markov chain: at each step it
//! either stays put or jumps below a threshold drawn from the survival
//! curve. For the explicit special case the chain is also an i.i.d.
//! product `W_k = W_0 prod P_i`, which this module exposes as a second,
//! independent sampling route.

use rand::Rng;

use crate::conventions::BetaConvention;
use crate::error::{Error, Result};
use crate::offspring::OffspringSpec;
use crate::percolation::PercolationCurve;
use crate::rng::uniform_open01;
use crate::stats::{fit_line, ks_two_sample};

/// One realisation of the chain together with the backbone edge weights.
#[derive(Clone, Debug)]
pub struct ChainPath {
    /// W_0 .. W_K (non-increasing).
    pub w: Vec<f64>,
    /// beta_1 .. beta_K; beta_k is the weight of the k-th backbone edge.
    pub beta: Vec<f64>,
    /// Per-transition flag: did W strictly decrease.
    pub jumped: Vec<bool>,
    pub beta_convention: BetaConvention,
}

impl ChainPath {
    pub fn depth(&self) -> usize {
        self.w.len().saturating_sub(1)
    }
}

/// Per-step solver context; caches the survival quantities at the current
/// chain position so stay-heavy paths do not re-solve every step.
pub struct ChainSampler<'a> {
    curve: &'a PercolationCurve,
    cache: Option<StepContext>,
}

#[derive(Clone, Copy, Debug)]
pub struct StepContext {
    pub w: f64,
    pub theta: f64,
    pub theta_prime: f64,
    pub m1: f64,
    pub jump_probability: f64,
}

impl<'a> ChainSampler<'a> {
    pub fn new(curve: &'a PercolationCurve) -> Self {
        ChainSampler { curve, cache: None }
    }

    pub fn context(&mut self, w: f64) -> Result<StepContext> {
        if let Some(c) = self.cache {
            if c.w == w {
                return Ok(c);
            }
        }
        let theta = self.curve.theta(w)?;
        let theta_prime = self.curve.theta_prime_given(w, theta)?;
        let (m1, _) = self.curve.tilted_moments(w, theta)?;
        let q = m1 * theta / theta_prime;
        if !(-1e-9..=1.0 + 1e-9).contains(&q) {
            return Err(Error::ModelConsistency(format!(
                "jump probability {q} outside [0,1] at w={w}"
            )));
        }
        let ctx =
            StepContext { w, theta, theta_prime, m1, jump_probability: q.clamp(0.0, 1.0) };
        self.cache = Some(ctx);
        Ok(ctx)
    }

    /// One Markov transition from `w`; returns the next value and whether
    /// the chain jumped.
    pub fn step<R: Rng + ?Sized>(&mut self, w: f64, rng: &mut R) -> Result<(f64, bool)> {
        let ctx = self.context(w)?;
        step_from_context(self.curve, &ctx, rng)
    }
}

/// Transition using an already-built step context.
pub fn step_from_context<R: Rng + ?Sized>(
    curve: &PercolationCurve,
    ctx: &StepContext,
    rng: &mut R,
) -> Result<(f64, bool)> {
    if rng.gen::<f64>() < ctx.jump_probability {
        // conditional jump law: P(W' < u | jump) = theta(u) / theta(w)
        let v = uniform_open01(rng);
        let next = curve.theta_inverse(v * ctx.theta)?;
        Ok((next.min(ctx.w), true))
    } else {
        Ok((ctx.w, false))
    }
}

/// Draw the chain start W_0, whose CDF is the survival function itself.
pub fn sample_w0<R: Rng + ?Sized>(curve: &PercolationCurve, rng: &mut R) -> Result<f64> {
    let v = uniform_open01(rng);
    curve.theta_inverse(v)
}

/// Single Markov transition (free-function form of [`ChainSampler::step`]).
pub fn step<R: Rng + ?Sized>(
    curve: &PercolationCurve,
    w_k: f64,
    rng: &mut R,
) -> Result<(f64, bool)> {
    ChainSampler::new(curve).step(w_k, rng)
}

/// Backbone edge weight for the transition (w_prev -> w_next).
///
/// `Paper` assigns the full weight w_prev on the stay event and a uniform
/// below w_prev otherwise; `Complement` assigns w_prev exactly when the
/// chain jumped (the maximum is attained at this edge) and a uniform below
/// w_next otherwise. Either way beta <= w_prev.
pub fn sample_beta<R: Rng + ?Sized>(
    w_prev: f64,
    w_next: f64,
    jumped: bool,
    convention: BetaConvention,
    rng: &mut R,
) -> f64 {
    match convention {
        BetaConvention::Paper => {
            if !jumped {
                w_prev
            } else {
                rng.gen::<f64>() * w_prev
            }
        }
        BetaConvention::Complement => {
            if jumped {
                w_prev
            } else {
                rng.gen::<f64>() * w_next
            }
        }
    }
}

/// Simulate a full path of the given depth through the survival curve.
pub fn sample_path<R: Rng + ?Sized>(
    curve: &PercolationCurve,
    depth: usize,
    convention: BetaConvention,
    rng: &mut R,
) -> Result<ChainPath> {
    let mut sampler = ChainSampler::new(curve);
    let mut w = Vec::with_capacity(depth + 1);
    let mut beta = Vec::with_capacity(depth);
    let mut jumped = Vec::with_capacity(depth);
    let mut cur = sample_w0(curve, rng)?;
    w.push(cur);
    for _ in 0..depth {
        let (next, j) = sampler.step(cur, rng)?;
        beta.push(sample_beta(cur, next, j, convention, rng));
        jumped.push(j);
        w.push(next);
        cur = next;
    }
    Ok(ChainPath { w, beta, jumped, beta_convention: convention })
}

/// One multiplicative ratio factor P: equal to 1 with probability alpha,
/// otherwise Unif[0,1]^((1-alpha)/alpha).
pub fn sample_ratio_factor<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if rng.gen::<f64>() < alpha {
        1.0
    } else {
        uniform_open01(rng).powf((1.0 - alpha) / alpha)
    }
}

/// Special-case chain built multiplicatively, W_k = W_0 prod P_i, equal in
/// distribution to iterating [`step`] on the explicit family.
pub fn sample_product_chain<R: Rng + ?Sized>(
    alpha: f64,
    depth: usize,
    convention: BetaConvention,
    rng: &mut R,
) -> Result<ChainPath> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("product chain needs alpha in (0,1), got {alpha}")));
    }
    let mut w = Vec::with_capacity(depth + 1);
    let mut beta = Vec::with_capacity(depth);
    let mut jumped = Vec::with_capacity(depth);
    let mut cur = uniform_open01(rng).powf((1.0 - alpha) / alpha);
    w.push(cur);
    for _ in 0..depth {
        let p = sample_ratio_factor(alpha, rng);
        let next = cur * p;
        let j = p < 1.0;
        beta.push(sample_beta(cur, next, j, convention, rng));
        jumped.push(j);
        w.push(next);
        cur = next;
    }
    Ok(ChainPath { w, beta, jumped, beta_convention: convention })
}

/// Two-sample KS distance between the chain ratio W_k / W_{k-lag} and the
/// law of prod_{j<=lag} P_j, both sampled `n` times. Only meaningful for
/// the explicit family, whose ratio law is available independently.
pub fn check_ratio_limit<R: Rng + ?Sized>(
    curve: &PercolationCurve,
    k: usize,
    lag: usize,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    let alpha = match curve.offspring().spec() {
        OffspringSpec::Sibuya { alpha } => alpha,
        other => {
            return Err(Error::Domain(format!(
                "ratio-limit check needs the explicit family, got {other:?}"
            )))
        }
    };
    if lag == 0 {
        return Ok(0.0);
    }
    if lag > k {
        return Err(Error::Domain(format!("lag {lag} exceeds depth {k}")));
    }
    let mut ratios = Vec::with_capacity(n);
    let mut sampler = ChainSampler::new(curve);
    for _ in 0..n {
        let mut cur = sample_w0(curve, rng)?;
        let mut history = Vec::with_capacity(k + 1);
        history.push(cur);
        for _ in 0..k {
            let (next, _) = sampler.step(cur, rng)?;
            history.push(next);
            cur = next;
        }
        ratios.push(history[k] / history[k - lag]);
    }
    let reference: Vec<f64> =
        (0..n).map(|_| (0..lag).map(|_| sample_ratio_factor(alpha, rng)).product()).collect();
    Ok(ks_two_sample(&ratios, &reference))
}

/// Result of the exponential-decay check on one path.
#[derive(Clone, Copy, Debug)]
pub struct ExponentialBoundCheck {
    /// False for supercritical families (positive critical probability) or
    /// paths too short to fit.
    pub applicable: bool,
    /// Slope strictly negative and finite.
    pub passed: bool,
    /// Fitted decay rate of ln W_k over the second half of the path.
    pub rate: f64,
}

pub fn check_exponential_bounds(path: &ChainPath, p_c: f64) -> ExponentialBoundCheck {
    if p_c > 0.0 || path.depth() < 20 {
        return ExponentialBoundCheck { applicable: false, passed: false, rate: f64::NAN };
    }
    let half = path.w.len() / 2;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, &wk) in path.w.iter().enumerate().skip(half) {
        if wk > 0.0 {
            xs.push(k as f64);
            ys.push(wk.ln());
        }
    }
    if xs.len() < 5 {
        return ExponentialBoundCheck { applicable: false, passed: false, rate: f64::NAN };
    }
    let fit = fit_line(&xs, &ys);
    ExponentialBoundCheck {
        applicable: true,
        passed: fit.slope < 0.0 && fit.slope.is_finite(),
        rate: fit.slope,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::Offspring;
    use crate::oracle;
    use crate::rng::battery_rng;
    use crate::stats::{ks_one_sample, ks_two_sample_threshold, KS_COEFF_99};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn sibuya_curve(alpha: f64) -> PercolationCurve {
        PercolationCurve::with_defaults(Arc::new(Offspring::sibuya(alpha).unwrap())).unwrap()
    }

    #[test]
    fn w0_moments_match_the_special_case() {
        let curve = sibuya_curve(0.25);
        let mut rng = battery_rng(20, 0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_frac = 0.0;
        let c = 2.0 / 3.0; // (1-2a)/(1-a)
        for _ in 0..n {
            let w0 = sample_w0(&curve, &mut rng).unwrap();
            sum += w0;
            sum_frac += w0.powf(c);
        }
        let mean = sum / n as f64;
        // E[W_0] = alpha, Var = alpha/(2-alpha) - alpha^2
        let var = 0.25 / 1.75 - 0.0625;
        assert!((mean - 0.25).abs() < 3.0 * (var / n as f64).sqrt(), "E[W_0] = {mean}");
        let mean_frac = sum_frac / n as f64;
        let var_frac = oracle::expected_w0_moment(0.25, 2.0 * c) - (1.0f64 / 3.0).powi(2);
        assert!(
            (mean_frac - 1.0 / 3.0).abs() < 3.0 * (var_frac / n as f64).sqrt(),
            "E[W_0^(2/3)] = {mean_frac}"
        );
    }

    #[test]
    fn w0_median_for_deterministic_two() {
        // theta(p) = (2p-1)/p^2 = 1/2 solves to p = 2 - sqrt(2)
        let off = Arc::new(Offspring::deterministic(2).unwrap());
        let curve = PercolationCurve::with_defaults(off).unwrap();
        let median = curve.theta_inverse(0.5).unwrap();
        assert_relative_eq!(median, 2.0 - std::f64::consts::SQRT_2, max_relative = 1e-8);
    }

    #[test]
    fn stay_events_keep_w_exactly_and_jumps_decrease_it() {
        let curve = sibuya_curve(0.4);
        let mut rng = battery_rng(20, 1);
        let mut sampler = ChainSampler::new(&curve);
        let mut w = sample_w0(&curve, &mut rng).unwrap();
        for _ in 0..400 {
            let (next, jumped) = sampler.step(w, &mut rng).unwrap();
            if jumped {
                assert!(next < w);
            } else {
                assert_eq!(next, w);
            }
            w = next;
        }
    }

    #[test]
    fn stay_frequency_matches_alpha() {
        let alpha = 0.25;
        let curve = sibuya_curve(alpha);
        let mut rng = battery_rng(20, 2);
        let mut sampler = ChainSampler::new(&curve);
        let n_steps = 200_000usize;
        let mut stays = 0usize;
        let mut w = sample_w0(&curve, &mut rng).unwrap();
        let mut depth = 0usize;
        for _ in 0..n_steps {
            let (next, jumped) = sampler.step(w, &mut rng).unwrap();
            if !jumped {
                stays += 1;
            }
            w = next;
            depth += 1;
            // restart before W underflows f64
            if depth == 120 || w < 1e-280 {
                w = sample_w0(&curve, &mut rng).unwrap();
                depth = 0;
            }
        }
        let freq = stays as f64 / n_steps as f64;
        let sigma = (alpha * (1.0 - alpha) / n_steps as f64).sqrt();
        assert!((freq - alpha).abs() < 3.5 * sigma, "stay frequency {freq}");
    }

    #[test]
    fn jump_factor_law() {
        // conditional on a jump, W'/W has CDF x^(alpha/(1-alpha))
        let alpha = 0.25;
        let curve = sibuya_curve(alpha);
        let mut rng = battery_rng(20, 3);
        let mut sampler = ChainSampler::new(&curve);
        let mut ratios = Vec::with_capacity(20_000);
        let mut w = sample_w0(&curve, &mut rng).unwrap();
        let mut depth = 0;
        while ratios.len() < 20_000 {
            let (next, jumped) = sampler.step(w, &mut rng).unwrap();
            if jumped {
                ratios.push(next / w);
            }
            w = next;
            depth += 1;
            if depth == 120 || w < 1e-280 {
                w = sample_w0(&curve, &mut rng).unwrap();
                depth = 0;
            }
        }
        let expo = alpha / (1.0 - alpha);
        let d = ks_one_sample(&ratios, |x| x.powf(expo));
        assert!(d < KS_COEFF_99 / (ratios.len() as f64).sqrt(), "KS {d}");
    }

    #[test]
    fn beta_conventions_have_the_right_means() {
        let alpha = 0.25;
        let mut rng = battery_rng(20, 4);
        let n = 200_000;
        for (convention, expected) in [
            (BetaConvention::Paper, 0.5 * (1.0 + alpha)),
            (BetaConvention::Complement, 1.0 - 0.5 * alpha),
        ] {
            let mut sum = 0.0;
            for _ in 0..n {
                // jump indicator has probability 1 - alpha in the special case
                let jumped = rng.gen::<f64>() < 1.0 - alpha;
                let w_prev = 0.8;
                let w_next = if jumped { 0.8 * sample_ratio_factor(1e-9, &mut rng) } else { 0.8 };
                sum += sample_beta(w_prev, w_next, jumped, convention, &mut rng);
            }
            let ratio = sum / n as f64 / 0.8;
            assert!(
                (ratio - expected).abs() < 0.005,
                "{convention:?}: E[beta]/W = {ratio}, want {expected}"
            );
        }
    }

    #[test]
    fn beta_never_exceeds_previous_w() {
        let curve = sibuya_curve(0.3);
        let mut rng = battery_rng(20, 5);
        for convention in [BetaConvention::Paper, BetaConvention::Complement] {
            for _ in 0..50 {
                let path = sample_path(&curve, 30, convention, &mut rng).unwrap();
                for k in 0..path.depth() {
                    assert!(path.beta[k] <= path.w[k]);
                    assert!(path.w[k + 1] <= path.w[k]);
                }
                let depth = path.depth() as f64;
                assert!(path.beta.iter().sum::<f64>() <= depth);
            }
        }
    }

    #[test]
    fn product_chain_moments() {
        let alpha = 0.25;
        let mut rng = battery_rng(20, 6);
        let n = 200_000;
        let mut w1 = 0.0;
        let mut p1 = 0.0;
        for _ in 0..n {
            let path = sample_product_chain(alpha, 1, BetaConvention::Paper, &mut rng).unwrap();
            w1 += path.w[1];
            p1 += path.w[1] / path.w[0];
        }
        // E[W_1] = alpha (alpha(2-alpha)), E[P] = alpha(2-alpha)
        let target_w1 = alpha * (alpha * (2.0 - alpha));
        let mean_w1 = w1 / n as f64;
        assert!((mean_w1 - target_w1).abs() < 3.0 * 0.2 / (n as f64).sqrt(), "E[W_1] {mean_w1}");
        let mean_p = p1 / n as f64;
        assert!(
            (mean_p - alpha * (2.0 - alpha)).abs() < 3.0 * 0.35 / (n as f64).sqrt(),
            "E[P] {mean_p}"
        );
    }

    #[test]
    fn ratio_factor_atom_at_one() {
        let mut rng = battery_rng(20, 7);
        let n = 200_000;
        let ones = (0..n).filter(|_| sample_ratio_factor(0.5, &mut rng) == 1.0).count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt(), "P(P=1) = {freq}");
    }

    #[test]
    fn product_and_step_chains_agree_in_distribution() {
        let alpha = 0.25;
        let curve = sibuya_curve(alpha);
        let mut rng = battery_rng(20, 8);
        let n = 100_000;
        let mut via_step = Vec::with_capacity(n);
        let mut via_product = Vec::with_capacity(n);
        let mut sampler = ChainSampler::new(&curve);
        for _ in 0..n {
            let mut w = sample_w0(&curve, &mut rng).unwrap();
            for _ in 0..10 {
                w = sampler.step(w, &mut rng).unwrap().0;
            }
            via_step.push(w);
            via_product
                .push(sample_product_chain(alpha, 10, BetaConvention::Paper, &mut rng).unwrap().w[10]);
        }
        let d = ks_two_sample(&via_step, &via_product);
        let threshold = ks_two_sample_threshold(n, n, KS_COEFF_99);
        assert!(d < threshold, "KS {d} >= {threshold}");
    }

    #[test]
    fn ratio_limit_trivial_lag() {
        let curve = sibuya_curve(0.75);
        let mut rng = battery_rng(20, 9);
        assert_eq!(check_ratio_limit(&curve, 10, 0, 100, &mut rng).unwrap(), 0.0);
        let pareto =
            PercolationCurve::with_defaults(Arc::new(Offspring::discrete_pareto(3.0).unwrap()))
                .unwrap();
        assert!(check_ratio_limit(&pareto, 10, 1, 100, &mut rng).is_err());
    }

    #[test]
    fn exponential_bounds_on_product_paths() {
        let alpha = 0.25;
        let mut rng = battery_rng(20, 10);
        let n_paths = 1000;
        let mut mean_rate = 0.0;
        for _ in 0..n_paths {
            let path = sample_product_chain(alpha, 200, BetaConvention::Paper, &mut rng).unwrap();
            let check = check_exponential_bounds(&path, 0.0);
            assert!(check.applicable && check.passed, "slope must be negative");
            mean_rate += check.rate;
        }
        mean_rate /= n_paths as f64;
        // E[ln P] = -(1-alpha)^2/alpha = -2.25
        let target = -(1.0 - alpha) * (1.0 - alpha) / alpha;
        assert!(
            (mean_rate - target).abs() < 0.05 * target.abs(),
            "mean decay rate {mean_rate} vs {target}"
        );
    }

    #[test]
    fn exponential_bounds_not_applicable_with_positive_critical_point() {
        let path = ChainPath {
            w: vec![0.9; 40],
            beta: vec![0.1; 39],
            jumped: vec![false; 39],
            beta_convention: BetaConvention::Paper,
        };
        let check = check_exponential_bounds(&path, 0.5);
        assert!(!check.applicable);
    }
}
