//! Survival and extinction probabilities of the percolated branching
//! process.
//!
//! For retention probability `p` the survival probability `theta(p)` is the
//! largest root of `theta = 1 - E[(1 - p theta)^X]`. Everything here is
//! solved through the generic generating function; the closed forms known
//! for specific families live in tests and in the oracle module, keeping
//! the two routes independent.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offspring::Offspring;
use crate::stats::{fit_line, LineFit};

/// Solver and cache options for a [`PercolationCurve`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CurveOptions {
    /// Grid points precomputed for Newton seeding.
    pub grid_len: usize,
    /// Fixed-point residual demanded of every returned survival value.
    pub residual_tol: f64,
    /// If positive, grid interpolation within this estimated error is
    /// returned without re-solving. Zero re-solves on every call.
    pub interp_tolerance: f64,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions { grid_len: 257, residual_tol: 1e-12, interp_tolerance: 0.0 }
    }
}

/// Precomputed survival curve for one offspring law.
///
/// The grid stores exactly solved values and serves as the seed for a
/// safeguarded Newton polish on every query, so returned values always
/// satisfy the residual tolerance regardless of grid resolution. Fully
/// built curves are immutable and shareable across threads.
#[derive(Debug)]
pub struct PercolationCurve {
    offspring: Arc<Offspring>,
    opts: CurveOptions,
    p_c: f64,
    /// (ln x, ln theta) with x = p - p_c (or x = p when p_c = 0), ascending.
    grid: Vec<(f64, f64)>,
}

/// Largest fixed point of `theta = 1 - E[(1 - p theta)^X]`, found by
/// fixed-point iteration from theta = 1 and a Newton polish from above
/// (the map is convex and increasing, so iterates stay above the survival
/// root and select it rather than the trivial root at zero).
pub fn solve_theta(offspring: &Offspring, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("retention probability outside [0,1]: {p}")));
    }
    let p_c = offspring.critical_probability();
    if p <= p_c {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    solve_theta_seeded(offspring, p, 1.0, 1e-12)
}

/// Newton solve started from `seed` (must be at or above the survival
/// root); used internally with grid seeds.
fn solve_theta_seeded(offspring: &Offspring, p: f64, seed: f64, tol: f64) -> Result<f64> {
    let gap = |theta: f64| -> Result<f64> { Ok(offspring.gf_complement(p * theta)?.gap) };
    let mut theta = seed.clamp(1e-300, 1.0);
    // A few fixed-point steps; starting at or above the root they stay
    // above it by monotonicity of the map.
    for _ in 0..4 {
        let next = gap(theta)?;
        if !(next.is_finite() && next > 0.0) {
            break;
        }
        if next < theta {
            theta = next;
        }
    }
    // Safeguarded Newton with a [lo, hi] sign bracket; geometric bisection
    // when a Newton step leaves the bracket.
    let mut lo = 0.0f64; // h < 0 side
    let mut hi = 1.0f64; // h >= 0 side
    let mut residual = f64::INFINITY;
    for _ in 0..500 {
        let c = offspring.gf_complement(p * theta)?;
        let h = theta - c.gap;
        residual = h.abs();
        if residual <= tol * theta.max(1e-250) {
            return Ok(theta);
        }
        if h >= 0.0 {
            hi = hi.min(theta);
        } else {
            lo = lo.max(theta);
        }
        let hp = 1.0 - p * c.f1;
        let newton = theta - h / hp;
        theta = if hp > 0.0 && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else if lo > 0.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * hi
        };
        if theta < 1e-300 {
            return Ok(0.0);
        }
    }
    Err(Error::Solver { iterations: 500, residual })
}

impl PercolationCurve {
    pub fn build(offspring: Arc<Offspring>, opts: CurveOptions) -> Result<Self> {
        let p_c = offspring.critical_probability();
        let n = opts.grid_len.max(16);
        // geometric grid in p - p_c (or p itself at criticality zero)
        let (lo, hi) = if p_c > 0.0 { (1e-9, 1.0 - p_c) } else { (1e-12, 1.0) };
        let mut grid = Vec::with_capacity(n);
        let mut seed = 1.0;
        for i in (0..n).rev() {
            let t = i as f64 / (n - 1) as f64;
            let x = lo * (hi / lo).powf(t);
            let p = (p_c + x).min(1.0);
            let theta = if p >= 1.0 {
                1.0
            } else {
                seed = solve_theta_seeded(&offspring, p, seed, opts.residual_tol)?;
                seed
            };
            if theta > 0.0 {
                grid.push((x.ln(), theta.ln()));
            }
        }
        grid.reverse();
        if grid.len() < 4 {
            return Err(Error::Domain("curve grid degenerate".into()));
        }
        Ok(PercolationCurve { offspring, opts, p_c, grid })
    }

    pub fn with_defaults(offspring: Arc<Offspring>) -> Result<Self> {
        Self::build(offspring, CurveOptions::default())
    }

    pub fn offspring(&self) -> &Arc<Offspring> {
        &self.offspring
    }

    pub fn critical_probability(&self) -> f64 {
        self.p_c
    }

    fn interpolate_ln_theta(&self, ln_x: f64) -> f64 {
        let g = &self.grid;
        let pos = g.partition_point(|&(x, _)| x < ln_x);
        let (i, j) = if pos == 0 {
            (0, 1)
        } else if pos >= g.len() {
            (g.len() - 2, g.len() - 1)
        } else {
            (pos - 1, pos)
        };
        let (x0, y0) = g[i];
        let (x1, y1) = g[j];
        y0 + (y1 - y0) * (ln_x - x0) / (x1 - x0)
    }

    /// Survival probability theta(p).
    pub fn theta(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("retention probability outside [0,1]: {p}")));
        }
        if p <= self.p_c {
            return Ok(0.0);
        }
        if p == 1.0 {
            return Ok(1.0);
        }
        let x = p - self.p_c;
        let ln_seed = self.interpolate_ln_theta(x.ln());
        let seed = ln_seed.exp().clamp(1e-300, 1.0);
        if self.opts.interp_tolerance > 0.0 {
            // trust the interpolation when its own residual is inside the
            // configured bound
            let c = self.offspring.gf_complement(p * seed)?;
            if (seed - c.gap).abs() <= self.opts.interp_tolerance * seed {
                return Ok(seed);
            }
        }
        // seed slightly high so the Newton iteration approaches from above
        solve_theta_seeded(&self.offspring, p, seed * 1.02, self.opts.residual_tol)
    }

    /// dtheta/dp via implicit differentiation of the fixed point:
    /// theta' = theta f'(1-p theta) / (1 - p f'(1-p theta)), with a
    /// Richardson central-difference fallback near a vanishing denominator.
    pub fn theta_prime(&self, p: f64) -> Result<f64> {
        if p <= self.p_c || p >= 1.0 {
            return Err(Error::Domain(format!(
                "theta_prime needs p strictly between p_c={} and 1, got {p}",
                self.p_c
            )));
        }
        let theta = self.theta(p)?;
        self.theta_prime_given(p, theta)
    }

    pub(crate) fn theta_prime_given(&self, p: f64, theta: f64) -> Result<f64> {
        let c = self.offspring.gf_complement(p * theta)?;
        let denom = 1.0 - p * c.f1;
        if denom.abs() < 1e-8 {
            let h = 1e-6_f64.min(0.25 * (p - self.p_c)).min(0.25 * (1.0 - p));
            let central = |h: f64| -> Result<f64> {
                Ok((self.theta(p + h)? - self.theta(p - h)?) / (2.0 * h))
            };
            let d1 = central(h)?;
            let d2 = central(0.5 * h)?;
            return Ok((4.0 * d2 - d1) / 3.0);
        }
        Ok(theta * c.f1 / denom)
    }

    /// Inverse of the survival function: the p with theta(p) = y.
    pub fn theta_inverse(&self, y: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!("theta_inverse needs y in [0,1], got {y}")));
        }
        if y == 0.0 {
            return Ok(self.p_c);
        }
        if y >= 1.0 {
            return Ok(1.0);
        }
        // bracket in x = p - p_c (x = p when p_c = 0), bisected in log x,
        // accelerated by Newton steps through the implicit derivative
        let mut t_lo = (1e-300f64).ln();
        let mut t_hi = (1.0 - self.p_c).ln();
        let mut t = self.invert_seed(y);
        for _ in 0..200 {
            let p = (self.p_c + t.exp()).min(1.0);
            let theta = self.theta(p)?;
            let h = theta - y;
            // relative residual: y spans hundreds of orders of magnitude
            // along deep chains
            if h.abs() <= 1e-10 * y {
                return Ok(p);
            }
            if h > 0.0 {
                t_hi = t;
            } else {
                t_lo = t;
            }
            let mut next = f64::NAN;
            if p < 1.0 {
                if let Ok(dp) = self.theta_prime_given(p, theta) {
                    if dp > 0.0 {
                        let cand = p - h / dp;
                        if cand > self.p_c {
                            let tc = (cand - self.p_c).ln();
                            if tc > t_lo && tc < t_hi {
                                next = tc;
                            }
                        }
                    }
                }
            }
            t = if next.is_finite() { next } else { 0.5 * (t_lo + t_hi) };
            if (t_hi - t_lo) < 1e-14 {
                return Ok((self.p_c + ((t_hi + t_lo) / 2.0).exp()).min(1.0));
            }
        }
        Err(Error::Solver { iterations: 200, residual: f64::NAN })
    }

    fn invert_seed(&self, y: f64) -> f64 {
        // inverse-interpolate the (ln x, ln theta) grid
        let ln_y = y.ln();
        let g = &self.grid;
        let pos = g.partition_point(|&(_, ly)| ly < ln_y);
        let (i, j) = if pos == 0 {
            (0, 1)
        } else if pos >= g.len() {
            (g.len() - 2, g.len() - 1)
        } else {
            (pos - 1, pos)
        };
        let (x0, y0) = g[i];
        let (x1, y1) = g[j];
        if y1 == y0 {
            return x0;
        }
        x0 + (x1 - x0) * (ln_y - y0) / (y1 - y0)
    }

    /// Exponentially tilted moments at `s = 1 - w theta`:
    /// `m1 = E[X (1-w theta)^(X-1)]`, `m2 = E[X^2 (1-w theta)^(X-1)]`.
    pub fn tilted_moments(&self, w: f64, theta: f64) -> Result<(f64, f64)> {
        tilted_moments(&self.offspring, w, theta)
    }

    /// Rows (p, theta, theta', residual) for the optional CSV dump.
    pub fn dump_rows(&self, count: usize) -> Result<Vec<[f64; 4]>> {
        let mut rows = Vec::with_capacity(count);
        for i in 0..count {
            let t = (i as f64 + 0.5) / count as f64;
            let p = self.p_c + (1.0 - self.p_c) * t;
            let theta = self.theta(p)?;
            let prime = if p < 1.0 && theta > 0.0 { self.theta_prime(p)? } else { f64::NAN };
            let residual = if theta > 0.0 {
                (theta - self.offspring.gf_complement(p * theta)?.gap).abs()
            } else {
                0.0
            };
            rows.push([p, theta, prime, residual]);
        }
        Ok(rows)
    }
}

/// Tilted moments without a curve (free function form).
pub fn tilted_moments(offspring: &Offspring, w: f64, theta: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&w) || !(0.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("tilted_moments needs w, theta in [0,1]: {w}, {theta}")));
    }
    let eps = w * theta;
    let c = offspring.gf_complement(eps)?;
    if !c.f1.is_finite() {
        return Err(Error::DivergentMoment(
            "E[X (1-w theta)^(X-1)] diverges at w theta = 0 for an infinite-mean law".into(),
        ));
    }
    let s = 1.0 - eps;
    let m2 = s * c.f2 + c.f1;
    Ok((c.f1, m2))
}

/// Least-squares check of the near-critical scaling exponent of theta.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ThetaScalingFit {
    pub slope: f64,
    pub r_squared: f64,
    pub expected_slope: f64,
}

/// Fits ln theta against ln(p - p_c) (supercritical families) or ln p
/// (infinite-mean families) on a geometric grid of 40 points per decade
/// over 4 decades approaching criticality.
pub fn check_theta_scaling(curve: &PercolationCurve) -> Result<ThetaScalingFit> {
    let alpha = curve
        .offspring()
        .spec()
        .alpha()
        .ok_or_else(|| Error::Domain("theta scaling check needs a power-law family".into()))?;
    let p_c = curve.critical_probability();
    let expected_slope = if alpha > 2.0 {
        1.0
    } else if alpha > 1.0 {
        1.0 / (alpha - 1.0)
    } else {
        alpha / (1.0 - alpha)
    };
    let (lo, hi) = (1e-6f64, 1e-2f64);
    let per_decade = 40.0;
    let n = (per_decade * (hi / lo).log10()).round() as usize + 1;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        let x = lo * (hi / lo).powf(t);
        let p = p_c + x;
        let theta = curve.theta(p)?;
        if theta.is_finite() && theta > 0.0 {
            xs.push(x.ln());
            ys.push(theta.ln());
        }
    }
    if xs.len() < 5 {
        return Err(Error::Domain("fewer than 5 usable grid points for the scaling fit".into()));
    }
    let LineFit { slope, r_squared, .. } = fit_line(&xs, &ys);
    Ok(ThetaScalingFit { slope, r_squared, expected_slope })
}
