//! Small special-function toolkit backing the generating-function and
//! oracle numerics: upper incomplete gamma at non-positive parameters,
//! the exponential integral, Riemann zeta via Euler-Maclaurin, and an
//! adaptive Simpson quadrature used by oracle self-checks.

use statrs::function::gamma::{gamma, gamma_ur, ln_gamma};

/// Exponential integral E1(z) for z > 0.
///
/// Series for z <= 1, modified Lentz continued fraction above.
pub fn exp_integral_e1(z: f64) -> f64 {
    assert!(z > 0.0, "E1 requires z > 0");
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    if z <= 1.0 {
        let mut sum = 0.0f64;
        let mut term = 1.0f64;
        for k in 1..=60 {
            term *= -z / k as f64;
            let contrib = -term / k as f64;
            sum += contrib;
            if contrib.abs() < 1e-18 * sum.abs().max(1e-30) {
                break;
            }
        }
        -EULER_GAMMA - z.ln() + sum
    } else {
        // E1(z) = e^{-z} / (z + 1 - 1/(z + 3 - 4/(z + 5 - 9/(...))))
        let tiny = 1e-300;
        let mut b = z + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..200 {
            let a = -(i as f64) * (i as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-z).exp()
    }
}

/// Upper incomplete gamma Gamma(a, z) for a <= 4 (including a <= 0) and z > 0.
///
/// Downward recurrence Gamma(a, z) = (Gamma(a+1, z) - z^a e^{-z}) / a from a
/// start in (0, 1], or from Gamma(0, z) = E1(z) when a is a non-positive
/// integer; upward recurrence Gamma(a, z) = (a-1) Gamma(a-1, z) + z^{a-1} e^{-z}
/// for a above 1.
pub fn upper_gamma(a: f64, z: f64) -> f64 {
    assert!(a <= 4.0 + 1e-12, "upper_gamma implemented for a <= 4");
    assert!(z > 0.0);
    if a > 1.0 + 1e-12 {
        return (a - 1.0) * upper_gamma(a - 1.0, z) + ((a - 1.0) * z.ln() - z).exp();
    }
    let is_int = (a - a.round()).abs() < 1e-12;
    if is_int && a.round() <= 0.0 {
        let target = a.round() as i64;
        let mut g = exp_integral_e1(z);
        let mut cur = 0i64;
        while cur > target {
            cur -= 1;
            let aa = cur as f64;
            g = (g - (aa * z.ln() - z).exp()) / aa;
        }
        return g;
    }
    let a0 = a - a.floor(); // in (0,1)
    let a0 = if a0 == 0.0 { 1.0 } else { a0 };
    let mut g = gamma(a0) * gamma_ur(a0, z);
    let mut cur = a0;
    while cur > a + 0.5 {
        cur -= 1.0;
        g = (g - (cur * z.ln() - z).exp()) / cur;
    }
    g
}

/// Riemann zeta(s) for s > 1 by Euler-Maclaurin: a truncated sum plus the
/// integral tail and Bernoulli corrections, accurate well below 1e-12.
pub fn zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta(s) used with s > 1 only");
    let n = 50usize;
    let nf = n as f64;
    let mut sum = 0.0f64;
    for k in 1..n {
        sum += (k as f64).powf(-s);
    }
    sum += nf.powf(1.0 - s) / (s - 1.0);
    sum += 0.5 * nf.powf(-s);
    // B2/2! s N^{-s-1}, B4/4! s(s+1)(s+2) N^{-s-3}, B6/6! ...
    let t1 = s * nf.powf(-s - 1.0) / 12.0;
    let t2 = s * (s + 1.0) * (s + 2.0) * nf.powf(-s - 3.0) / 720.0;
    let t3 = s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * nf.powf(-s - 5.0) / 30240.0;
    sum + t1 - t2 + t3
}

/// Natural log of the gamma function (re-export point for the crate).
pub fn ln_gamma_fn(x: f64) -> f64 {
    ln_gamma(x)
}

/// Adaptive Simpson quadrature on [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}
