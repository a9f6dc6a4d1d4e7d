//! Airy function of the first kind and the trait boundary-layer profile.
//!
//! `Ai` is evaluated with its Maclaurin series near the origin and with the
//! Poincaré asymptotic expansions (exponential for large positive argument,
//! oscillatory for large negative argument) beyond the crossovers. Both
//! regimes agree to 1e-10 absolute at the crossovers, x = 5.5 and x = -7.
//!
//! The profile `η*(s)` solves `η'' + (a0 - a1 s) η = 0` on `s > 0` with
//! `η'(0) = 0`, decay at infinity and unit mass. It is a multiple of
//! `Ai(a1^{1/3} s - A0)` where `-A0` is the first negative zero of `Ai'`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `Ai(0) = 3^{-2/3} / Γ(2/3)`.
pub const AI_ZERO: f64 = 0.355_028_053_887_817_2;
/// `-Ai'(0) = 3^{-1/3} / Γ(1/3)`.
pub const AI_PRIME_ZERO_ABS: f64 = 0.258_819_403_792_806_8;

const SUPPORTED_RANGE: f64 = 20.0;
// The exponential expansion reaches ~1e-12 absolute from 5.5 on; the
// oscillatory one needs |x| >= 7 for 1e-10.
const SERIES_LIMIT_POSITIVE: f64 = 5.5;
const SERIES_LIMIT_NEGATIVE: f64 = 7.0;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// `Ai(x)` for `|x| <= 20`.
pub fn airy_ai(x: f64) -> Result<f64> {
    check_range(x)?;
    Ok(if (-SERIES_LIMIT_NEGATIVE..=SERIES_LIMIT_POSITIVE).contains(&x) {
        series(x).0
    } else if x > 0.0 {
        asymptotic_positive(x).0
    } else {
        asymptotic_negative(-x).0
    })
}

/// `Ai'(x)` for `|x| <= 20`.
pub fn airy_ai_prime(x: f64) -> Result<f64> {
    check_range(x)?;
    Ok(if (-SERIES_LIMIT_NEGATIVE..=SERIES_LIMIT_POSITIVE).contains(&x) {
        series(x).1
    } else if x > 0.0 {
        asymptotic_positive(x).1
    } else {
        asymptotic_negative(-x).1
    })
}

fn check_range(x: f64) -> Result<()> {
    if x.is_finite() && x.abs() <= SUPPORTED_RANGE {
        Ok(())
    } else {
        Err(Error::OutOfRange(x))
    }
}

/// Maclaurin series `Ai = c1 f - c2 g` together with its derivative.
fn series(x: f64) -> (f64, f64) {
    let x3 = x * x * x;
    let (mut f, mut g) = (1.0, x);
    let (mut fp, mut gp) = (0.0, 1.0);
    let (mut tf, mut tg) = (1.0, x);
    let (mut tfp, mut tgp) = (x * x / 2.0, 1.0);
    fp += tfp;
    for k in 0..200 {
        let k3 = 3.0 * k as f64;
        tf *= x3 / ((k3 + 2.0) * (k3 + 3.0));
        tg *= x3 / ((k3 + 3.0) * (k3 + 4.0));
        tfp *= x3 / ((k3 + 3.0) * (k3 + 5.0));
        tgp *= x3 / ((k3 + 1.0) * (k3 + 3.0));
        f += tf;
        g += tg;
        fp += tfp;
        gp += tgp;
        let scale = f.abs() + g.abs() + fp.abs() + gp.abs();
        if (tf.abs() + tg.abs() + tfp.abs() + tgp.abs()) <= 1e-18 * scale {
            break;
        }
    }
    (
        AI_ZERO * f - AI_PRIME_ZERO_ABS * g,
        AI_ZERO * fp - AI_PRIME_ZERO_ABS * gp,
    )
}

/// Coefficients `u_k` and `v_k` of the Airy asymptotic expansions.
fn expansion_coefficients(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    for k in 1..n {
        let kf = k as f64;
        u[k] = u[k - 1] * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0)
            / ((2.0 * kf - 1.0) * 216.0 * kf);
        v[k] = -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * u[k];
    }
    (u, v)
}

/// Sums `Σ (-1)^k c_{start + step k} / ζ^{start + step k}`, stopping at the smallest term.
fn truncated_sum(coeffs: &[f64], zeta: f64, start: usize, step: usize) -> f64 {
    let mut sum = 0.0;
    let mut last = f64::INFINITY;
    let mut sign = 1.0;
    let mut idx = start;
    while idx < coeffs.len() {
        let term = coeffs[idx] / zeta.powi(idx as i32);
        if term.abs() > last {
            break;
        }
        sum += sign * term;
        last = term.abs();
        sign = -sign;
        idx += step;
    }
    sum
}

fn asymptotic_positive(x: f64) -> (f64, f64) {
    let (u, v) = expansion_coefficients(40);
    let zeta = 2.0 / 3.0 * x.powf(1.5);
    let envelope = (-zeta).exp() * 0.5 * FRAC_1_SQRT_PI;
    let quarter = x.powf(0.25);
    let ai = envelope / quarter * truncated_sum(&u, zeta, 0, 1);
    let aip = -envelope * quarter * truncated_sum(&v, zeta, 0, 1);
    (ai, aip)
}

/// Expansions for `Ai(-z)`, `Ai'(-z)` with `z > 0`.
fn asymptotic_negative(z: f64) -> (f64, f64) {
    let (u, v) = expansion_coefficients(40);
    let zeta = 2.0 / 3.0 * z.powf(1.5);
    let phase = zeta - std::f64::consts::FRAC_PI_4;
    let (s, c) = phase.sin_cos();
    let quarter = z.powf(0.25);
    let ai = FRAC_1_SQRT_PI / quarter
        * (c * truncated_sum(&u, zeta, 0, 2) + s * truncated_sum(&u, zeta, 1, 2));
    let aip = FRAC_1_SQRT_PI * quarter
        * (s * truncated_sum(&v, zeta, 0, 2) - c * truncated_sum(&v, zeta, 1, 2));
    (ai, aip)
}

/// Absolute value of the first negative zero of `Ai'`, i.e. `A0 ≈ 1.0187929716`.
///
/// Scans `[-2, 0]` downward for the first sign change of `Ai'`, bisects the
/// bracket and polishes with Newton steps using `Ai'' = x Ai`.
pub fn find_a0() -> Result<f64> {
    let step = 0.05;
    let mut hi = 0.0;
    let mut f_hi = airy_ai_prime(hi)?;
    let mut bracket = None;
    while hi > -2.0 {
        let lo = hi - step;
        let f_lo = airy_ai_prime(lo)?;
        if f_lo.signum() != f_hi.signum() {
            bracket = Some((lo, hi));
            break;
        }
        hi = lo;
        f_hi = f_lo;
    }
    let (mut lo, mut hi) = bracket.ok_or(Error::BracketFailure)?;
    let f_lo_sign = airy_ai_prime(lo)?.signum();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if airy_ai_prime(mid)?.signum() == f_lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut root = 0.5 * (lo + hi);
    for _ in 0..3 {
        let second = root * airy_ai(root)?;
        if second == 0.0 {
            break;
        }
        let next = root - airy_ai_prime(root)? / second;
        if (next - root).abs() > (hi - lo).abs() + 1e-12 {
            break;
        }
        root = next;
    }
    Ok(-root)
}

/// Absolute tolerance for quadratures of `Ai`; the evaluation itself carries
/// rounding noise near `1e-13` where the series cancels.
const QUAD_TOL: f64 = 1e-12;

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        // Below the rounding floor of the local estimate further splitting is noise.
        let floor = 8.0 * f64::EPSILON * (left.abs() + right.abs());
        if depth == 0 || delta.abs() <= 15.0 * tol.max(floor) {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 30)
}

/// Normalized boundary-layer profile `η*` sampled on `[0, s_max]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AiryProfile {
    /// Trait-selection gradient `a1 = σ1*`.
    pub a1: f64,
    /// `a0 = a1^{2/3} A0`.
    pub a0: f64,
    /// `A0`, the absolute value of the first negative zero of `Ai'`.
    pub a0_airy: f64,
    pub s_max: f64,
    pub s: Vec<f64>,
    pub eta: Vec<f64>,
    /// `Z = ∫_0^∞ Ai(a1^{1/3} s - A0) ds`.
    pub normalization: f64,
    /// Asymptotic estimate of the neglected tail `∫_{s_max}^∞`, divided by `Z`.
    pub tail_mass: f64,
}

impl AiryProfile {
    /// Default truncation `s_max = (12 + A0) a1^{-1/3}`.
    pub fn default_s_max(a1: f64, a0_airy: f64) -> f64 {
        (12.0 + a0_airy) / a1.cbrt()
    }

    fn argument(&self, s: f64) -> f64 {
        self.a1.cbrt() * s - self.a0_airy
    }

    /// `η*(s)` evaluated from the Airy function (no interpolation). Zero past the
    /// supported Airy range.
    pub fn eval(&self, s: f64) -> f64 {
        let arg = self.argument(s);
        if arg > SUPPORTED_RANGE {
            return 0.0;
        }
        airy_ai(arg).map(|v| v / self.normalization).unwrap_or(0.0)
    }

    /// `η*'(s)`.
    pub fn eval_derivative(&self, s: f64) -> f64 {
        let arg = self.argument(s);
        if arg > SUPPORTED_RANGE {
            return 0.0;
        }
        airy_ai_prime(arg)
            .map(|v| self.a1.cbrt() * v / self.normalization)
            .unwrap_or(0.0)
    }

    /// `∫_0^k η*(s) ds`.
    pub fn cumulative(&self, k: f64) -> f64 {
        if k <= 0.0 {
            return 0.0;
        }
        let c = self.a1.cbrt();
        let upper = (c * k - self.a0_airy).min(SUPPORTED_RANGE);
        let integral = adaptive_simpson(
            &|t| airy_ai(t).unwrap_or(0.0),
            -self.a0_airy,
            upper,
            QUAD_TOL,
        );
        integral / (c * self.normalization)
    }

    /// Smallest `K` with `∫_0^K η* = p`, for `0 < p < 1`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "quantile level must lie in (0, 1), got {p}"
            )));
        }
        let (mut lo, mut hi) = (0.0, self.s_max);
        if self.cumulative(hi) < p {
            return Err(Error::InvalidParameter(format!(
                "quantile {p} lies beyond s_max = {}",
                self.s_max
            )));
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.cumulative(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Sup-norm of `η'' + (a0 - a1 s) η` on the sample grid, with `η''` from a
    /// fourth-order central difference of the analytic profile.
    pub fn ode_residual_inf(&self) -> f64 {
        let h = 1e-2 / self.a1.cbrt();
        self.s
            .iter()
            .map(|&s| {
                let second = (-self.eval(s + 2.0 * h) + 16.0 * self.eval(s + h)
                    - 30.0 * self.eval(s)
                    + 16.0 * self.eval(s - h)
                    - self.eval(s - 2.0 * h))
                    / (12.0 * h * h);
                (second + (self.a0 - self.a1 * s) * self.eval(s)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Total mass `∫_0^{s_max} η*` by adaptive Simpson plus the asymptotic tail.
    pub fn total_mass(&self) -> f64 {
        adaptive_simpson(&|s| self.eval(s), 0.0, self.s_max, QUAD_TOL) + self.tail_mass
    }

    /// The `L²`-normalized multiple `η̃ = η* / ‖η*‖₂` on the sample grid.
    pub fn l2_normalized(&self) -> Vec<f64> {
        let norm_sq = adaptive_simpson(&|s| self.eval(s).powi(2), 0.0, self.s_max, QUAD_TOL);
        let norm = norm_sq.sqrt();
        self.eta.iter().map(|v| v / norm).collect()
    }

    /// Inflection point `a0 / a1`: `η*` is concave before it and convex after.
    pub fn inflection(&self) -> f64 {
        self.a0 / self.a1
    }
}

/// Builds `η*(s) = Ai(a1^{1/3} s - A0) / Z` on `samples` uniform points of `[0, s_max]`.
pub fn build_eta_star(a1: f64, s_max: f64, samples: usize) -> Result<AiryProfile> {
    if !(a1 > 0.0) || !a1.is_finite() {
        return Err(Error::InvalidA1(a1));
    }
    if samples < 2 {
        return Err(Error::InvalidParameter(
            "profile needs at least two samples".into(),
        ));
    }
    let a0_airy = find_a0()?;
    let c = a1.cbrt();
    let upper = c * s_max - a0_airy;
    if !(upper > 0.0) || airy_ai(upper.min(SUPPORTED_RANGE))? >= 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "s_max = {s_max} too small: Ai({upper:.3}) is not below 1e-12"
        )));
    }
    let upper = upper.min(SUPPORTED_RANGE);
    let body = adaptive_simpson(&|t| airy_ai(t).unwrap_or(0.0), -a0_airy, upper, QUAD_TOL);
    // ∫_T^∞ Ai ≈ e^{-ζ} / (2 √π T^{3/4}), ζ = 2/3 T^{3/2}.
    let tail = (-(2.0 / 3.0) * upper.powf(1.5)).exp() * 0.5 * FRAC_1_SQRT_PI / upper.powf(0.75);
    let normalization = (body + tail) / c;
    let mut profile = AiryProfile {
        a1,
        a0: a1.powf(2.0 / 3.0) * a0_airy,
        a0_airy,
        s_max,
        s: Vec::with_capacity(samples),
        eta: Vec::with_capacity(samples),
        normalization,
        tail_mass: tail / c / normalization,
    };
    let ds = s_max / (samples - 1) as f64;
    for i in 0..samples {
        let s = i as f64 * ds;
        profile.s.push(s);
        profile.eta.push(profile.eval(s));
    }
    Ok(profile)
}
