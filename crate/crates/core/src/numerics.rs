//! Special-function kernels: binomial tails, the standard normal CDF and
//! quantile, chi-square tails and the gamma quantile.
//!
//! The binomial and Poisson-type densities use Loader's saddle-point
//! expansion (`stirlerr` + `bd0`), which keeps full relative precision for
//! counts in the thousands where `lgamma` differences lose several digits.
//! Probability outputs are clamped into `[0, 1]`.

// Published coefficients are kept digit-for-digit.
#![allow(clippy::excessive_precision)]

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_741_780_329_736_4;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_677_939_946_059_9;

/// A probability in `[0, 1]`. NaN is rejected at construction.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || !(0.0..=1.0).contains(&value) {
            return Err(domain(format!("{value} is not a probability")));
        }
        Ok(Self(value))
    }

    /// Clamps a finite value into `[0, 1]`; NaN is still an error.
    pub fn clamped(value: f64) -> Result<Self> {
        if value.is_nan() {
            return Err(domain("NaN is not a probability"));
        }
        Ok(Self(clamp_unit(value)))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

impl std::fmt::Display for Probability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[inline]
pub(crate) fn clamp_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("{name} = {p} is outside [0, 1]")));
    }
    Ok(())
}

fn check_open_probability(name: &str, p: f64) -> Result<()> {
    if p.is_nan() || p <= 0.0 || p >= 1.0 {
        return Err(domain(format!("{name} = {p} is outside (0, 1)")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(domain(format!("{name} = {v} must be positive and finite")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Saddle-point pieces

/// Error of Stirling's approximation, `ln Γ(x+1) - (x+½) ln x + x - ln √(2π)`.
pub(crate) fn stirlerr(x: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;

    if x <= 15.0 {
        return libm::lgamma(x + 1.0) - (x + 0.5) * x.ln() + x - LN_SQRT_2PI;
    }
    let xx = x * x;
    if x > 500.0 {
        (S0 - S1 / xx) / x
    } else if x > 80.0 {
        (S0 - (S1 - S2 / xx) / xx) / x
    } else if x > 35.0 {
        (S0 - (S1 - (S2 - S3 / xx) / xx) / xx) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / xx) / xx) / xx) / xx) / x
    }
}

/// Deviance term `x ln(x/m) + m - x`, evaluated without cancellation when
/// `x` is close to `m`.
pub(crate) fn bd0(x: f64, m: f64) -> f64 {
    if x == 0.0 {
        return m;
    }
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / f64::from(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        return s;
    }
    x * (x / m).ln() + m - x
}

/// `ln` of the Binomial(n, p) mass at `x`.
pub fn ln_binomial_pmf(x: u64, n: u64, p: f64) -> f64 {
    if x > n {
        return f64::NEG_INFINITY;
    }
    let q = 1.0 - p;
    if p == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if x == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let nf = n as f64;
    if x == 0 {
        return if n == 0 { 0.0 } else { nf * (-p).ln_1p() };
    }
    if x == n {
        return nf * p.ln();
    }
    let xf = x as f64;
    let yf = nf - xf;
    let lc = stirlerr(nf) - stirlerr(xf) - stirlerr(yf) - bd0(xf, nf * p) - bd0(yf, nf * q);
    let lf = 2.0 * LN_SQRT_2PI + xf.ln() + (-xf / nf).ln_1p();
    lc - 0.5 * lf
}

// ---------------------------------------------------------------------------
// Binomial tails

enum BinomialTail {
    /// `ln P(X <= c)`, accumulated from the largest lower-tail term.
    LogLower(f64),
    /// `P(X > c)`, accumulated from the largest upper-tail term.
    Upper(f64),
}

/// Sums the tail on the side of `c` away from the mean, starting at the
/// term adjacent to `c` and walking outward with the pmf ratio. Terms decrease
/// monotonically on that side so the loop stops once they stop contributing.
fn binomial_tail(c: u64, n: u64, rho: f64) -> BinomialTail {
    let nf = n as f64;
    let odds_down = (1.0 - rho) / rho;
    if (c as f64) <= nf * rho {
        let lead = ln_binomial_pmf(c, n, rho);
        let mut sum = 1.0;
        let mut term = 1.0;
        let mut r = c;
        while r > 0 {
            term *= r as f64 / (n - r + 1) as f64 * odds_down;
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
            r -= 1;
        }
        BinomialTail::LogLower(lead + sum.ln())
    } else {
        let first = c + 1;
        let lead = ln_binomial_pmf(first, n, rho);
        let odds_up = rho / (1.0 - rho);
        let mut sum = 1.0;
        let mut term = 1.0;
        let mut r = first;
        while r < n {
            term *= (n - r) as f64 / (r + 1) as f64 * odds_up;
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
            r += 1;
        }
        BinomialTail::Upper((lead + sum.ln()).exp())
    }
}

fn check_binomial_args(c: u64, n: u64, rho: f64) -> Result<()> {
    check_probability("rho", rho)?;
    if c > n {
        return Err(domain(format!("c = {c} exceeds n = {n}")));
    }
    Ok(())
}

/// `P(X <= c)` for `X ~ Binomial(n, rho)`.
pub fn binomial_cdf(c: u64, n: u64, rho: f64) -> Result<f64> {
    check_binomial_args(c, n, rho)?;
    if c == n || rho == 0.0 {
        return Ok(1.0);
    }
    if rho == 1.0 {
        return Ok(0.0);
    }
    Ok(match binomial_tail(c, n, rho) {
        BinomialTail::LogLower(l) => clamp_unit(l.exp()),
        BinomialTail::Upper(u) => clamp_unit(1.0 - u),
    })
}

/// `ln P(X <= c)` for `X ~ Binomial(n, rho)`. Stays finite far past the
/// point where [`binomial_cdf`] underflows to zero.
pub fn ln_binomial_cdf(c: u64, n: u64, rho: f64) -> Result<f64> {
    check_binomial_args(c, n, rho)?;
    if c == n || rho == 0.0 {
        return Ok(0.0);
    }
    if rho == 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(match binomial_tail(c, n, rho) {
        BinomialTail::LogLower(l) => l.min(0.0),
        BinomialTail::Upper(u) => (-u).ln_1p(),
    })
}

// ---------------------------------------------------------------------------
// Normal distribution

pub fn normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    clamp_unit(0.5 * libm::erfc(-z / SQRT_2))
}

/// Standard normal quantile: Wichura's AS 241 rational approximation
/// followed by one Halley step against [`normal_cdf`].
pub fn normal_quantile(p: f64) -> Result<f64> {
    check_open_probability("p", p)?;
    let z = ppnd16(p);
    // Refine on the tail that is represented with relative precision.
    let (e, sign) = if p <= 0.5 {
        (normal_cdf(z) - p, 1.0)
    } else {
        (normal_cdf(-z) - (1.0 - p), -1.0)
    };
    let u = sign * e * (2.0 * PI).sqrt() * (0.5 * z * z).exp();
    let refined = z - u / (1.0 + 0.5 * z * u);
    Ok(if refined.is_finite() { refined } else { z })
}

fn ppnd16(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        133.141_667_891_784_377_5,
        1_971.590_950_306_551_442_7,
        13_731.693_765_509_461_125,
        45_921.953_931_549_871_457,
        67_265.770_927_008_700_853,
        33_430.575_583_588_128_105,
        2_509.080_928_730_122_672_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_911_252,
        687.187_007_492_057_908_3,
        5_394.196_021_424_751_077_1,
        21_213.794_301_586_595_867,
        39_307.895_800_092_710_61,
        28_729.085_735_721_942_674,
        5_226.495_278_852_545_925_4,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        0.241_780_725_177_450_611_77,
        0.022_723_844_989_269_184_583_6,
        7.745_450_142_783_414_076_6e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        0.689_767_334_985_100_004_55,
        0.148_103_976_427_480_074_59,
        0.015_198_666_563_616_457_2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_64e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        0.296_560_571_828_504_891_23,
        0.026_532_189_526_576_123_09,
        0.001_242_660_947_388_078_438_1,
        2.711_555_568_743_487_578_4e-5,
        2.010_334_399_292_288_132e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_937_69,
        0.136_929_880_922_735_805_31,
        0.014_875_361_290_850_615_025,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_887_8e-7,
        2.044_263_103_389_939_785_7e-15,
    ];
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

// ---------------------------------------------------------------------------
// Incomplete gamma

/// `x^a e^{-x} / Γ(a)`.
fn gamma_prefactor(a: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if a < 10.0 {
        (a * x.ln() - x - libm::lgamma(a)).exp()
    } else {
        // a · x^a e^{-x} / Γ(a+1), the Poisson-type saddle-point form.
        a * (-stirlerr(a) - bd0(a, x)).exp() / (2.0 * PI * a).sqrt()
    }
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 100_000;

fn lower_gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * gamma_prefactor(a, x)
}

fn upper_gamma_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let i = i as f64;
        let an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    gamma_prefactor(a, x) * h
}

fn check_gamma_args(a: f64, x: f64) -> Result<()> {
    check_positive("shape", a)?;
    if x.is_nan() || x < 0.0 {
        return Err(domain(format!("x = {x} must be nonnegative")));
    }
    Ok(())
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> Result<f64> {
    check_gamma_args(a, x)?;
    Ok(gamma_p_unchecked(a, x))
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    check_gamma_args(a, x)?;
    Ok(gamma_q_unchecked(a, x))
}

fn gamma_p_unchecked(a: f64, x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else if x < a + 1.0 {
        clamp_unit(lower_gamma_series(a, x))
    } else {
        clamp_unit(1.0 - upper_gamma_fraction(a, x))
    }
}

fn gamma_q_unchecked(a: f64, x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else if x < a + 1.0 {
        clamp_unit(1.0 - lower_gamma_series(a, x))
    } else {
        clamp_unit(upper_gamma_fraction(a, x))
    }
}

/// CDF of Gamma(shape, rate).
pub fn gamma_cdf(x: f64, shape: f64, rate: f64) -> Result<f64> {
    check_positive("rate", rate)?;
    gamma_p(shape, x * rate)
}

/// Chi-square survival function `P(X > x)` for `X ~ χ²(df)`.
pub fn chi_square_sf(x: f64, df: f64) -> Result<f64> {
    check_positive("df", df)?;
    if x.is_nan() || x < 0.0 {
        return Err(domain(format!("x = {x} must be nonnegative")));
    }
    Ok(gamma_q_unchecked(0.5 * df, 0.5 * x))
}

/// Chi-square CDF `P(X <= x)` for `X ~ χ²(df)`.
pub fn chi_square_cdf(x: f64, df: f64) -> Result<f64> {
    check_positive("df", df)?;
    if x.is_nan() || x < 0.0 {
        return Err(domain(format!("x = {x} must be nonnegative")));
    }
    Ok(gamma_p_unchecked(0.5 * df, 0.5 * x))
}

// ---------------------------------------------------------------------------
// Gamma quantile

#[derive(Clone, Copy)]
enum GammaTarget {
    /// Solve `P(a, y) = q`.
    Lower(f64),
    /// Solve `Q(a, y) = p`.
    Upper(f64),
}

impl GammaTarget {
    /// Increasing in `y`, zero at the root.
    fn residual(self, a: f64, y: f64) -> f64 {
        match self {
            GammaTarget::Lower(q) => gamma_p_unchecked(a, y) - q,
            GammaTarget::Upper(p) => p - gamma_q_unchecked(a, y),
        }
    }

    fn lower_probability(self) -> f64 {
        match self {
            GammaTarget::Lower(q) => q,
            GammaTarget::Upper(p) => 1.0 - p,
        }
    }
}

fn initial_gamma_guess(a: f64, target: GammaTarget) -> f64 {
    let q = target.lower_probability();
    let z = match target {
        GammaTarget::Lower(q) => ppnd16(q.clamp(1e-300, 0.5)),
        GammaTarget::Upper(p) => -ppnd16(p.clamp(1e-300, 0.5)),
    };
    // Wilson-Hilferty.
    let t = 1.0 - 1.0 / (9.0 * a) + z / (3.0 * a.sqrt());
    let wh = a * t * t * t;
    if wh > 0.0 && a >= 1.0 {
        return wh;
    }
    // Small-shape lower tail: P(a, y) ≈ y^a / Γ(a + 1).
    let small = (q.ln() + libm::lgamma(a + 1.0)) / a;
    let small = small.exp();
    if small.is_finite() && small > 0.0 && q < 0.5 {
        small
    } else if wh > 0.0 {
        wh
    } else {
        a.max(1e-3)
    }
}

/// Root of a standard (rate 1) gamma CDF equation by bracketing followed by
/// safeguarded Newton iterations that fall back to bisection.
fn standard_gamma_quantile(a: f64, target: GammaTarget) -> f64 {
    let guess = initial_gamma_guess(a, target);
    let f_guess = target.residual(a, guess);
    if f_guess == 0.0 {
        return guess;
    }

    let (mut lo, mut hi) = if f_guess < 0.0 {
        let mut lo = guess;
        let mut hi = guess * 2.0;
        while target.residual(a, hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                return f64::MAX;
            }
        }
        (lo, hi)
    } else {
        let mut hi = guess;
        let mut lo = guess * 0.5;
        while target.residual(a, lo) > 0.0 {
            hi = lo;
            lo *= 0.5;
            if lo < f64::MIN_POSITIVE {
                return 0.0;
            }
        }
        (lo, hi)
    };

    let mut y = guess.clamp(lo, hi);
    for _ in 0..1_000 {
        let f = target.residual(a, y);
        if f == 0.0 {
            return y;
        }
        if f < 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let density = gamma_prefactor(a, y) / y;
        let newton = y - f / density;
        y = if density > 0.0 && newton > lo && newton < hi {
            newton
        } else if lo > 0.0 && hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
    }
    y
}

/// Quantile of Gamma(shape, rate): the `x` with `gamma_cdf(x) = q`.
pub fn gamma_quantile(q: f64, shape: f64, rate: f64) -> Result<f64> {
    check_open_probability("q", q)?;
    check_positive("shape", shape)?;
    check_positive("rate", rate)?;
    let target = if q <= 0.5 {
        GammaTarget::Lower(q)
    } else {
        GammaTarget::Upper(1.0 - q)
    };
    Ok(standard_gamma_quantile(shape, target) / rate)
}

/// Inverse survival function of Gamma(shape, rate): the `x` with
/// `P(X > x) = p`. Keeps relative precision for tiny `p`, where passing
/// `1 - p` to [`gamma_quantile`] would round away the tail.
pub fn gamma_quantile_upper(p: f64, shape: f64, rate: f64) -> Result<f64> {
    check_open_probability("p", p)?;
    check_positive("shape", shape)?;
    check_positive("rate", rate)?;
    let target = if p <= 0.5 {
        GammaTarget::Upper(p)
    } else {
        GammaTarget::Lower(1.0 - p)
    };
    Ok(standard_gamma_quantile(shape, target) / rate)
}

/// `-2 ln p`, the χ²(2) quantile used by Fisher's transform.
pub fn fisher_transform(p: f64) -> f64 {
    -2.0 * p.ln()
}
