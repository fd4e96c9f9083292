//! Reference computations for tests. Nothing here shares code with
//! `fedsurv-core`; each routine takes the slow, obviously-correct route.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

/// `num / den` rounded to the nearest double.
pub fn ratio_to_f64(num: &BigUint, den: &BigUint) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    // Scale so the integer quotient carries 64 significant bits.
    let shift = den.bits() as i64 - num.bits() as i64 + 64;
    let q = if shift >= 0 {
        (num << shift as u64) / den
    } else {
        num / (den << (-shift) as u64)
    };
    let q = q.to_f64().expect("quotient fits in f64");
    q * 2f64.powi(-shift as i32)
}

/// Exact `P(X <= c)` for `X ~ Binomial(n, a / (a + b))`, summing every pmf
/// term `C(n, r) a^r b^(n-r)` in integer arithmetic.
pub fn exact_binomial_cdf(c: u64, n: u64, a: u64, b: u64) -> f64 {
    assert!(c <= n);
    let (a_big, b_big) = (BigUint::from(a), BigUint::from(b));
    let mut pow_b = vec![BigUint::one(); n as usize + 1];
    for k in 1..=n as usize {
        pow_b[k] = &pow_b[k - 1] * &b_big;
    }
    let mut choose = BigUint::one();
    let mut pow_a = BigUint::one();
    let mut sum = BigUint::zero();
    for r in 0..=c {
        sum += &choose * &pow_a * &pow_b[(n - r) as usize];
        choose = choose * (n - r) / (r + 1);
        pow_a *= &a_big;
    }
    let total = BigUint::from(a + b).pow(n as u32);
    ratio_to_f64(&sum, &total)
}

/// Binomial success probability `l / (1 + θ + l)` written as `a / (a + b)`
/// for a θ given in hundredths.
pub fn rho_as_ratio(theta_hundredths: u64, baseline_len: u64) -> (u64, u64) {
    (100 * baseline_len, 100 + theta_hundredths)
}

/// Standard normal CDF: Maclaurin series of erf for |z| < 2.5 and the
/// Laplace continued fraction for the tails.
pub fn normal_cdf(z: f64) -> f64 {
    if z.abs() < 2.5 {
        let x = z / std::f64::consts::SQRT_2;
        let x2 = x * x;
        let mut term = x;
        let mut sum = 0.0;
        let mut k = 0.0;
        loop {
            let add = term / (2.0 * k + 1.0);
            sum += add;
            if add.abs() < 1e-20 {
                break;
            }
            k += 1.0;
            term *= -x2 / k;
        }
        0.5 + sum / std::f64::consts::PI.sqrt()
    } else {
        let t = z.abs();
        let mut frac = t;
        for k in (1..=300).rev() {
            frac = t + k as f64 / frac;
        }
        let density = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let tail = density / frac;
        if z > 0.0 {
            1.0 - tail
        } else {
            tail
        }
    }
}

/// Root of a nondecreasing `f` on `[lo, hi]` by plain bisection.
pub fn bisect(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `P(χ²(2k) > x) = e^{-x/2} Σ_{j<k} (x/2)^j / j!`.
pub fn chi_square_sf_even(x: f64, k: u32) -> f64 {
    let h = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..k {
        term *= h / j as f64;
        sum += term;
    }
    (-h).exp() * sum
}

/// `P(χ²(2k) <= x)` through the same closed form.
pub fn chi_square_cdf_even(x: f64, k: u32) -> f64 {
    1.0 - chi_square_sf_even(x, k)
}

/// Lower regularized gamma `P(a, x)` by a plain power series. Slow but fine
/// for moderate `x`.
pub fn gamma_p_series(a: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut k = 0.0;
    while term > sum * 1e-18 {
        k += 1.0;
        term *= x / (a + k);
        sum += term;
    }
    let ln_gamma_a = ln_gamma(a);
    (a * x.ln() - x - ln_gamma_a).exp() * sum
}

/// Lanczos `ln Γ(x)` (g = 7, n = 9), good to ~1e-15 relative.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// One-sample Kolmogorov-Smirnov statistic against U[0, 1].
pub fn ks_uniform(mut sample: Vec<f64>) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let above = (i + 1) as f64 / n - x;
            let below = x - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the KS statistic, `1.6276 / √n`.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.627_62 / (n as f64).sqrt()
}

/// Largest one-to-one matching between truth and predicted alarms where a
/// prediction at `p` may match truth `t` when `t - before <= p <= t + after`.
/// Exhaustive search; only for small sets.
pub fn max_matching(truth: &[i64], predicted: &[i64], before: i64, after: i64) -> usize {
    fn go(
        i: usize,
        truth: &[i64],
        predicted: &[i64],
        used: &mut Vec<bool>,
        b: i64,
        a: i64,
    ) -> usize {
        if i == truth.len() {
            return 0;
        }
        let mut best = go(i + 1, truth, predicted, used, b, a);
        for j in 0..predicted.len() {
            let p = predicted[j];
            if !used[j] && p >= truth[i] - b && p <= truth[i] + a {
                used[j] = true;
                best = best.max(1 + go(i + 1, truth, predicted, used, b, a));
                used[j] = false;
            }
        }
        best
    }
    let mut used = vec![false; predicted.len()];
    go(0, truth, predicted, &mut used, before, after)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_binomial_small_case() {
        // Bin(2, 1/2): P(X <= 0) = 1/4, P(X <= 1) = 3/4
        assert_eq!(exact_binomial_cdf(0, 2, 1, 1), 0.25);
        assert_eq!(exact_binomial_cdf(1, 2, 1, 1), 0.75);
        assert_eq!(exact_binomial_cdf(2, 2, 1, 1), 1.0);
    }

    #[test]
    fn normal_branches_meet() {
        let inner = normal_cdf(-2.4999999);
        let outer = normal_cdf(-2.5000001);
        assert!((inner - outer).abs() < 1e-8);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-17);
    }

    #[test]
    fn lanczos_factorials() {
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }
}
