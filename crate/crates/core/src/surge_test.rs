//! Exact conditional test for a surge in a Poisson rate, its Gaussian
//! approximation, and power analysis.
//!
//! Given baseline counts `k_B1..k_Bl` and a test-period count `k_T`, the null
//! hypothesis is `λ_T / λ_B <= 1 + θ`. Conditioning on `n = Σ k_B + k_T`
//! turns the test into a binomial one: under the null boundary the test
//! count is `Bin(n, q)` with `q = (1+θ)/(1+θ+l)`, and the p-value
//! `P(r >= k_T)` equals the lower binomial tail `P(Bin(n, ρ) <= c)` with
//! `c = Σ k_B` and `ρ = l/(1+θ+l) = 1 - q`.

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::numerics::{
    binomial_cdf, clamp_unit, ln_binomial_cdf, normal_cdf, normal_pdf, normal_quantile,
};

/// Surge threshold, baseline length and type I error rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHypothesis")]
pub struct SurgeHypothesis {
    theta: f64,
    baseline_len: usize,
    alpha: f64,
}

#[derive(Deserialize)]
struct RawHypothesis {
    theta: f64,
    baseline_len: usize,
    alpha: f64,
}

impl TryFrom<RawHypothesis> for SurgeHypothesis {
    type Error = Error;

    fn try_from(raw: RawHypothesis) -> Result<Self> {
        Self::new(raw.theta, raw.baseline_len, raw.alpha)
    }
}

impl SurgeHypothesis {
    pub fn new(theta: f64, baseline_len: usize, alpha: f64) -> Result<Self> {
        if !(theta.is_finite() && theta >= 0.0) {
            return Err(domain(format!("theta = {theta} must be finite and >= 0")));
        }
        if baseline_len == 0 {
            return Err(domain("baseline length must be at least 1"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(domain(format!("alpha = {alpha} must lie in (0, 1)")));
        }
        Ok(Self {
            theta,
            baseline_len,
            alpha,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn baseline_len(&self) -> usize {
        self.baseline_len
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Same hypothesis at a different type I rate.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.theta, self.baseline_len, alpha)
    }

    /// `ρ = l / (1 + θ + l)`, the baseline side of the conditional binomial.
    pub fn rho(&self) -> f64 {
        rho_for(self.theta, self.baseline_len)
    }

    /// `q = (1 + θ) / (1 + θ + l)`, the test-period success probability.
    pub fn q(&self) -> f64 {
        let l = self.baseline_len as f64;
        (1.0 + self.theta) / (1.0 + self.theta + l)
    }
}

fn rho_for(theta: f64, baseline_len: usize) -> f64 {
    let l = baseline_len as f64;
    l / (1.0 + theta + l)
}

/// One site's counts at a testing time: the `l` baseline periods and the
/// test period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurgeWindow {
    pub baseline_counts: Vec<u64>,
    pub test_count: u64,
}

impl SurgeWindow {
    pub fn new(baseline_counts: Vec<u64>, test_count: u64) -> Self {
        Self {
            baseline_counts,
            test_count,
        }
    }

    /// `c`, the baseline total.
    pub fn baseline_total(&self) -> u64 {
        self.baseline_counts.iter().sum()
    }

    /// `n`, baseline plus test-period counts.
    pub fn total(&self) -> u64 {
        self.baseline_total() + self.test_count
    }

    fn check(&self, hyp: &SurgeHypothesis) -> Result<()> {
        if self.baseline_counts.len() != hyp.baseline_len {
            return Err(config(format!(
                "window has {} baseline periods, hypothesis expects {}",
                self.baseline_counts.len(),
                hyp.baseline_len
            )));
        }
        Ok(())
    }
}

/// Exact one-sided p-value `P(r >= k_T)`, `r ~ Bin(n, q)`.
///
/// An empty window (`n = 0`) carries no evidence and yields 1.
pub fn exact_p_value(window: &SurgeWindow, hyp: &SurgeHypothesis) -> Result<f64> {
    window.check(hyp)?;
    p_value_from_totals(window.baseline_total(), window.total(), hyp)
}

/// [`exact_p_value`] from the sufficient statistics `(c, n)`.
pub fn p_value_from_totals(c: u64, n: u64, hyp: &SurgeHypothesis) -> Result<f64> {
    if n == 0 {
        return Ok(1.0);
    }
    binomial_cdf(c, n, hyp.rho())
}

/// z-score of the baseline total under the Gaussian approximation,
/// `(c [+ ½] - nρ) / √(nρ(1-ρ))`.
pub fn gaussian_z(c: u64, n: u64, rho: f64, yates: bool) -> f64 {
    let nf = n as f64;
    let shift = if yates { 0.5 } else { 0.0 };
    (c as f64 + shift - nf * rho) / (nf * rho * (1.0 - rho)).sqrt()
}

/// Gaussian approximation of [`exact_p_value`], optionally with Yates'
/// continuity correction. Returns 1 for an empty window.
pub fn gaussian_p_value(window: &SurgeWindow, hyp: &SurgeHypothesis, yates: bool) -> Result<f64> {
    window.check(hyp)?;
    let n = window.total();
    if n == 0 {
        return Ok(1.0);
    }
    Ok(normal_cdf(gaussian_z(
        window.baseline_total(),
        n,
        hyp.rho(),
        yates,
    )))
}

/// Upper tail `P(r >= k)` of `r ~ Bin(n, (1+θ)/(1+θ+l))` written through the
/// baseline-side CDF: `P(Bin(n, ρ) <= n - k)`.
fn test_side_upper_tail(k: u64, n: u64, rho: f64) -> f64 {
    if k == 0 {
        1.0
    } else if k > n {
        0.0
    } else {
        binomial_cdf(n - k, n, rho).expect("arguments are in range")
    }
}

/// Smallest `k_cr` with `P(r >= k_cr | n, q) <= α`; `n + 1` if no count in
/// `0..=n` reaches significance.
pub fn critical_value(n: u64, hyp: &SurgeHypothesis) -> u64 {
    let rho = hyp.rho();
    // The tail is nonincreasing in k, so binary search over 0..=n+1.
    let (mut lo, mut hi) = (0u64, n + 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if test_side_upper_tail(mid, n, rho) <= hyp.alpha {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// A power calculation: total count `n`, true growth `θ'` and the test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerScenario {
    pub n: u64,
    pub theta_alt: f64,
    pub hypothesis: SurgeHypothesis,
}

impl PowerScenario {
    pub fn new(n: u64, theta_alt: f64, hypothesis: SurgeHypothesis) -> Result<Self> {
        if n == 0 {
            return Err(domain("power scenario needs n >= 1"));
        }
        if !(theta_alt.is_finite() && theta_alt >= 0.0) {
            return Err(domain(format!(
                "theta' = {theta_alt} must be finite and >= 0"
            )));
        }
        Ok(Self {
            n,
            theta_alt,
            hypothesis,
        })
    }
}

/// Exact power `P(r >= k_cr)` with `r ~ Bin(n, (1+θ')/(1+θ'+l))`.
pub fn power_exact(scn: &PowerScenario) -> f64 {
    let k_cr = critical_value(scn.n, &scn.hypothesis);
    let rho_alt = rho_for(scn.theta_alt, scn.hypothesis.baseline_len);
    test_side_upper_tail(k_cr, scn.n, rho_alt)
}

/// The three additive terms inside `Φ(·)` of the continuity-corrected
/// Gaussian power formula, each with its sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerTerms {
    /// `√(nl)(θ'-θ) / ((1+θ+l)√(1+θ'))`
    pub magnitude: f64,
    /// `-Z_α (1+θ'+l)√(1+θ) / ((1+θ+l)√(1+θ'))`
    pub type_one: f64,
    /// `-(1+θ'+l) / (2√(nl(1+θ')))`
    pub continuity: f64,
}

impl PowerTerms {
    pub fn power(&self) -> f64 {
        normal_cdf(self.magnitude + self.type_one + self.continuity)
    }
}

/// Terms of the approximate power, with `Z_α = Φ⁻¹(1 - α)`.
pub fn power_terms(scn: &PowerScenario) -> PowerTerms {
    let hyp = &scn.hypothesis;
    let (theta, theta_alt) = (hyp.theta, scn.theta_alt);
    let l = hyp.baseline_len as f64;
    let n = scn.n as f64;
    let z_alpha = normal_quantile(1.0 - hyp.alpha).expect("alpha lies in (0, 1)");
    let null_scale = 1.0 + theta + l;
    let alt_scale = 1.0 + theta_alt + l;
    let sqrt_alt = (1.0 + theta_alt).sqrt();
    PowerTerms {
        magnitude: (n * l).sqrt() * (theta_alt - theta) / (null_scale * sqrt_alt),
        type_one: -z_alpha * alt_scale * (1.0 + theta).sqrt() / (null_scale * sqrt_alt),
        continuity: -alt_scale / (2.0 * (n * l * (1.0 + theta_alt)).sqrt()),
    }
}

/// Gaussian approximation of [`power_exact`].
pub fn power_approx(scn: &PowerScenario) -> f64 {
    power_terms(scn).power()
}

/// Error terms relating the exact p-value to its Gaussian and exponential
/// approximations at one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApproximationDiagnostics {
    /// First-order (Edgeworth) correction `p - Φ(z)`, including the lattice
    /// rounding term `ε_r`.
    pub gaussian_first_order_error: f64,
    /// Rounding term `ε_r ∈ [-½, ½]`.
    pub rounding_term: f64,
    /// `-n·KL - ½ ln(2n)`
    pub log_p_lower: f64,
    /// `-n·KL`
    pub log_p_upper: f64,
    /// `D(c/n ‖ ρ)`
    pub kl: f64,
}

/// Relative entropy between `(c/n, 1 - c/n)` and `(ρ, 1 - ρ)`.
pub fn kl_divergence(c: u64, n: u64, rho: f64) -> f64 {
    let nf = n as f64;
    let share = c as f64 / nf;
    let rest = (n - c) as f64 / nf;
    let mut kl = 0.0;
    if c > 0 {
        kl += share * (c as f64 / (nf * rho)).ln();
    }
    if c < n {
        kl += rest * ((n - c) as f64 / (nf * (1.0 - rho))).ln();
    }
    kl.max(0.0)
}

/// Gaussian and exponential-bound diagnostics for an interior window
/// (`0 < c < n`).
pub fn diagnostics(
    window: &SurgeWindow,
    hyp: &SurgeHypothesis,
) -> Result<ApproximationDiagnostics> {
    window.check(hyp)?;
    diagnostics_from_totals(window.baseline_total(), window.total(), hyp.rho())
}

/// [`diagnostics`] from the sufficient statistics.
pub fn diagnostics_from_totals(c: u64, n: u64, rho: f64) -> Result<ApproximationDiagnostics> {
    if n == 0 || c == 0 || c >= n {
        return Err(Error::BoundsNotApplicable { c, n });
    }
    let nf = n as f64;
    let kl = kl_divergence(c, n, rho);
    let sd = (nf * rho * (1.0 - rho)).sqrt();
    let z = gaussian_z(c, n, rho, false);

    // nρ + z·sd reconstructs c; snap the round-off so the fractional part
    // of an integer reads as 0 rather than 0.999…
    let mut point = nf * rho + z * sd;
    if (point - point.round()).abs() < 1e-9 {
        point = point.round();
    }
    let rounding_term = 0.5 - (point - point.floor());

    let skew = (1.0 - 2.0 * rho) * (1.0 - z * z) / 6.0;
    Ok(ApproximationDiagnostics {
        gaussian_first_order_error: (skew + rounding_term) * normal_pdf(z) / sd,
        rounding_term,
        log_p_lower: -nf * kl - 0.5 * (2.0 * nf).ln(),
        log_p_upper: -nf * kl,
        kl,
    })
}

/// `ln` of the exact p-value; finite even when the p-value underflows.
pub fn ln_exact_p_value(c: u64, n: u64, hyp: &SurgeHypothesis) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    ln_binomial_cdf(c, n, hyp.rho())
}

/// Actual size of the exact test at total `n`: `P(r >= k_cr)` on the null
/// boundary. Never exceeds `α`.
pub fn exact_size(n: u64, hyp: &SurgeHypothesis) -> f64 {
    let k_cr = critical_value(n, hyp);
    clamp_unit(test_side_upper_tail(k_cr, n, hyp.rho()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedsurv_oracles as oracle;
    use proptest::prelude::*;

    fn hyp(theta: f64, l: usize) -> SurgeHypothesis {
        SurgeHypothesis::new(theta, l, 0.05).unwrap()
    }

    #[test]
    fn hypothesis_validation() {
        assert!(SurgeHypothesis::new(-0.1, 4, 0.05).is_err());
        assert!(SurgeHypothesis::new(0.3, 0, 0.05).is_err());
        assert!(SurgeHypothesis::new(0.3, 4, 0.0).is_err());
        assert!(SurgeHypothesis::new(0.3, 4, 1.0).is_err());
        let h = hyp(0.3, 4);
        assert!((h.rho() + h.q() - 1.0).abs() < 1e-15);
        assert!((h.rho() - 4.0 / 5.3).abs() < 1e-15);
    }

    #[test]
    fn hypothesis_deserialization_validates() {
        let ok: SurgeHypothesis =
            serde_json::from_str(r#"{"theta":0.3,"baseline_len":4,"alpha":0.05}"#).unwrap();
        assert_eq!(ok, hyp(0.3, 4));
        assert!(serde_json::from_str::<SurgeHypothesis>(
            r#"{"theta":0.3,"baseline_len":0,"alpha":0.05}"#
        )
        .is_err());
    }

    #[test]
    fn exact_p_value_trivial_windows() {
        let h = hyp(0.3, 4);
        assert_eq!(
            exact_p_value(&SurgeWindow::new(vec![5; 4], 0), &h).unwrap(),
            1.0
        );
        assert_eq!(
            exact_p_value(&SurgeWindow::new(vec![0; 4], 0), &h).unwrap(),
            1.0
        );
        let bad = SurgeWindow::new(vec![5; 3], 0);
        assert!(matches!(exact_p_value(&bad, &h), Err(Error::Config(_))));
    }

    #[test]
    fn exact_p_value_golden_window() {
        let h = hyp(0.3, 4);
        let p = exact_p_value(&SurgeWindow::new(vec![10; 4], 20), &h).unwrap();
        // ρ = 40/53 exactly
        let want = oracle::exact_binomial_cdf(40, 60, 40, 13);
        assert!((p - want).abs() < 1e-14);
        assert!(p > 0.05 && p < 0.11);
    }

    #[test]
    fn gaussian_p_value_cases() {
        // θ = 1, l = 2: ρ = 1/2, so c = n/2 gives z = 0.
        let h = hyp(1.0, 2);
        let w = SurgeWindow::new(vec![5, 5], 10);
        assert_eq!(gaussian_p_value(&w, &h, false).unwrap(), 0.5);
        assert!(gaussian_p_value(&w, &h, true).unwrap() > 0.5);
        assert_eq!(
            gaussian_p_value(&SurgeWindow::new(vec![0, 0], 0), &h, true).unwrap(),
            1.0
        );
    }

    #[test]
    fn gaussian_versus_exact_within_first_order_error() {
        let h = hyp(0.3, 4);
        let w = SurgeWindow::new(vec![10; 4], 20);
        let exact = exact_p_value(&w, &h).unwrap();
        let approx = gaussian_p_value(&w, &h, false).unwrap();
        let d = diagnostics(&w, &h).unwrap();
        let n = w.total() as f64;
        // The corrected approximation is closer than the plain one, and the
        // residual is within an O(1/n) slack.
        let corrected = approx + d.gaussian_first_order_error;
        assert!((corrected - exact).abs() < (approx - exact).abs());
        assert!((corrected - exact).abs() <= 1.0 / n);
        assert!((approx - exact).abs() <= d.gaussian_first_order_error.abs() + 1.0 / n);
    }

    #[test]
    fn critical_value_scan_matches() {
        let h = hyp(0.3, 4);
        let n = 60;
        let scan = (0..=n + 1)
            .find(|&k| {
                let tail = if k == 0 {
                    1.0
                } else if k > n {
                    0.0
                } else {
                    oracle::exact_binomial_cdf(n - k, n, 40, 13)
                };
                tail <= 0.05
            })
            .unwrap();
        assert_eq!(critical_value(n, &h), scan);
        assert_eq!(scan, 21);
    }

    #[test]
    fn critical_value_limits() {
        // P(r >= 0) = 1 exceeds every α < 1, so as α → 1⁻ the critical value
        // settles at 1: reject on any test-period count.
        let h = SurgeHypothesis::new(0.3, 4, 1.0 - 1e-12).unwrap();
        assert_eq!(critical_value(50, &h), 1);
        // Tiny n can never reach significance.
        let strict = SurgeHypothesis::new(0.3, 4, 0.01).unwrap();
        assert_eq!(critical_value(1, &strict), 2);
        let mut prev = u64::MAX;
        for alpha in [0.001, 0.01, 0.05, 0.1, 0.3, 0.6] {
            let k = critical_value(80, &hyp(0.3, 4).with_alpha(alpha).unwrap());
            assert!(k <= prev);
            prev = k;
        }
    }

    #[test]
    fn power_exact_limits() {
        let h = hyp(0.3, 4);
        for n in [10, 60, 200, 1000] {
            let at_null = power_exact(&PowerScenario::new(n, 0.3, h).unwrap());
            assert!(at_null <= 0.05 + 1e-15, "n={n} size={at_null}");
        }
        let huge = power_exact(&PowerScenario::new(200, 1e6, h).unwrap());
        assert!(huge > 0.999_999);
    }

    #[test]
    fn power_terms_structure() {
        let h = hyp(0.3, 4);
        let t = power_terms(&PowerScenario::new(200, 0.6, h).unwrap());
        assert!(t.continuity < 0.0);
        assert!(t.type_one < 0.0);
        assert!(t.magnitude > 0.0);
        let far = PowerScenario::new(u64::MAX / 4, 0.3, h).unwrap();
        assert!((power_approx(&far) - 0.05).abs() < 1e-8);
    }

    #[test]
    fn power_approx_near_exact_at_200() {
        let h = hyp(0.3, 4);
        let scn = PowerScenario::new(200, 0.6, h).unwrap();
        assert!((power_approx(&scn) - power_exact(&scn)).abs() < 0.03);
    }

    #[test]
    fn diagnostics_match_and_boundaries() {
        let rho = 0.5;
        let d = diagnostics_from_totals(10, 20, rho).unwrap();
        assert_eq!(d.kl, 0.0);
        assert_eq!(d.log_p_upper, 0.0);
        assert!(matches!(
            diagnostics_from_totals(0, 20, rho),
            Err(Error::BoundsNotApplicable { .. })
        ));
        assert!(diagnostics_from_totals(20, 20, rho).is_err());
        assert!(diagnostics_from_totals(0, 0, rho).is_err());
    }

    #[test]
    fn diagnostics_bounds_hold_on_golden_window() {
        let h = hyp(0.3, 4);
        let w = SurgeWindow::new(vec![10; 4], 20);
        let d = diagnostics(&w, &h).unwrap();
        let ln_p = exact_p_value(&w, &h).unwrap().ln();
        assert!(d.log_p_lower <= ln_p && ln_p <= d.log_p_upper);
    }

    #[test]
    fn kl_direction() {
        // D(0.2 ‖ 0.6) differs from D(0.6 ‖ 0.2); the implemented order puts
        // the empirical share first.
        let forward = kl_divergence(2, 10, 0.6);
        let hand = 0.2 * (0.2_f64 / 0.6).ln() + 0.8 * (0.8_f64 / 0.4).ln();
        let reverse = 0.6 * (0.6_f64 / 0.2).ln() + 0.4 * (0.4_f64 / 0.8).ln();
        assert!((forward - hand).abs() < 1e-15);
        assert!((forward - reverse).abs() > 0.01);
    }

    #[test]
    fn power_monotone_along_doubling_n() {
        let h = hyp(0.3, 4);
        for theta_alt in [0.4, 0.6, 0.8, 1.0] {
            let powers: Vec<f64> = [100, 200, 400, 800, 1600]
                .iter()
                .map(|&n| power_exact(&PowerScenario::new(n, theta_alt, h).unwrap()))
                .collect();
            assert!(powers.windows(2).all(|w| w[1] >= w[0]), "{powers:?}");
        }
    }

    #[test]
    fn power_in_n_has_lattice_sawtooth() {
        // Unit steps in n move k_cr in jumps, so exact power is not monotone
        // in n; the dips stay small.
        let h = hyp(0.3, 4);
        let powers: Vec<f64> = (10..=1000)
            .step_by(10)
            .map(|n| power_exact(&PowerScenario::new(n, 0.8, h).unwrap()))
            .collect();
        let worst_dip = powers.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
        assert!(worst_dip > 0.0);
        assert!(worst_dip < 0.02);
    }

    #[test]
    fn exact_size_never_exceeds_alpha() {
        for alpha in [0.01, 0.05, 0.1] {
            let h = SurgeHypothesis::new(0.3, 4, alpha).unwrap();
            for n in 1..400 {
                assert!(exact_size(n, &h) <= alpha);
            }
        }
    }

    proptest! {
        #[test]
        fn exact_p_nonincreasing_in_test_count(base in proptest::collection::vec(0u64..50, 4), t in 0u64..100) {
            let h = hyp(0.3, 4);
            let a = exact_p_value(&SurgeWindow::new(base.clone(), t), &h).unwrap();
            let b = exact_p_value(&SurgeWindow::new(base, t + 1), &h).unwrap();
            prop_assert!(b <= a + 1e-15);
        }

        #[test]
        fn tail_bounds_hold(n in 2u64..3000, frac in 0.0f64..1.0, rho in 0.05f64..0.95) {
            let c = ((frac * rho * n as f64) as u64).clamp(1, n - 1);
            prop_assume!((c as f64) / (n as f64) < rho);
            let d = diagnostics_from_totals(c, n, rho).unwrap();
            let ln_p = ln_binomial_cdf(c, n, rho).unwrap();
            prop_assert!(d.log_p_lower <= ln_p + 1e-9 && ln_p <= d.log_p_upper + 1e-9);
        }

        #[test]
        fn power_monotone_in_theta_alt(n in 20u64..600, step in 0.0f64..0.5) {
            let h = hyp(0.3, 4);
            let lo = power_exact(&PowerScenario::new(n, 0.3 + step, h).unwrap());
            let hi = power_exact(&PowerScenario::new(n, 0.3 + step + 0.05, h).unwrap());
            prop_assert!(hi + 1e-15 >= lo);
        }
    }
}
