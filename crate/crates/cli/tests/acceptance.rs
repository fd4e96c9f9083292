//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line per criterion and exits non-zero if any of them failed.

use std::process::Command;
use std::time::{Duration, Instant};

use fedsurv_core::combine::{
    self, combine, corrected_stouffer, weighted_stouffer, EvidenceSet, Method,
};
use fedsurv_core::experiments::{
    power_curve, semisynth, Arm, PowerCurveConfig, SemisynthConfig, SemisynthRow, Sweep,
};
use fedsurv_core::numerics::{ln_binomial_cdf, normal_cdf, normal_quantile};
use fedsurv_core::rng::sub_seed_path;
use fedsurv_core::semisynth::{builtin_wave_series, normalized_entropy, ShareVector};
use fedsurv_core::surge_test::{
    critical_value, exact_p_value, gaussian_z, kl_divergence, power_approx, power_exact,
    PowerScenario, SurgeHypothesis, SurgeWindow,
};
use fedsurv_oracles as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Every random stream in the suite derives from this seed and a path naming
/// the criterion.
const SUITE_SEED: u64 = 42;

fn suite_rng(path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed_path(SUITE_SEED, path))
}

fn hyp(theta: f64, l: usize) -> SurgeHypothesis {
    SurgeHypothesis::new(theta, l, 0.05).unwrap()
}

fn binomial(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    Binomial::new(n, p).unwrap().sample(rng)
}

/// Spreads `total` over `parts` periods uniformly at random.
fn spread(rng: &mut ChaCha8Rng, total: u64, parts: usize) -> Vec<u64> {
    let mut cuts: Vec<u64> = (0..parts - 1)
        .map(|_| rng.random_range(0..=total))
        .collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(total - prev);
    out
}

fn exact_test_oracle() -> Outcome {
    let mut rng = suite_rng(&[1]);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let theta_h = [10u64, 30, 100][rng.random_range(0..3)];
        let l = [2usize, 4, 8][rng.random_range(0..3)];
        let h = hyp(theta_h as f64 / 100.0, l);
        let n = rng.random_range(1..=1000u64);
        // Half the windows sit near the null mean where the tail is not tiny.
        let c = if i % 2 == 0 {
            rng.random_range(0..=n)
        } else {
            binomial(&mut rng, n, h.rho())
        };
        let window = SurgeWindow::new(spread(&mut rng, c, l), n - c);
        let got = exact_p_value(&window, &h).unwrap();
        let (a, b) = oracle::rho_as_ratio(theta_h, l as u64);
        let want = oracle::exact_binomial_cdf(c, n, a, b);
        worst = worst.max((got - want).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("max |p - oracle| = {worst:.3e} over 1000 windows"),
    )
}

fn recombination_identity() -> Outcome {
    let mut rng = suite_rng(&[2]);
    let (mut plain, mut corrected): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let h = hyp(
            [0.1, 0.3, 1.0][rng.random_range(0..3)],
            [2, 4, 8][rng.random_range(0..3)],
        );
        let rho = h.rho();
        let sites = rng.random_range(2..=10usize);
        // Null-distributed windows keep every z-score moderate, where Φ⁻¹∘Φ
        // round-trips to full precision.
        let windows: Vec<(u64, u64)> = (0..sites)
            .map(|_| {
                let n = rng.random_range(1..=200u64);
                (binomial(&mut rng, n, rho), n)
            })
            .collect();
        let (c, n) = windows
            .iter()
            .fold((0, 0), |(a, b), &(ci, ni)| (a + ci, b + ni));
        let shares: Vec<f64> = windows
            .iter()
            .map(|&(_, ni)| ni as f64 / n as f64)
            .collect();
        for yates in [false, true] {
            let central = normal_quantile(normal_cdf(gaussian_z(c, n, rho, yates))).unwrap();
            let p: Vec<f64> = windows
                .iter()
                .map(|&(ci, ni)| normal_cdf(gaussian_z(ci, ni, rho, yates)))
                .collect();
            let ev = EvidenceSet::new(p)
                .unwrap()
                .with_shares(shares.clone())
                .unwrap();
            if yates {
                let ev = ev.with_total_count(n).with_rho(rho).unwrap();
                let gap = (central - corrected_stouffer(&ev).unwrap().statistic).abs();
                corrected = corrected.max(gap);
            } else {
                let gap = (central - weighted_stouffer(&ev).unwrap().statistic).abs();
                plain = plain.max(gap);
            }
        }
    }
    outcome(
        plain <= 1e-10 && corrected <= 1e-10,
        format!("max gap {plain:.3e} (weighted), {corrected:.3e} (continuity-corrected)"),
    )
}

fn null_calibration() -> Outcome {
    let reps = 100_000;
    let crit = oracle::ks_critical_1pct(reps);
    let mut lines = Vec::new();
    let mut pass = true;
    for (k, sites) in [2usize, 8].into_iter().enumerate() {
        for (j, &method) in Method::NAIVE.iter().enumerate() {
            let mut rng = suite_rng(&[3, k as u64, j as u64]);
            let combined: Vec<f64> = (0..reps)
                .map(|_| {
                    let p: Vec<f64> = (0..sites).map(|_| rng.random::<f64>()).collect();
                    combine(method, &EvidenceSet::new(p).unwrap()).unwrap().p
                })
                .collect();
            let d = oracle::ks_uniform(combined);
            pass &= d < crit;
            lines.push(format!("{method}/N={sites} D={d:.4}"));
        }
    }
    outcome(pass, format!("1% critical {crit:.4}; {}", lines.join(", ")))
}

fn power_accuracy() -> Outcome {
    let mut rng = suite_rng(&[4]);
    let h = hyp(0.3, 4);
    let draws = 1_000_000u64;
    let (mut worst_gap, mut worst_at) = (0.0f64, (0, 0.0));
    let mut mc_worst: f64 = 0.0;
    for n in [100u64, 200, 500] {
        for step in 3..=10 {
            let theta_alt = step as f64 / 10.0;
            let scn = PowerScenario::new(n, theta_alt, h).unwrap();
            let exact = power_exact(&scn);
            let gap = (power_approx(&scn) - exact).abs();
            if gap > worst_gap {
                worst_gap = gap;
                worst_at = (n, theta_alt);
            }
            let k_cr = critical_value(n, &h);
            let q_alt = (1.0 + theta_alt) / (1.0 + theta_alt + 4.0);
            let hits = (0..draws)
                .filter(|_| binomial(&mut rng, n, q_alt) >= k_cr)
                .count();
            let est = hits as f64 / draws as f64;
            let sigma = (exact * (1.0 - exact) / draws as f64).sqrt();
            mc_worst = mc_worst.max((est - exact).abs() / sigma);
        }
    }
    outcome(
        worst_gap <= 0.03 && mc_worst <= 3.0,
        format!(
            "max |approx - exact| = {worst_gap:.4} at n={}, theta'={}; worst Monte Carlo deviation {mc_worst:.2} sigma",
            worst_at.0, worst_at.1
        ),
    )
}

fn power_curve_shape() -> Outcome {
    let rows = power_curve(&PowerCurveConfig::default(), 42).unwrap();
    let power = |arm: Arm, theta_alt: f64| {
        rows.iter()
            .find(|r| r.method == arm && (r.theta_alt - theta_alt).abs() < 1e-9)
            .map(|r| r.power)
            .unwrap()
    };
    let thetas: Vec<f64> = PowerCurveConfig::default().theta_grid;
    let central_gap = thetas
        .iter()
        .map(|&t| power(Arm::Centralized, t) - power(Arm::Combined(Method::Stouffer), t))
        .fold(f64::NEG_INFINITY, f64::max);
    let single = power(Arm::LargestSite, 0.6);
    let (weakest, weakest_power) = Method::ALL
        .iter()
        .map(|&m| (m, power(Arm::Combined(m), 0.6)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let margin = weakest_power - single;
    outcome(
        central_gap <= 0.05 && margin >= 0.05,
        format!(
            "max(centralized - stouffer) = {central_gap:.4}; single site at theta'=0.6 = {single:.4}, \
             weakest combiner {weakest} = {weakest_power:.4} (margin {margin:.4})"
        ),
    )
}

fn semisynth_rows(sweep: Sweep) -> Vec<SemisynthRow> {
    let cfg = SemisynthConfig {
        sweep,
        ..Default::default()
    };
    let observed = builtin_wave_series(&cfg.shape);
    semisynth(&cfg, &observed, 42).unwrap()
}

fn score(rows: &[SemisynthRow], setting: &str, arm: Arm, f1: bool) -> f64 {
    let r = rows
        .iter()
        .find(|r| r.setting == setting && r.method == arm)
        .unwrap();
    if f1 {
        r.f1
    } else {
        r.recall_at_fdr
    }
}

fn semisynth_shape() -> Outcome {
    let site_counts = [2usize, 5, 10, 20];
    let sites = semisynth_rows(Sweep::Sites {
        sites: site_counts.to_vec(),
    });
    let spread_of = |m: Method| {
        let v: Vec<f64> = site_counts
            .iter()
            .map(|n| score(&sites, &format!("sites={n}"), Arm::Combined(m), false))
            .collect();
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let (fisher_range, stouffer_range) = (spread_of(Method::Fisher), spread_of(Method::Stouffer));
    let a = fisher_range <= 0.15 && stouffer_range > fisher_range;

    let skewed = ShareVector::new(vec![0.8, 0.05, 0.05, 0.05, 0.05]).unwrap();
    let shares = semisynth_rows(Sweep::Shares {
        shares: vec![skewed],
    });
    let label = shares[0].setting.clone();
    let rec = |arm| score(&shares, &label, arm, false);
    let largest = rec(Arm::LargestSite);
    let (ws, s) = (
        rec(Arm::Combined(Method::WeightedStouffer)),
        rec(Arm::Combined(Method::Stouffer)),
    );
    let (wf, f) = (
        rec(Arm::Combined(Method::WFisher)),
        rec(Arm::Combined(Method::Fisher)),
    );
    let b = ws > s && wf > f && ws > largest && wf > largest;

    let checked = [
        Method::Stouffer,
        Method::Fisher,
        Method::WeightedStouffer,
        Method::WFisher,
    ];
    let f1s: Vec<(Method, f64)> = checked
        .iter()
        .map(|&m| (m, score(&sites, "sites=5", Arm::Combined(m), true)))
        .collect();
    let c = f1s.iter().all(|&(_, v)| v >= 0.85);
    let f1_text: Vec<String> = f1s.iter().map(|(m, v)| format!("{m}={v:.3}")).collect();

    outcome(
        a && b && c,
        format!(
            "(a) {} fisher range {fisher_range:.3}, stouffer range {stouffer_range:.3}; \
             (b) {} wstouffer {ws:.3} vs stouffer {s:.3}, wfisher {wf:.3} vs fisher {f:.3}, largest site {largest:.3}; \
             (c) {} F1 {}",
            verdict(a),
            verdict(b),
            verdict(c),
            f1_text.join(" ")
        ),
    )
}

fn bounds_check() -> Outcome {
    let mut rng = suite_rng(&[7]);
    let mut checked = 0;
    let mut violations = 0;
    while checked < 10_000 {
        let n = rng.random_range(2..=5000u64);
        let rho = rng.random_range(0.01..0.99);
        let c = rng.random_range(1..n);
        // The exponential bounds describe the lower tail, c/n < ρ.
        if c as f64 >= rho * n as f64 {
            continue;
        }
        checked += 1;
        let ln_p = ln_binomial_cdf(c, n, rho).unwrap();
        let upper = -(n as f64) * kl_divergence(c, n, rho);
        let lower = upper - 0.5 * (2.0 * n as f64).ln();
        if !(lower <= ln_p && ln_p <= upper) {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations in {checked} windows"),
    )
}

fn equal_share_reductions() -> Outcome {
    let mut rng = suite_rng(&[8]);
    let (mut ws, mut wf, mut good): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let sites = rng.random_range(1..=20usize);
        let p: Vec<f64> = (0..sites).map(|_| rng.random_range(1e-6..1.0)).collect();
        let ev = EvidenceSet::new(p).unwrap().with_equal_shares();
        let fisher = combine::fisher(&ev).unwrap().p;
        ws = ws.max(
            (combine::weighted_stouffer(&ev).unwrap().p - combine::stouffer(&ev).unwrap().p).abs(),
        );
        wf = wf.max((combine::wfisher(&ev).unwrap().p - fisher).abs());
        good = good.max((combine::goods(&ev).unwrap().p - fisher).abs());
    }
    outcome(
        ws <= 1e-12 && wf <= 1e-12 && good <= 1e-12,
        format!("max gaps: wstouffer {ws:.2e}, wfisher {wf:.2e}, goods {good:.2e}"),
    )
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("run{run}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_fedsurv"))
            .args(["semisynth", "--seed", "42", "--out"])
            .arg(&path)
            .status()
            .unwrap();
        if !status.success() {
            return outcome(false, format!("run {run} exited with {status}"));
        }
        outputs.push(std::fs::read(&path).unwrap());
    }
    outcome(
        outputs[0] == outputs[1] && !outputs[0].is_empty(),
        format!(
            "{} bytes per run, identical: {}",
            outputs[0].len(),
            outputs[0] == outputs[1]
        ),
    )
}

fn entropy_anchor() -> Outcome {
    let shares = ShareVector::new(vec![0.65, 0.0875, 0.0875, 0.0875, 0.0875]).unwrap();
    let s = normalized_entropy(&shares).unwrap();
    outcome(s > 0.69 && s < 0.71, format!("normalized entropy = {s:.5}"))
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "exact test vs big-integer oracle",
            Duration::from_secs(10),
            exact_test_oracle,
        ),
        (
            "gaussian recombination identities",
            Duration::from_secs(10),
            recombination_identity,
        ),
        (
            "null calibration of naive combiners",
            Duration::from_secs(60),
            null_calibration,
        ),
        (
            "power formula accuracy",
            Duration::from_secs(120),
            power_accuracy,
        ),
        (
            "power curve shape",
            Duration::from_secs(300),
            power_curve_shape,
        ),
        (
            "semi-synthetic sweeps",
            Duration::from_secs(600),
            semisynth_shape,
        ),
        ("exponential bounds", Duration::from_secs(10), bounds_check),
        (
            "equal-share reductions",
            Duration::from_secs(5),
            equal_share_reductions,
        ),
        (
            "semisynth CLI determinism",
            Duration::from_secs(600),
            cli_determinism,
        ),
        ("entropy anchor", Duration::from_secs(1), entropy_anchor),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let pass = out.pass && took <= *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {name} [{:.1}s / {}s] {}",
            i + 1,
            verdict(pass),
            took.as_secs_f64(),
            budget.as_secs(),
            out.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
