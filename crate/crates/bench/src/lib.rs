//! Shared inputs for the criterion benchmarks.

use fedsurv_core::semisynth::{builtin_wave_series, WaveShape};
use fedsurv_core::CountSeries;

/// The weekly built-in wave fixture at its default magnitude.
pub fn weekly_fixture() -> CountSeries {
    builtin_wave_series(&WaveShape::default())
}

/// Deterministic p-values spread over (0, 1) for combiner benchmarks.
pub fn spread_p_values(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}
