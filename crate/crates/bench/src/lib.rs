//! Shared fixtures for the benchmarks.

use otflow_core::datasets::{generate_gaussian_series, subsample, GaussianScheduleConfig, TimeSeries};
use otflow_core::grid::{normalize, ImageGrid, NormalizedMeasure};

/// Normalized isotropic Gaussian on an `n x n` grid.
pub fn gaussian(n: usize, center: (f64, f64), std: f64) -> NormalizedMeasure {
    let v = (0..n * n)
        .map(|q| {
            let (i, j) = ((q / n) as f64, (q % n) as f64);
            (-((i - center.0).powi(2) + (j - center.1).powi(2)) / (2.0 * std * std)).exp()
        })
        .collect();
    normalize(&ImageGrid::new(n, n, v).expect("valid grid")).expect("positive mass")
}

/// The default synthetic dataset with stride-5 training frames.
pub fn training_set() -> Vec<TimeSeries> {
    generate_gaussian_series(&GaussianScheduleConfig::default())
        .expect("default config is valid")
        .iter()
        .map(|s| subsample(s, 5).0)
        .collect()
}
