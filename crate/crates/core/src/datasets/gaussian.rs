use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TimeSeries;
use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Closed interval `[lo, hi]` for per-series jitter; `lo == hi` disables it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

/// Isotropic Gaussian blob moving left to right while growing. Positions
/// are in pixels: `x` is the column, `y` the row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianScheduleConfig {
    pub height: usize,
    pub width: usize,
    pub n_series: usize,
    pub n_frames: usize,
    pub x_start: Range,
    pub x_end: Range,
    pub std_start: Range,
    pub std_end: Range,
    pub y: Range,
    pub sharpness: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for GaussianScheduleConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            n_series: 10,
            n_frames: 31,
            x_start: Range::new(7.0, 9.0),
            x_end: Range::new(20.0, 22.0),
            std_start: Range::new(1.5, 2.0),
            std_end: Range::new(2.5, 3.0),
            y: Range::new(14.5, 16.5),
            sharpness: 8.0,
            amplitude: 1.0,
            seed: 0,
        }
    }
}

impl GaussianScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigOutOfBounds(msg));
        if self.height == 0 || self.width == 0 || self.n_series == 0 || self.n_frames == 0 {
            return bad("grid size, n_series and n_frames must be positive".into());
        }
        let ranges = [
            ("x_start", self.x_start),
            ("x_end", self.x_end),
            ("std_start", self.std_start),
            ("std_end", self.std_end),
            ("y", self.y),
        ];
        for (name, r) in ranges {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
                return bad(format!("{name} range [{}, {}] is invalid", r.lo, r.hi));
            }
        }
        if self.std_start.lo <= 0.0 || self.std_end.lo <= 0.0 {
            return bad("std must be positive".into());
        }
        if !(self.sharpness.is_finite() && self.sharpness >= 0.0) {
            return bad(format!("sharpness {} must be >= 0", self.sharpness));
        }
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return bad(format!("amplitude {} must be positive", self.amplitude));
        }
        // x(t) -+ 3 std(t) is affine in the warp, so the endpoints bound every frame.
        let (w, h) = ((self.width - 1) as f64, (self.height - 1) as f64);
        for (x, s, which) in [
            (self.x_start, self.std_start, "start"),
            (self.x_end, self.std_end, "end"),
        ] {
            if x.lo - 3.0 * s.hi < 0.0 || x.hi + 3.0 * s.hi > w {
                return bad(format!("{which} blob (x +- 3 std) leaves columns [0, {w}]"));
            }
            if self.y.lo - 3.0 * s.hi < 0.0 || self.y.hi + 3.0 * s.hi > h {
                return bad(format!("{which} blob (y +- 3 std) leaves rows [0, {h}]"));
            }
        }
        Ok(())
    }
}

/// Logistic warp rescaled to `w(0) = 0`, `w(1) = 1`; steepest at 0.5.
pub fn time_warp(tau: f64, sharpness: f64) -> f64 {
    if sharpness < 1e-6 {
        return tau;
    }
    let l = |x: f64| 1.0 / (1.0 + (-(x - 0.5) * sharpness).exp());
    (l(tau) - l(0.0)) / (l(1.0) - l(0.0))
}

fn render(cfg: &GaussianScheduleConfig, x: f64, y: f64, std: f64) -> ImageGrid {
    let (h, w) = (cfg.height, cfg.width);
    let mut v = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let d2 = (r as f64 - y).powi(2) + (c as f64 - x).powi(2);
            // Rounded to f32 so the in-memory series equals its on-disk copy.
            v[r * w + c] = (cfg.amplitude * (-d2 / (2.0 * std * std)).exp()) as f32 as f64;
        }
    }
    ImageGrid::new(h, w, v).expect("finite nonnegative render")
}

pub fn generate_gaussian_series(cfg: &GaussianScheduleConfig) -> Result<Vec<TimeSeries>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_frames;
    (0..cfg.n_series)
        .map(|_| {
            let (x0, x1) = (cfg.x_start.sample(&mut rng), cfg.x_end.sample(&mut rng));
            let (s0, s1) = (cfg.std_start.sample(&mut rng), cfg.std_end.sample(&mut rng));
            let y = cfg.y.sample(&mut rng);
            let frames = (0..n)
                .map(|j| {
                    let tau = if n > 1 { j as f64 / (n - 1) as f64 } else { 0.0 };
                    let w = time_warp(tau, cfg.sharpness);
                    render(cfg, x0 + (x1 - x0) * w, y, s0 + (s1 - s0) * w)
                })
                .collect();
            TimeSeries::new(frames, (0..n).map(|j| j as f64).collect())
        })
        .collect()
}
