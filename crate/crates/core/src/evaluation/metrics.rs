use crate::error::{Error, Result};
use crate::grid::ImageGrid;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Lower bound on the dynamic range used by [`ssim`].
pub const SSIM_RANGE_FLOOR: f64 = 1e-6;

fn same_dims(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimsMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    Ok(())
}

/// Mean squared pixel difference.
pub fn mse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    same_dims(a, b)?;
    let s: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        *t = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Dynamic range shared by both images: the larger `max - min`, floored.
pub fn ssim_range(a: &ImageGrid, b: &ImageGrid) -> f64 {
    let ra = a.max_value() - a.min_value();
    let rb = b.max_value() - b.min_value();
    ra.max(rb).max(SSIM_RANGE_FLOOR)
}

/// Filters over every position where the window fits (valid mode).
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|k| taps[k] * x[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|k| taps[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Mean local structural similarity with a 7x7 Gaussian window.
pub fn ssim(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidGrid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let l = ssim_range(a, b);
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let taps = gaussian_taps();
    let (xa, xb) = (a.values(), b.values());
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(xa, h, w, &taps);
    let mu_b = filter_valid(xb, h, w, &taps);
    let e_aa = filter_valid(&prod(xa, xa), h, w, &taps);
    let e_bb = filter_valid(&prod(xb, xb), h, w, &taps);
    let e_ab = filter_valid(&prod(xa, xb), h, w, &taps);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let num = (2.0 * (ma * mb) + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            num / den
        })
        .sum();
    Ok(total / n as f64)
}
