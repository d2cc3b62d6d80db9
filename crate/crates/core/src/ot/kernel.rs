//! Log-domain Gibbs-kernel convolution on a regular grid.
//!
//! The squared-distance cost splits into a row term and a column term, so the
//! 2-D log-sum-exp `out[i] = log sum_j exp(-C(i, j) / eps + x[j])` is computed as
//! two batches of 1-D reductions. Each reduction runs as a small matrix product
//! against `exp(x - max)`; entries whose shifted sum falls into the underflow
//! range are recomputed with an exact per-entry log-sum-exp.

use crate::linalg::gemm;

/// Shifted sums below this are recomputed exactly.
const UNDERFLOW_GUARD: f64 = 1e-200;

#[derive(Clone, Debug)]
pub(crate) struct AxisKernel {
    n: usize,
    log_k: Vec<f64>,
    k: Vec<f64>,
}

impl AxisKernel {
    /// `log K(a, b) = -spacing^2 (a - b)^2 / eps`.
    pub(crate) fn gibbs(n: usize, spacing: f64, eps: f64) -> Self {
        Self::from_fn(n, |d| -(spacing * spacing * d * d) / eps)
    }

    /// `log K(a, b) = log c - c / eps` with `c = spacing^2 (a - b)^2`.
    pub(crate) fn cost_weighted(n: usize, spacing: f64, eps: f64) -> Self {
        Self::from_fn(n, |d| {
            let c = spacing * spacing * d * d;
            if c == 0.0 {
                f64::NEG_INFINITY
            } else {
                c.ln() - c / eps
            }
        })
    }

    fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Self {
        let mut log_k = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                log_k[a * n + b] = f(a as f64 - b as f64);
            }
        }
        let k = log_k.iter().map(|v| v.exp()).collect();
        Self { n, log_k, k }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LogConv {
    height: usize,
    width: usize,
    rows: AxisKernel,
    cols: AxisKernel,
}

impl LogConv {
    pub(crate) fn new(rows: AxisKernel, cols: AxisKernel) -> Self {
        Self {
            height: rows.n,
            width: cols.n,
            rows,
            cols,
        }
    }

    pub(crate) fn gibbs(height: usize, width: usize, spacing: f64, eps: f64) -> Self {
        Self::new(
            AxisKernel::gibbs(height, spacing, eps),
            AxisKernel::gibbs(width, spacing, eps),
        )
    }

    /// `out[(i, j)] = log sum_{k, l} Kr(i, k) Kc(j, l) exp(x[(k, l)])`.
    pub(crate) fn apply(&self, x: &[f64], out: &mut [f64]) {
        let (h, w) = (self.height, self.width);
        debug_assert_eq!(x.len(), h * w);
        debug_assert_eq!(out.len(), h * w);

        // Pass 1: reduce along columns within each row.
        let mut shift = vec![0.0; h];
        let mut e = vec![0.0; h * w];
        for r in 0..h {
            let row = &x[r * w..(r + 1) * w];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            shift[r] = m;
            if m > f64::NEG_INFINITY {
                for (dst, v) in e[r * w..(r + 1) * w].iter_mut().zip(row) {
                    *dst = (v - m).exp();
                }
            }
        }
        let mut s = vec![0.0; h * w];
        // s = e * Kc^T
        gemm(h, w, w, &e, (w, 1), &self.cols.k, (1, w), &mut s, 0.0);
        let mut mid = vec![0.0; h * w];
        for r in 0..h {
            let m = shift[r];
            for c in 0..w {
                let idx = r * w + c;
                mid[idx] = if m == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else if s[idx] > UNDERFLOW_GUARD {
                    m + s[idx].ln()
                } else {
                    exact_lse(
                        &self.cols.log_k[c * w..(c + 1) * w],
                        x[r * w..(r + 1) * w].iter().copied(),
                    )
                };
            }
        }

        // Pass 2: reduce along rows within each column.
        let mut cshift = vec![f64::NEG_INFINITY; w];
        for r in 0..h {
            for c in 0..w {
                cshift[c] = cshift[c].max(mid[r * w + c]);
            }
        }
        for r in 0..h {
            for c in 0..w {
                let m = cshift[c];
                e[r * w + c] = if m == f64::NEG_INFINITY {
                    0.0
                } else {
                    (mid[r * w + c] - m).exp()
                };
            }
        }
        // s = Kr * e
        gemm(h, h, w, &self.rows.k, (h, 1), &e, (w, 1), &mut s, 0.0);
        for r in 0..h {
            for c in 0..w {
                let idx = r * w + c;
                let m = cshift[c];
                out[idx] = if m == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else if s[idx] > UNDERFLOW_GUARD {
                    m + s[idx].ln()
                } else {
                    exact_lse(
                        &self.rows.log_k[r * h..(r + 1) * h],
                        (0..h).map(|k| mid[k * w + c]),
                    )
                };
            }
        }
    }
}

fn exact_lse(log_k: &[f64], x: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = log_k
        .iter()
        .zip(x.clone())
        .map(|(a, b)| a + b)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = log_k.iter().zip(x).map(|(a, b)| (a + b - m).exp()).sum();
    m + s.ln()
}
