use super::kernel::LogConv;
use super::{check_same_grid, log_weights, SinkhornConfig};
use crate::error::{Error, Result};
use crate::grid::NormalizedMeasure;

/// Log scalings of the two marginal constraints, reusable as a warm start.
#[derive(Clone, Debug, PartialEq)]
pub struct BarycenterState {
    log_v: [Vec<f64>; 2],
}

#[derive(Clone, Debug)]
pub struct Barycenter {
    pub measure: NormalizedMeasure,
    pub iterations: usize,
    /// Largest l1 violation of the two input marginals.
    pub violation: f64,
    /// False when `max_iters` ran out before reaching the tolerance.
    pub converged: bool,
    pub state: BarycenterState,
}

/// Entropic two-measure barycenter with weights `(1 - t, t)`.
///
/// The output always has unit mass; a solve that hits `max_iters` still
/// returns its last iterate with `converged == false`.
pub fn barycenter_interp(
    mu0: &NormalizedMeasure,
    mu1: &NormalizedMeasure,
    t: f64,
    cfg: &SinkhornConfig,
) -> Result<Barycenter> {
    barycenter_interp_warm(mu0, mu1, t, cfg, None)
}

/// Iterative Bregman projections in the log domain:
///
/// ```text
/// log u_k = log mu_k - LK(log v_k)
/// log b   = sum_k alpha_k LK(log u_k)
/// log v_k = log b - LK(log u_k)
/// ```
pub fn barycenter_interp_warm(
    mu0: &NormalizedMeasure,
    mu1: &NormalizedMeasure,
    t: f64,
    cfg: &SinkhornConfig,
    warm: Option<&BarycenterState>,
) -> Result<Barycenter> {
    cfg.validate()?;
    check_same_grid(mu0, mu1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfInterval { t, t0: 0.0, t1: 1.0 });
    }
    let (h, w) = mu0.dims();
    let n = h * w;
    let conv = LogConv::gibbs(h, w, cfg.spacing, cfg.epsilon);
    let alpha = [1.0 - t, t];
    let log_mu = [log_weights(mu0), log_weights(mu1)];
    let weights = [mu0.weights(), mu1.weights()];

    let mut log_v = match warm {
        Some(s) if s.log_v[0].len() == n => s.log_v.clone(),
        _ => [vec![0.0; n], vec![0.0; n]],
    };
    let mut log_u = [vec![0.0; n], vec![0.0; n]];
    let mut kv = [vec![0.0; n], vec![0.0; n]];
    let mut ku = [vec![0.0; n], vec![0.0; n]];
    let mut log_b = vec![0.0; n];
    let mut have_b = false;
    let mut violation = f64::INFINITY;
    let mut iterations = 0;

    for it in 0..=cfg.max_iters {
        for k in 0..2 {
            conv.apply(&log_v[k], &mut kv[k]);
        }
        if have_b {
            violation = (0..2)
                .map(|k| marginal_violation(weights[k], &log_u[k], &kv[k]))
                .fold(0.0, f64::max);
            if violation <= cfg.convergence_tol || it == cfg.max_iters {
                break;
            }
        }
        iterations = it + 1;
        for k in 0..2 {
            for i in 0..n {
                log_u[k][i] = log_mu[k][i] - kv[k][i];
            }
            conv.apply(&log_u[k], &mut ku[k]);
        }
        for i in 0..n {
            log_b[i] = (0..2)
                .filter(|&k| alpha[k] > 0.0)
                .map(|k| alpha[k] * ku[k][i])
                .sum();
        }
        for k in 0..2 {
            for i in 0..n {
                log_v[k][i] = log_b[i] - ku[k][i];
            }
        }
        if log_b.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite(
                "barycenter scaling (epsilon too small for the cost scale?)".into(),
            ));
        }
        have_b = true;
    }

    let peak = log_b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights_b: Vec<f64> = log_b.iter().map(|v| (v - peak).exp()).collect();
    let total: f64 = weights_b.iter().sum();
    let measure =
        NormalizedMeasure::from_weights(h, w, weights_b.iter().map(|v| v / total).collect())?;
    Ok(Barycenter {
        measure,
        iterations,
        violation,
        converged: violation <= cfg.convergence_tol,
        state: BarycenterState { log_v },
    })
}

/// `sum_i |u_i (K v)_i - mu_i|` in the log domain.
fn marginal_violation(mu: &[f64], log_u: &[f64], kv: &[f64]) -> f64 {
    mu.iter()
        .zip(log_u.iter().zip(kv))
        .map(|(m, (lu, kv))| {
            let row = if *lu == f64::NEG_INFINITY {
                0.0
            } else {
                (lu + kv).exp()
            };
            (row - m).abs()
        })
        .sum()
}
