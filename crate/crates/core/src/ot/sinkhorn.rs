use super::kernel::{AxisKernel, LogConv};
use super::{check_same_grid, log_weights, SinkhornConfig};
use crate::error::{Error, Result};
use crate::grid::NormalizedMeasure;

/// Log-domain dual potentials, in cost units.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPotentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TransportCost {
    /// Sinkhorn divergence when debiasing, otherwise the transport cost `<pi, C>`.
    pub value: f64,
    /// Entropic objective `OT_eps(mu, nu) = <mu, f> + <nu, g>`.
    pub entropic_cost: f64,
    /// `<pi, C>` of the entropic plan.
    pub transport_cost: f64,
    pub potentials: DualPotentials,
    /// Symmetric potentials of `OT_eps(mu, mu)` and `OT_eps(nu, nu)` when debiasing.
    pub self_potentials: Option<(Vec<f64>, Vec<f64>)>,
    pub iterations_used: usize,
    pub converged: bool,
    debias: bool,
}

impl TransportCost {
    /// Gradient of `value`'s entropic objective with respect to the source
    /// weights, centered to sum to zero.
    ///
    /// Uses the envelope relation `dOT_eps/dmu = f`; with debiasing the
    /// symmetric potential of `OT_eps(mu, mu)` is subtracted.
    pub fn gradient(&self) -> Vec<f64> {
        let mut grad = self.potentials.f.clone();
        if self.debias {
            if let Some((p_mu, _)) = &self.self_potentials {
                for (g, p) in grad.iter_mut().zip(p_mu) {
                    *g -= p;
                }
            }
        }
        let mean = grad.iter().sum::<f64>() / grad.len() as f64;
        for g in &mut grad {
            *g -= mean;
        }
        grad
    }
}

/// Sinkhorn distance between two measures on the same grid.
pub fn sinkhorn(
    mu: &NormalizedMeasure,
    nu: &NormalizedMeasure,
    cfg: &SinkhornConfig,
) -> Result<TransportCost> {
    solve(mu, nu, cfg, &[cfg.epsilon])
}

/// Like [`sinkhorn`], but halves epsilon from `eps_start` down to
/// `cfg.epsilon`, warm-starting each stage from the previous potentials.
pub fn sinkhorn_annealed(
    mu: &NormalizedMeasure,
    nu: &NormalizedMeasure,
    cfg: &SinkhornConfig,
    eps_start: f64,
) -> Result<TransportCost> {
    solve(mu, nu, cfg, &anneal_schedule(eps_start, cfg.epsilon))
}

/// Gradient of the Sinkhorn objective with respect to `mu`, row-major.
pub fn sinkhorn_grad(
    mu: &NormalizedMeasure,
    nu: &NormalizedMeasure,
    cfg: &SinkhornConfig,
) -> Result<Vec<f64>> {
    Ok(sinkhorn(mu, nu, cfg)?.gradient())
}

pub(crate) fn anneal_schedule(eps_start: f64, eps_end: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut eps = eps_start;
    while eps > eps_end {
        out.push(eps);
        eps *= 0.5;
    }
    out.push(eps_end);
    out
}

struct Problem<'a> {
    conv: LogConv,
    eps: f64,
    max_iters: usize,
    tol: f64,
    weights_a: &'a [f64],
    log_a: &'a [f64],
    log_b: &'a [f64],
}

impl Problem<'_> {
    /// `-eps log sum_j exp((pot_j - C_ij) / eps + log_w_j)`
    fn c_transform(&self, log_w: &[f64], pot: &[f64], out: &mut [f64]) {
        let x: Vec<f64> = log_w
            .iter()
            .zip(pot)
            .map(|(lw, p)| lw + p / self.eps)
            .collect();
        self.conv.apply(&x, out);
        for v in out.iter_mut() {
            *v *= -self.eps;
        }
    }

    /// l1 row-marginal violation given current and freshly transformed potentials.
    fn violation(&self, current: &[f64], fresh: &[f64]) -> f64 {
        self.weights_a
            .iter()
            .zip(current.iter().zip(fresh))
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, (c, n))| w * (((c - n) / self.eps).exp() - 1.0).abs())
            .sum()
    }

    fn solve_pair(&self, f: &mut [f64], g: &mut [f64]) -> Result<(usize, bool)> {
        let mut fresh = vec![0.0; f.len()];
        for it in 0..self.max_iters {
            self.c_transform(self.log_b, g, &mut fresh);
            if self.violation(f, &fresh) <= self.tol {
                return Ok((it, true));
            }
            f.copy_from_slice(&fresh);
            self.c_transform(self.log_a, f, g);
            check_finite(f, "sinkhorn potential f")?;
            check_finite(g, "sinkhorn potential g")?;
        }
        self.c_transform(self.log_b, g, &mut fresh);
        Ok((self.max_iters, self.violation(f, &fresh) <= self.tol))
    }

    /// Symmetric fixed point of `OT_eps(a, a)` with averaged updates.
    fn solve_symmetric(&self, p: &mut [f64]) -> Result<(usize, bool)> {
        let mut fresh = vec![0.0; p.len()];
        for it in 0..self.max_iters {
            self.c_transform(self.log_a, p, &mut fresh);
            if self.violation(p, &fresh) <= self.tol {
                return Ok((it, true));
            }
            for (a, b) in p.iter_mut().zip(&fresh) {
                *a = 0.5 * (*a + b);
            }
            check_finite(p, "symmetric sinkhorn potential")?;
        }
        self.c_transform(self.log_a, p, &mut fresh);
        Ok((self.max_iters, self.violation(p, &fresh) <= self.tol))
    }
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} (epsilon too small for the cost scale?)"
        )))
    }
}

fn dot(weights: &[f64], pot: &[f64]) -> f64 {
    weights
        .iter()
        .zip(pot)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, p)| w * p)
        .sum()
}

fn solve(
    mu: &NormalizedMeasure,
    nu: &NormalizedMeasure,
    cfg: &SinkhornConfig,
    schedule: &[f64],
) -> Result<TransportCost> {
    cfg.validate()?;
    check_same_grid(mu, nu)?;
    let (h, w) = mu.dims();
    let n = h * w;
    let (log_mu, log_nu) = (log_weights(mu), log_weights(nu));

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut p_mu = vec![0.0; n];
    let mut p_nu = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = true;
    let mut last = None;

    for &eps in schedule {
        let make = |weights_a, log_a, log_b| Problem {
                conv: LogConv::gibbs(h, w, cfg.spacing, eps),
                eps,
                max_iters: cfg.max_iters,
                tol: cfg.convergence_tol,
                weights_a,
                log_a,
                log_b,
        };
        let pair = make(mu.weights(), &log_mu, &log_nu);
        let (it, ok) = pair.solve_pair(&mut f, &mut g)?;
        iterations += it;
        converged = ok;
        if cfg.debias {
            let (it_a, ok_a) = pair.solve_symmetric(&mut p_mu)?;
            let sym_nu = make(nu.weights(), &log_nu, &log_mu);
            let (it_b, ok_b) = sym_nu.solve_symmetric(&mut p_nu)?;
            iterations += it_a + it_b;
            converged = converged && ok_a && ok_b;
        }
        last = Some(pair);
    }
    let pair = last.expect("schedule is never empty");

    let entropic_cost = dot(mu.weights(), &f) + dot(nu.weights(), &g);
    let transport_cost = plan_cost(&pair, &f, &g, h, w, cfg.spacing);
    let (value, self_potentials) = if cfg.debias {
        let self_mu = 2.0 * dot(mu.weights(), &p_mu);
        let self_nu = 2.0 * dot(nu.weights(), &p_nu);
        let div = entropic_cost - 0.5 * self_mu - 0.5 * self_nu;
        (div.max(0.0), Some((p_mu, p_nu)))
    } else {
        (transport_cost, None)
    };
    if !value.is_finite() {
        return Err(Error::NonFinite("sinkhorn value".into()));
    }
    Ok(TransportCost {
        value,
        entropic_cost,
        transport_cost,
        potentials: DualPotentials { f, g },
        self_potentials,
        iterations_used: iterations,
        converged,
        debias: cfg.debias,
    })
}

/// `<pi, C>` with `pi_ij = exp(a_i + b_j - C_ij / eps)`, splitting `C` into its
/// row and column parts so each is a weighted separable convolution.
fn plan_cost(p: &Problem, f: &[f64], g: &[f64], h: usize, w: usize, spacing: f64) -> f64 {
    let eps = p.eps;
    let a: Vec<f64> = p.log_a.iter().zip(f).map(|(l, f)| l + f / eps).collect();
    let b: Vec<f64> = p.log_b.iter().zip(g).map(|(l, g)| l + g / eps).collect();
    let row_part = LogConv::new(
        AxisKernel::cost_weighted(h, spacing, eps),
        AxisKernel::gibbs(w, spacing, eps),
    );
    let col_part = LogConv::new(
        AxisKernel::gibbs(h, spacing, eps),
        AxisKernel::cost_weighted(w, spacing, eps),
    );
    let mut tmp = vec![0.0; h * w];
    let mut total = 0.0;
    for part in [&row_part, &col_part] {
        part.apply(&b, &mut tmp);
        total += a
            .iter()
            .zip(&tmp)
            .filter(|(ai, _)| **ai > f64::NEG_INFINITY)
            .map(|(ai, ti)| (ai + ti).exp())
            .sum::<f64>();
    }
    total
}
