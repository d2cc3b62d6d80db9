//! Entropic optimal transport between measures on a common grid.
//!
//! All solvers work in the log domain with potentials in cost units, and the
//! Gibbs kernel is applied separably (see [`kernel`]).

mod barycenter;
mod kernel;
mod sinkhorn;

use serde::{Deserialize, Serialize};

pub use barycenter::{barycenter_interp, barycenter_interp_warm, Barycenter, BarycenterState};
pub use sinkhorn::{sinkhorn, sinkhorn_annealed, sinkhorn_grad, DualPotentials, TransportCost};

use crate::error::{Error, Result};
use crate::grid::NormalizedMeasure;

/// Settings for Sinkhorn and barycenter solves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornConfig {
    /// Entropic regularization, in squared-distance units.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once the l1 marginal violation drops to this value.
    pub convergence_tol: f64,
    /// Report the Sinkhorn divergence instead of the raw entropic cost.
    pub debias: bool,
    /// Grid spacing entering the squared-distance cost.
    pub spacing: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self::for_grid(32, 32, 1.0)
    }
}

impl SinkhornConfig {
    /// Distance defaults for an `height x width` grid: `eps = 0.05 spacing^2 max(H, W)`.
    pub fn for_grid(height: usize, width: usize, spacing: f64) -> Self {
        Self {
            epsilon: 0.05 * spacing * spacing * height.max(width) as f64,
            max_iters: 500,
            convergence_tol: 1e-4,
            debias: true,
            spacing,
        }
    }

    /// Barycenter defaults: same epsilon, 200 iterations, no debiasing.
    pub fn barycenter_for_grid(height: usize, width: usize, spacing: f64) -> Self {
        Self {
            max_iters: 200,
            debias: false,
            ..Self::for_grid(height, width, spacing)
        }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.epsilon > 0.0
            && self.epsilon.is_finite()
            && self.max_iters >= 1
            && self.convergence_tol > 0.0
            && self.spacing > 0.0
            && self.spacing.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid sinkhorn settings {self:?}")))
        }
    }
}

/// Squared Euclidean ground cost between pixel centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundCost {
    pub height: usize,
    pub width: usize,
    pub spacing: f64,
}

impl GroundCost {
    pub fn cost(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let di = a.0 as f64 - b.0 as f64;
        let dj = a.1 as f64 - b.1 as f64;
        self.spacing * self.spacing * (di * di + dj * dj)
    }
}

pub fn ground_cost(height: usize, width: usize, spacing: f64) -> GroundCost {
    GroundCost {
        height,
        width,
        spacing,
    }
}

fn check_same_grid(a: &NormalizedMeasure, b: &NormalizedMeasure) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::GridMismatch {
            lhs: a.dims(),
            rhs: b.dims(),
        });
    }
    Ok(())
}

fn log_weights(m: &NormalizedMeasure) -> Vec<f64> {
    m.weights().iter().map(|w| w.ln()).collect()
}
