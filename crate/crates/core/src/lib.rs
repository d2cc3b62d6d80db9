//! Joint manifold learning and dynamic optimal transport for image time series.

pub mod autodiff;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod models;
mod linalg;
pub mod ot;
pub mod joint_training;

pub use error::{Error, Result};
pub use grid::{normalize, scale, total_mass, ImageGrid, NormalizedMeasure, MASS_FLOOR};
pub use ot::{
    barycenter_interp, ground_cost, sinkhorn, sinkhorn_annealed, sinkhorn_grad, Barycenter,
    SinkhornConfig, TransportCost,
};
