//! Encoder, decoder and latent vector field, plus the RK4 integrator.

mod mlp;
mod model;
mod ode;

pub use mlp::{Activation, Mlp};
pub use model::{ArchitectureConfig, Bound, DecoderOutput, LatentCode, Model};
pub use ode::{integrate, integrate_on_tape, LinearField, TapeModel, Trajectory, VectorField};
