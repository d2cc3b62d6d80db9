//! Dense reverse-mode automatic differentiation with an Adam optimizer.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::{load_checkpoint, save_checkpoint, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
