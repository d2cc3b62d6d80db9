use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Softplus,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Softplus => tape.softplus(x),
        }
    }
}

/// Dense layers `sizes[0] -> sizes[1] -> ... -> sizes[n]`. Hidden layers use
/// `hidden`; the last layer uses `output` (linear when `None`).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub name: String,
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Option<Activation>,
}

impl Mlp {
    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.weight", self.name)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.bias", self.name)
    }

    /// Adds uniform fan-in initialized weights (`U(-a, a)`, `a = sqrt(3 / fan_in)`)
    /// and zero biases. With `zero_last` the final layer starts at zero.
    pub fn init(&self, rng: &mut impl Rng, store: &mut ParamStore, zero_last: bool) {
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let a = (3.0 / fan_in as f64).sqrt();
            let last = l + 1 == self.num_layers();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| {
                    let v = rng.gen_range(-a..a);
                    if zero_last && last {
                        0.0
                    } else {
                        v
                    }
                })
                .collect();
            store.insert(
                self.weight_name(l),
                Tensor::matrix(fan_in, fan_out, w).expect("finite init"),
            );
            store.insert(self.bias_name(l), Tensor::zeros(&[fan_out]));
        }
    }

    /// `vars` holds `[w0, b0, w1, b1, ...]`; `x` is `[batch, sizes[0]]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for l in 0..self.num_layers() {
            h = tape.matmul(h, vars[2 * l])?;
            h = tape.add_bias(h, vars[2 * l + 1])?;
            let act = if l + 1 == self.num_layers() {
                self.output
            } else {
                Some(self.hidden)
            };
            if let Some(act) = act {
                h = act.apply(tape, h)?;
            }
        }
        Ok(h)
    }
}
