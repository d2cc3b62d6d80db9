use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use super::ode::{integrate_on_tape, TapeModel, Trajectory, VectorField};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderOutput {
    Softplus,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub latent_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub field_widths: Vec<usize>,
    pub decoder_output: DecoderOutput,
    /// Hidden activation of encoder and decoder.
    pub activation: Activation,
    pub field_activation: Activation,
    /// RK4 substep in frame units.
    pub ode_step: f64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            image_height: 32,
            image_width: 32,
            latent_dim: 16,
            encoder_widths: vec![128, 32],
            decoder_widths: vec![32, 128],
            field_widths: vec![64, 64],
            decoder_output: DecoderOutput::Softplus,
            activation: Activation::Relu,
            field_activation: Activation::Tanh,
            ode_step: 0.1,
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("architecture: {msg}")));
        if self.image_height == 0 || self.image_width == 0 {
            return bad("image dims must be positive");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1");
        }
        for (name, w) in [
            ("encoder_widths", &self.encoder_widths),
            ("decoder_widths", &self.decoder_widths),
            ("field_widths", &self.field_widths),
        ] {
            if w.is_empty() || w.contains(&0) {
                return bad(&format!("{name} must be nonempty and positive"));
            }
        }
        if !(self.ode_step.is_finite() && self.ode_step > 0.0) {
            return bad("ode_step must be positive");
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.image_height * self.image_width
    }

    pub fn encoder(&self) -> Mlp {
        let mut sizes = vec![self.pixels()];
        sizes.extend(&self.encoder_widths);
        sizes.push(self.latent_dim);
        Mlp {
            name: "encoder".into(),
            sizes,
            hidden: self.activation,
            output: None,
        }
    }

    pub fn decoder(&self) -> Mlp {
        let mut sizes = vec![self.latent_dim];
        sizes.extend(&self.decoder_widths);
        sizes.push(self.pixels());
        Mlp {
            name: "decoder".into(),
            sizes,
            hidden: self.activation,
            output: Some(match self.decoder_output {
                DecoderOutput::Softplus => Activation::Softplus,
                DecoderOutput::Relu => Activation::Relu,
            }),
        }
    }

    pub fn field(&self) -> Mlp {
        let mut sizes = vec![self.latent_dim];
        sizes.extend(&self.field_widths);
        sizes.push(self.latent_dim);
        Mlp {
            name: "field".into(),
            sizes,
            hidden: self.field_activation,
            output: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Encoder, decoder and vector field sharing one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub arch: ArchitectureConfig,
    pub params: ParamStore,
}

impl Model {
    /// Fresh parameters; the last field layer starts at zero (identity flow).
    pub fn new(arch: ArchitectureConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        arch.encoder().init(&mut rng, &mut params, false);
        arch.decoder().init(&mut rng, &mut params, false);
        arch.field().init(&mut rng, &mut params, true);
        Ok(Self { arch, params })
    }

    /// Model with values taken from `store`, which must match the architecture.
    pub fn with_params(arch: ArchitectureConfig, store: &ParamStore) -> Result<Self> {
        let mut m = Self::new(arch, 0)?;
        m.params.assign_from(store)?;
        Ok(m)
    }

    /// Places every parameter on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| tape.leaf(t.clone().with_requires_grad(trainable)))
            .collect();
        let (encoder, decoder, field) = (self.arch.encoder(), self.arch.decoder(), self.arch.field());
        let ne = 2 * encoder.num_layers();
        let nd = 2 * decoder.num_layers();
        Bound {
            enc: vars[..ne].to_vec(),
            dec: vars[ne..ne + nd].to_vec(),
            fld: vars[ne + nd..].to_vec(),
            vars,
            encoder,
            decoder,
            field,
        }
    }

    fn image_matrix(&self, imgs: &[&ImageGrid]) -> Result<Tensor> {
        let dims = (self.arch.image_height, self.arch.image_width);
        let mut data = Vec::with_capacity(imgs.len() * self.arch.pixels());
        for img in imgs {
            if img.dims() != dims {
                return Err(Error::ShapeMismatch {
                    op: "encode",
                    lhs: vec![dims.0, dims.1],
                    rhs: vec![img.height(), img.width()],
                });
            }
            data.extend_from_slice(img.values());
        }
        Tensor::matrix(imgs.len(), self.arch.pixels(), data)
    }

    pub fn encode(&self, img: &ImageGrid) -> Result<LatentCode> {
        Ok(self.encode_batch(&[img])?.remove(0))
    }

    pub fn encode_batch(&self, imgs: &[&ImageGrid]) -> Result<Vec<LatentCode>> {
        let x = self.image_matrix(imgs)?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.constant(x);
        let z = b.encode(&mut tape, x)?;
        let d = self.arch.latent_dim;
        Ok(tape.value(z).data().chunks(d).map(|c| LatentCode(c.to_vec())).collect())
    }

    pub fn decode(&self, z: &LatentCode) -> Result<ImageGrid> {
        Ok(self.decode_batch(std::slice::from_ref(z))?.remove(0))
    }

    pub fn decode_batch(&self, zs: &[LatentCode]) -> Result<Vec<ImageGrid>> {
        let d = self.arch.latent_dim;
        let mut data = Vec::with_capacity(zs.len() * d);
        for z in zs {
            if z.len() != d {
                return Err(Error::ShapeMismatch {
                    op: "decode",
                    lhs: vec![d],
                    rhs: vec![z.len()],
                });
            }
            data.extend_from_slice(z.values());
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let z = tape.constant(Tensor::matrix(zs.len(), d, data)?);
        let out = b.decode(&mut tape, z)?;
        let (h, w) = (self.arch.image_height, self.arch.image_width);
        tape.value(out)
            .data()
            .chunks(h * w)
            .map(|c| ImageGrid::new(h, w, c.to_vec()))
            .collect()
    }

    /// Latent trajectory from `z0` sampled at `times` (which start at 0).
    pub fn integrate(&self, z0: &LatentCode, times: &[f64]) -> Result<Trajectory> {
        let d = self.arch.latent_dim;
        if z0.len() != d {
            return Err(Error::ShapeMismatch {
                op: "integrate",
                lhs: vec![d],
                rhs: vec![z0.len()],
            });
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let z = tape.constant(Tensor::matrix(1, d, z0.values().to_vec())?);
        let states = integrate_on_tape(&mut tape, &b, z, times, self.arch.ode_step)?;
        Ok(Trajectory {
            times: times.to_vec(),
            codes: states
                .iter()
                .map(|v| LatentCode(tape.value(*v).data().to_vec()))
                .collect(),
        })
    }
}

/// A model's parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    enc: Vec<Var>,
    dec: Vec<Var>,
    fld: Vec<Var>,
    vars: Vec<Var>,
    encoder: Mlp,
    decoder: Mlp,
    field: Mlp,
}

impl Bound {
    /// Parameter handles in the store's order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

}

impl TapeModel for Bound {
    fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.encoder.forward(tape, &self.enc, x)
    }

    fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self.decoder.forward(tape, &self.dec, z)
    }
}

impl VectorField for Bound {
    fn eval(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self.field.forward(tape, &self.fld, z)
    }
}
