use super::model::LatentCode;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Autonomous latent dynamics `dz/dt = v(z)` evaluated on a batch `[batch, d]`.
pub trait VectorField {
    fn eval(&self, tape: &mut Tape, z: Var) -> Result<Var>;
}

/// `v(z) = A z`.
/// Encoder, decoder and field whose parameters live on a tape.
pub trait TapeModel: VectorField {
    /// `[batch, pixels] -> [batch, latent_dim]`.
    fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var>;
    /// `[batch, latent_dim] -> [batch, pixels]`.
    fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var>;
}

#[derive(Clone, Debug)]
pub struct LinearField {
    a_t: Tensor,
}

impl LinearField {
    /// `a` is `d x d`, row-major.
    pub fn new(d: usize, a: Vec<f64>) -> Result<Self> {
        let mut t = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                t[j * d + i] = a[i * d + j];
            }
        }
        Ok(Self {
            a_t: Tensor::matrix(d, d, t)?,
        })
    }
}

impl VectorField for LinearField {
    fn eval(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let a = tape.constant(self.a_t.clone());
        tape.matmul(z, a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub codes: Vec<LatentCode>,
}

fn unstable(e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!(
            "latent state during integration ({what}; unstable vector field)"
        )),
        other => other,
    }
}

fn rk4_step(tape: &mut Tape, f: &dyn VectorField, z: Var, dt: f64) -> Result<Var> {
    let k1 = f.eval(tape, z)?;
    let s = tape.mul_scalar(k1, 0.5 * dt)?;
    let z2 = tape.add(z, s)?;
    let k2 = f.eval(tape, z2)?;
    let s = tape.mul_scalar(k2, 0.5 * dt)?;
    let z3 = tape.add(z, s)?;
    let k3 = f.eval(tape, z3)?;
    let s = tape.mul_scalar(k3, dt)?;
    let z4 = tape.add(z, s)?;
    let k4 = f.eval(tape, z4)?;
    let a = tape.add(k2, k3)?;
    let a = tape.mul_scalar(a, 2.0)?;
    let b = tape.add(k1, k4)?;
    let incr = tape.add(a, b)?;
    let incr = tape.mul_scalar(incr, dt / 6.0)?;
    tape.add(z, incr)
}

/// Position of `t` on the step grid `k * h`: the node index and the remainder.
fn locate(t: f64, h: f64) -> (usize, f64) {
    let x = t / h;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        (r as usize, 0.0)
    } else {
        let k = x.floor();
        (k as usize, t - k * h)
    }
}

/// Classical RK4 on the fixed grid `0, h, 2h, ...`. A requested time between
/// grid nodes is reached by one partial step from the preceding node, so each
/// sampled state depends only on its own time and not on the other requests.
///
/// Returns one state per entry of `times`; `times[0]` must be 0.
pub fn integrate_on_tape(
    tape: &mut Tape,
    field: &dyn VectorField,
    z0: Var,
    times: &[f64],
    h: f64,
) -> Result<Vec<Var>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidConfig(format!("ode step {h} must be positive")));
    }
    match times.first() {
        Some(t) if *t == 0.0 => {}
        _ => {
            return Err(Error::InvalidConfig(
                "integration times must start at 0".into(),
            ))
        }
    }
    for i in 1..times.len() {
        if !(times[i] > times[i - 1]) || !times[i].is_finite() {
            return Err(Error::NonIncreasingTimes(i));
        }
    }
    let mut out = Vec::with_capacity(times.len());
    let mut node = z0;
    let mut k = 0;
    for &t in times {
        let (target, rest) = locate(t, h);
        while k < target {
            node = rk4_step(tape, field, node, h).map_err(unstable)?;
            k += 1;
        }
        if rest > 0.0 {
            out.push(rk4_step(tape, field, node, rest).map_err(unstable)?);
        } else {
            out.push(node);
        }
    }
    Ok(out)
}

/// Integrates a single code with a field that holds no tape handles.
pub fn integrate(
    field: &dyn VectorField,
    z0: &LatentCode,
    times: &[f64],
    h: f64,
) -> Result<Trajectory> {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::matrix(1, z0.len(), z0.values().to_vec())?);
    let states = integrate_on_tape(&mut tape, field, z, times, h)?;
    Ok(Trajectory {
        times: times.to_vec(),
        codes: states
            .iter()
            .map(|v| LatentCode(tape.value(*v).data().to_vec()))
            .collect(),
    })
}
