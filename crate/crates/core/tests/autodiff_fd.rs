//! Backward rules against central finite differences.

use otflow_core::autodiff::{Tape, Tensor, Var};
use otflow_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

/// Builds a scalar from the inputs; the first `inputs.len()` leaves are the inputs.
type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

fn eval(inputs: &[Tensor], build: Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let root = build(&mut tape, &vars).unwrap();
    tape.value(root).item()
}

/// Max over coordinates of |analytic - fd| / max(|fd|, 1).
fn fd_error(inputs: &[Tensor], build: Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let root = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(root).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let g = grads.get(*v).unwrap();
        for i in 0..inputs[k].len() {
            let shifted = |d: f64| {
                let mut xs = inputs.to_vec();
                xs[k].data_mut()[i] += d;
                eval(&xs, build)
            };
            let fd = (shifted(H) - shifted(-H)) / (2.0 * H);
            worst = worst.max((g[i] - fd).abs() / fd.abs().max(1.0));
        }
    }
    worst
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // Keep entries away from the relu kink.
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.5);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts an arbitrary tensor to a scalar with a non-trivial weighting.
fn contract(t: &mut Tape, x: Var) -> Result<Var> {
    let n = t.value(x).len();
    let w: Vec<f64> = (0..n).map(|i| 0.5 + ((i * 7) % 5) as f64 * 0.3).collect();
    let w = t.constant(Tensor::new(t.shape(x).to_vec(), w)?);
    let p = t.mul(x, w)?;
    t.sum(p)
}

fn check(shapes: &[&[usize]], build: Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
        let err = fd_error(&inputs, build);
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn add_sub_mul() {
    check(&[&[3, 4], &[3, 4]], |t, v| {
        let a = t.add(v[0], v[1])?;
        let b = t.sub(a, v[1])?;
        let c = t.sub(v[0], v[1])?;
        let d = t.mul(b, c)?;
        contract(t, d)
    });
}

#[test]
fn mul_scalar_and_square() {
    check(&[&[5]], |t, v| {
        let a = t.mul_scalar(v[0], -1.7)?;
        let b = t.square(a)?;
        contract(t, b)
    });
}

#[test]
fn matmul() {
    check(&[&[3, 4], &[4, 2]], |t, v| {
        let c = t.matmul(v[0], v[1])?;
        contract(t, c)
    });
}

#[test]
fn bias_add() {
    check(&[&[3, 4], &[4]], |t, v| {
        let c = t.add_bias(v[0], v[1])?;
        contract(t, c)
    });
}

#[test]
fn activations() {
    check(&[&[2, 5]], |t, v| {
        let a = t.relu(v[0])?;
        contract(t, a)
    });
    check(&[&[2, 5]], |t, v| {
        let a = t.softplus(v[0])?;
        contract(t, a)
    });
    check(&[&[2, 5]], |t, v| {
        let a = t.tanh(v[0])?;
        contract(t, a)
    });
}

#[test]
fn reductions() {
    check(&[&[2, 3]], |t, v| {
        let s = t.sum(v[0])?;
        t.square(s)
    });
    check(&[&[2, 3]], |t, v| {
        let s = t.mean(v[0])?;
        t.square(s)
    });
    check(&[&[2, 3]], |t, v| {
        let s = t.l2_norm(v[0])?;
        t.mul_scalar(s, 3.0)
    });
    check(&[&[3, 4]], |t, v| {
        let r = t.row_sums(v[0])?;
        let q = t.square(r)?;
        contract(t, q)
    });
}

#[test]
fn structural_ops() {
    check(&[&[2, 3], &[1, 3]], |t, v| {
        let c = t.concat(&[v[0], v[1], v[0]])?;
        let s = t.slice(c, 1, 4)?;
        let r = t.reshape(s, &[9])?;
        let q = t.square(r)?;
        contract(t, q)
    });
    check(&[&[3, 4], &[3, 1]], |t, v| {
        let c = t.mul_col(v[0], v[1])?;
        contract(t, c)
    });
}

#[test]
fn three_layer_mlp() {
    check(
        &[&[2, 6], &[6, 8], &[8], &[8, 5], &[5], &[5, 1], &[1]],
        |t, v| {
            let h1 = t.matmul(v[0], v[1])?;
            let h1 = t.add_bias(h1, v[2])?;
            let h1 = t.tanh(h1)?;
            let h2 = t.matmul(h1, v[3])?;
            let h2 = t.add_bias(h2, v[4])?;
            let h2 = t.softplus(h2)?;
            let o = t.matmul(h2, v[5])?;
            let o = t.add_bias(o, v[6])?;
            let o = t.square(o)?;
            t.sum(o)
        },
    );
}

fn mlp_loss(inputs: &[Tensor]) -> (f64, Vec<Vec<f64>>) {
    let mut t = Tape::new();
    let v: Vec<Var> = inputs
        .iter()
        .map(|x| t.leaf(x.clone().with_requires_grad(true)))
        .collect();
    let h = t.matmul(v[0], v[1]).unwrap();
    let h = t.tanh(h).unwrap();
    let o = t.l2_norm(h).unwrap();
    let g = t.backward(o).unwrap();
    (t.value(o).item(), v.iter().map(|x| g.get(*x).unwrap().to_vec()).collect())
}

#[test]
fn replay_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![random(&mut rng, &[4, 6]), random(&mut rng, &[6, 3])];
    let (a, ga) = mlp_loss(&inputs);
    let (b, gb) = mlp_loss(&inputs);
    assert_eq!(a.to_bits(), b.to_bits());
    for (x, y) in ga.iter().flatten().zip(gb.iter().flatten()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradient_of_sum_is_sum_of_gradients(
        xs in proptest::collection::vec(-3.0f64..3.0, 6),
    ) {
        let x = Tensor::new(vec![6], xs).unwrap().with_requires_grad(true);
        let grad = |which: u8| {
            let mut t = Tape::new();
            let v = t.leaf(x.clone());
            let a = t.tanh(v).unwrap();
            let a = t.sum(a).unwrap();
            let b = t.square(v).unwrap();
            let b = t.mean(b).unwrap();
            let root = match which {
                0 => a,
                1 => b,
                _ => t.add(a, b).unwrap(),
            };
            t.backward(root).unwrap().take(v).unwrap()
        };
        let (ga, gb, gab) = (grad(0), grad(1), grad(2));
        for i in 0..6 {
            prop_assert_eq!(gab[i], ga[i] + gb[i]);
        }
    }
}
