//! Finite-difference checks for every graph operation on random small shapes.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulcast::tensor::{gradient_check, Activation, Graph, Tensor, TensorError, Var};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for kinked activations.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

/// Reduces `y` to a scalar through a fixed random projection so every output
/// component contributes a distinct weight.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = rand_tensor(&mut rng, g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check(
    seed: u64,
    mut params: Vec<Tensor>,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
) -> Result<(), TestCaseError> {
    let err = gradient_check(|g, p| { let y = f(g, p)?; project(g, y, seed) }, &mut params, EPS)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(err < TOL, "max relative error {err}");
    Ok(())
}

fn cfg() -> ProptestConfig {
    ProptestConfig { cases: 24, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn add_and_broadcast(seed in any::<u64>(), b in 1usize..4, n in 1usize..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ps = vec![rand_tensor(&mut r, &[b, n]), rand_tensor(&mut r, &[n]), rand_tensor(&mut r, &[b, n])];
        check(seed, ps, |g, p| { let a = g.add(p[0], p[1])?; g.add(a, p[2]) })?;
    }

    #[test]
    fn sub_mul_scale(seed in any::<u64>(), b in 1usize..4, n in 1usize..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ps = vec![rand_tensor(&mut r, &[b, n]), rand_tensor(&mut r, &[b, n]), rand_tensor(&mut r, &[n])];
        check(seed, ps, |g, p| {
            let d = g.sub(p[0], p[1])?;
            let m = g.mul(d, p[0])?;
            let m = g.mul(m, p[2])?;
            g.scale(m, -1.7)
        })?;
    }

    #[test]
    fn matmul_and_bias(seed in any::<u64>(), b in 1usize..4, i in 1usize..5, o in 1usize..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ps = vec![rand_tensor(&mut r, &[b, i]), rand_tensor(&mut r, &[i, o]), rand_tensor(&mut r, &[o])];
        check(seed, ps.clone(), |g, p| g.matmul_bias(p[0], p[1], p[2]))?;
        check(seed, ps, |g, p| g.matmul(p[0], p[1]))?;
    }

    #[test]
    fn conv1d_with_bias(seed in any::<u64>(), b in 1usize..3, ci in 1usize..3, co in 1usize..4,
                        l in 3usize..7, half_k in 0usize..2, pad in 0usize..2) {
        let k = 2 * half_k + 1;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ps = vec![rand_tensor(&mut r, &[b, ci, l]), rand_tensor(&mut r, &[co, ci, k]), rand_tensor(&mut r, &[co])];
        check(seed, ps, move |g, p| { let y = g.conv1d(p[0], p[1], pad)?; g.add_channel_bias(y, p[2]) })?;
    }

    #[test]
    fn smooth_activations(seed in any::<u64>(), n in 1usize..8) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for act in [Activation::Sigmoid, Activation::Tanh, Activation::Gelu] {
            let mut x = rand_tensor(&mut r, &[n]);
            for v in x.data_mut() { *v *= 3.0; }
            check(seed, vec![x], move |g, p| g.activation(p[0], act))?;
        }
    }

    #[test]
    fn relu(seed in any::<u64>(), n in 1usize..8) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        check(seed, vec![rand_away_from_zero(&mut r, &[n])], |g, p| g.relu(p[0]))?;
    }

    #[test]
    fn attention(seed in any::<u64>(), b in 1usize..3, h in 1usize..3, t in 1usize..5, d in 1usize..4) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let shape = [b, h, t, d];
        let ps = vec![rand_tensor(&mut r, &shape), rand_tensor(&mut r, &shape), rand_tensor(&mut r, &shape)];
        check(seed, ps, |g, p| g.softmax_attention(p[0], p[1], p[2]))?;
    }

    #[test]
    fn layer_norm(seed in any::<u64>(), rows in 1usize..4, d in 2usize..6) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ps = vec![rand_tensor(&mut r, &[rows, d]), rand_tensor(&mut r, &[d]), rand_tensor(&mut r, &[d])];
        check(seed, ps, |g, p| g.layer_norm(p[0], p[1], p[2], 1e-5))?;
    }

    #[test]
    fn shape_ops(seed in any::<u64>(), a in 1usize..4, b in 2usize..4, c in 1usize..4) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ps = vec![rand_tensor(&mut r, &[a, b, c])];
        check(seed, ps.clone(), move |g, p| g.reshape(p[0], &[a * b, c]))?;
        check(seed, ps.clone(), |g, p| g.permute(p[0], &[2, 0, 1]))?;
        check(seed, ps.clone(), move |g, p| g.narrow(p[0], 1, 1, b - 1))?;
        check(seed, ps.clone(), |g, p| g.mean_axis(p[0], 1))?;
        check(seed, ps, |g, p| g.sum(p[0]))?;
    }

    #[test]
    fn mse(seed in any::<u64>(), n in 1usize..6) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ps = vec![rand_tensor(&mut r, &[n]), rand_tensor(&mut r, &[n])];
        let mut ps2 = ps.clone();
        let err = gradient_check(|g, p| g.mse_loss(p[0], p[1]), &mut ps2, EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), t in 1usize..6, d in 1usize..4, scale in 0.1f64..20.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut q = rand_tensor(&mut r, &[1, 2, t, d]);
        for v in q.data_mut() { *v *= scale; }
        let k = rand_tensor(&mut r, &[1, 2, t, d]);
        let v = rand_tensor(&mut r, &[1, 2, t, d]);
        let mut g = Graph::new();
        let (q, k, v) = (g.constant(q), g.constant(k), g.constant(v));
        let y = g.softmax_attention(q, k, v).unwrap();
        for row in g.attention_weights(y).unwrap().chunks(t) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
