//! Every differentiable op against central finite differences at 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorlab::numeric::{central_difference, relative_error};
use tensorlab::{Graph, Result, Var};

const PROBES: usize = 100;
const TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;
// below this magnitude central differences are dominated by rounding
const FLOOR: f64 = 1e-5;

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// Projects the op output onto fixed random weights so every output element
/// contributes to the scalar being differentiated.
fn probe(rng: &mut ChaCha8Rng, shapes: &[Vec<usize>], positive: bool, build: &Build) {
    let inputs: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| {
            (0..s.iter().product::<usize>())
                .map(|_| {
                    if positive {
                        rng.random_range(0.2..2.0)
                    } else {
                        rng.random_range(-1.5..1.5)
                    }
                })
                .collect()
        })
        .collect();
    let eval = |vals: &[Vec<f64>], weights: Option<&[f64]>| -> (f64, Vec<usize>, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = shapes
            .iter()
            .zip(vals)
            .map(|(s, v)| g.param(s.clone(), v.clone()).unwrap())
            .collect();
        let out = build(&mut g, &vars).unwrap();
        let shape = g.shape(out).to_vec();
        let n = g.value(out).len();
        let w = match weights {
            Some(w) => w.to_vec(),
            None => (0..n).map(|i| ((i * 7919 % 13) as f64 - 6.0) / 5.0).collect(),
        };
        let wv = g.constant(shape.clone(), w).unwrap();
        let prod = g.mul(out, wv).unwrap();
        let loss = g.sum(prod);
        let value = g.scalar(loss);
        let grads = g.backward(loss).unwrap();
        (value, shape, vars.iter().map(|&v| grads.wrt(v)).collect())
    };
    let (_, _, analytic) = eval(&inputs, None);
    for (idx, grad) in analytic.iter().enumerate() {
        let numeric = central_difference(
            |x| {
                let mut vals = inputs.clone();
                vals[idx] = x.to_vec();
                eval(&vals, None).0
            },
            &inputs[idx],
            STEP,
        );
        for (a, n) in grad.iter().zip(&numeric) {
            let err = relative_error(*a, *n, FLOOR);
            assert!(err <= TOL, "input {idx}: analytic {a} vs numeric {n} (rel {err})");
        }
    }
}

fn run(seed: u64, shapes: &[Vec<usize>], positive: bool, build: &Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..PROBES {
        probe(&mut rng, shapes, positive, build);
    }
}

#[test]
fn matmul() {
    run(1, &[vec![3, 4], vec![4, 2]], false, &|g, v| g.matmul(v[0], v[1]));
}

#[test]
fn bmm_plain_and_transposed() {
    run(2, &[vec![2, 3, 4], vec![2, 4, 5]], false, &|g, v| g.bmm(v[0], v[1], false));
    run(3, &[vec![2, 3, 4], vec![2, 5, 4]], false, &|g, v| g.bmm(v[0], v[1], true));
}

#[test]
fn elementwise_binary() {
    run(4, &[vec![2, 3], vec![2, 3]], false, &|g, v| g.add(v[0], v[1]));
    run(5, &[vec![2, 3], vec![2, 3]], false, &|g, v| g.sub(v[0], v[1]));
    run(6, &[vec![2, 3], vec![2, 3]], false, &|g, v| g.mul(v[0], v[1]));
    run(7, &[vec![2, 3], vec![2, 3]], true, &|g, v| g.div(v[0], v[1]));
}

#[test]
fn broadcast_and_constants() {
    run(8, &[vec![3, 4], vec![4]], false, &|g, v| g.add_bias(v[0], v[1]));
    run(9, &[vec![2, 3]], false, &|g, v| g.mul_const(v[0], vec![1.0, 0.0, -2.0, 0.5, 3.0, 1.0]));
    run(10, &[vec![2, 3]], false, &|g, v| Ok(g.scale(v[0], -1.7)));
    run(11, &[vec![2, 3]], false, &|g, v| Ok(g.add_scalar(v[0], 0.3)));
}

#[test]
fn unary() {
    run(12, &[vec![7]], false, &|g, v| Ok(g.relu(v[0])));
    run(13, &[vec![7]], true, &|g, v| Ok(g.log(v[0])));
    run(14, &[vec![7]], true, &|g, v| Ok(g.sqrt(v[0])));
    run(15, &[vec![7]], false, &|g, v| Ok(g.powi(v[0], 3)));
    run(16, &[vec![7]], false, &|g, v| Ok(g.powi(v[0], 4)));
    run(17, &[vec![7]], false, &|g, v| {
        let x = g.scale(v[0], 2.0);
        Ok(g.smooth_l1(x))
    });
}

#[test]
fn softmax_with_masked_entries() {
    run(18, &[vec![3, 4]], false, &|g, v| g.softmax(v[0]));
    run(19, &[vec![2, 3]], false, &|g, v| {
        let ninf = f64::NEG_INFINITY;
        let masked = g.add_const(v[0], &[0.0, ninf, 0.0, 0.0, 0.0, ninf])?;
        g.softmax(masked)
    });
}

#[test]
fn layer_norm() {
    run(20, &[vec![3, 5], vec![5], vec![5]], false, &|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
}

#[test]
fn shape_ops() {
    run(21, &[vec![2, 3, 4]], false, &|g, v| g.permute(v[0], &[1, 2, 0]));
    run(22, &[vec![2, 3, 2], vec![2, 1, 2]], false, &|g, v| g.concat(&[v[0], v[1]], 1));
    run(23, &[vec![2, 3]], false, &|g, v| g.reshape(v[0], [3, 2]));
    run(24, &[vec![2, 3, 4]], false, &|g, v| g.mean_axis(v[0], 1));
    run(25, &[vec![2, 3, 4]], false, &|g, v| g.sum_axis(v[0], 2));
}

#[test]
fn conv1d() {
    run(26, &[vec![5, 3], vec![3, 3, 2], vec![2]], false, &|g, v| g.conv1d(v[0], v[1], v[2]));
    run(27, &[vec![2, 4, 2], vec![1, 2, 3], vec![3]], false, &|g, v| g.conv1d(v[0], v[1], v[2]));
}

#[test]
fn reductions_to_scalar() {
    run(28, &[vec![6]], false, &|g, v| Ok(g.l2_norm(v[0])));
    run(29, &[vec![2, 3]], false, &|g, v| Ok(g.mean(v[0])));
    run(30, &[vec![3, 4]], false, &|g, v| g.softmax_cross_entropy(v[0], &[0, 3, 1]));
}
