//! Value-level checks against naive reference loops.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorlab::{kernels, Graph};

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for t in 0..k {
                c[i * n + j] += a[i * k + t] * b[t * n + j];
            }
        }
    }
    c
}

fn naive_conv(x: &[f64], w: &[f64], b: &[f64], t_len: usize, d_in: usize, d_out: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let mut y = vec![0.0; t_len * d_out];
    for t in 0..t_len {
        for o in 0..d_out {
            let mut acc = b[o];
            for j in 0..k {
                let s = t as isize + j as isize - pad;
                if s < 0 || s >= t_len as isize {
                    continue;
                }
                for c in 0..d_in {
                    acc += x[s as usize * d_in + c] * w[(j * d_in + c) * d_out + o];
                }
            }
            y[t * d_out + o] = acc;
        }
    }
    y
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (a, b) = (random(&mut rng, 20), random(&mut rng, 12));
    let mut g = Graph::new();
    let av = g.constant([5, 4], a.clone()).unwrap();
    let bv = g.constant([4, 3], b.clone()).unwrap();
    let c = g.matmul(av, bv).unwrap();
    for (x, y) in g.value(c).iter().zip(naive_matmul(&a, &b, 5, 4, 3)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn matmul_is_associative() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let (a, b, c) = (random(&mut rng, 12), random(&mut rng, 20), random(&mut rng, 10));
        let mut g = Graph::new();
        let av = g.constant([3, 4], a).unwrap();
        let bv = g.constant([4, 5], b).unwrap();
        let cv = g.constant([5, 2], c).unwrap();
        let ab = g.matmul(av, bv).unwrap();
        let left = g.matmul(ab, cv).unwrap();
        let bc = g.matmul(bv, cv).unwrap();
        let right = g.matmul(av, bc).unwrap();
        for (x, y) in g.value(left).iter().zip(g.value(right)) {
            assert!((x - y).abs() < 1e-8);
        }
    }
}

#[test]
fn conv_matches_explicit_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (t_len, d_in, d_out, k) = (7, 3, 2, 3);
    let x = random(&mut rng, t_len * d_in);
    let w = random(&mut rng, k * d_in * d_out);
    let b = random(&mut rng, d_out);
    let mut g = Graph::new();
    let xv = g.constant([t_len, d_in], x.clone()).unwrap();
    let wv = g.constant([k, d_in, d_out], w.clone()).unwrap();
    let bv = g.constant([d_out], b.clone()).unwrap();
    let y = g.conv1d(xv, wv, bv).unwrap();
    for (p, q) in g.value(y).iter().zip(naive_conv(&x, &w, &b, t_len, d_in, d_out, k)) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn conv_identity_kernel_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(&mut rng, 6 * 3);
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let mut g = Graph::new();
    let xv = g.constant([6, 3], x.clone()).unwrap();
    let wv = g.constant([1, 3, 3], eye).unwrap();
    let bv = g.constant([3], vec![0.0; 3]).unwrap();
    let y = g.conv1d(xv, wv, bv).unwrap();
    assert_eq!(g.value(y), x.as_slice());
}

#[test]
fn layer_norm_rows_have_bias_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = random(&mut rng, 24);
    let gain = random(&mut rng, 8);
    let mut g = Graph::new();
    let xv = g.constant([3, 8], x.clone()).unwrap();
    let gv = g.constant([8], vec![1.0; 8]).unwrap();
    let bv = g.constant([8], vec![0.25; 8]).unwrap();
    let y = g.layer_norm(xv, gv, bv, 1e-12).unwrap();
    for row in g.value(y).chunks(8) {
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!((mean - 0.25).abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-8);
    }
    // unit gain is irrelevant to the mean when the bias is constant
    let gv2 = g.constant([8], gain).unwrap();
    let y2 = g.layer_norm(xv, gv2, bv, 1e-5).unwrap();
    let _ = g.value(y2);
}

#[test]
fn layer_norm_degenerate_inputs() {
    let mut g = Graph::new();
    let x = g.constant([1, 4], vec![3.0; 4]).unwrap();
    let gain = g.constant([4], vec![1.0; 4]).unwrap();
    let bias = g.constant([4], vec![0.0; 4]).unwrap();
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    assert_eq!(g.value(y), &[0.0; 4]);
    let gain2 = g.constant([2], vec![1.0; 2]).unwrap();
    let bias2 = g.constant([2], vec![0.0; 2]).unwrap();
    let x2 = g.constant([1, 2], vec![1.0, -1.0]).unwrap();
    let y2 = g.layer_norm(x2, gain2, bias2, 1e-15).unwrap();
    for (a, b) in g.value(y2).iter().zip([1.0f64, -1.0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn softmax_uniform_row() {
    let p = kernels::softmax(&[0.0f64; 3]).unwrap();
    for v in p {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(row in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        let p = kernels::softmax(&row).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn softmax_shift_invariant(row in prop::collection::vec(-10.0f64..10.0, 1..12), c in -50.0f64..50.0) {
        let p = kernels::softmax(&row).unwrap();
        let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
        let q = kernels::softmax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
