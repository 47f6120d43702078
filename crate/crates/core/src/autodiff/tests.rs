use std::sync::Arc;

use super::*;
use crate::rng::Rng;

fn t(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn random(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::uniform(rows, cols, -1.0, 1.0, rng)
}

fn idx(v: &[usize]) -> Arc<[usize]> {
    Arc::from(v)
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let i2 = tape.constant(&Tensor::identity(2));
    let m = tape.constant(&t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let out = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(out), &t(&[&[1.0, 2.0], &[3.0, 4.0]]));

    let a = tape.constant(&t(&[&[1.0, 2.0]]));
    let b = tape.constant(&t(&[&[3.0], &[4.0]]));
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(&Tensor::zeros(2, 3));
    let b = tape.constant(&Tensor::zeros(2, 3));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("(2, 3)"), "{msg}");
    assert!(matches!(err, Error::Dimension { .. }));
}

#[test]
fn matmul_gradient() {
    let mut rng = Rng::new(11);
    let (a, b) = (random(5, 7, &mut rng), random(7, 3, &mut rng));
    let rep = grad_check_many(|tp, v| tp.matmul(v[0], v[1]), &[a, b], 1e-5).unwrap();
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn linear_matches_matmul_with_transpose() {
    let mut rng = Rng::new(5);
    let x = random(4, 6, &mut rng);
    let w = random(3, 6, &mut rng);
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(&x), tape.constant(&w));
    let y = tape.linear(xv, wv).unwrap();
    let expect = x.matmul(&w.transpose()).unwrap();
    assert!(tape.value(y).max_abs_diff(&expect) < 1e-14);

    let rep = grad_check_many(|tp, v| tp.linear(v[0], v[1]), &[x, w], 1e-5).unwrap();
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(&t(&[&[1.0, 2.0]]));
    let z = tape.constant(&t(&[&[0.0, 0.0]]));
    let b = tape.constant(&t(&[&[3.0, 4.0]]));
    let h = tape.hadamard(a, z).unwrap();
    assert_eq!(tape.value(h).data(), &[0.0, 0.0]);
    let s = tape.add(a, b).unwrap();
    assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
    let c = tape.scale(a, -2.0);
    assert_eq!(tape.value(c).data(), &[-2.0, -4.0]);
    let wide = tape.constant(&Tensor::zeros(1, 3));
    assert!(tape.add(a, wide).is_err());
    assert!(tape.hadamard(a, wide).is_err());
}

#[test]
fn hadamard_and_bias_gradients() {
    let mut rng = Rng::new(2);
    let (a, b) = (random(4, 4, &mut rng), random(4, 4, &mut rng));
    let rep = grad_check_many(|tp, v| tp.hadamard(v[0], v[1]), &[a.clone(), b], 1e-5).unwrap();
    assert!(rep.passed, "{rep:?}");

    let bias = random(1, 4, &mut rng);
    let rep = grad_check_many(
        |tp, v| {
            let y = tp.add_row(v[0], v[1])?;
            tp.hadamard(y, y)
        },
        &[a, bias],
        1e-5,
    )
    .unwrap();
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn activation_examples() {
    let mut tape = Tape::new();
    let z = tape.constant(&t(&[&[0.0]]));
    let y = tape.tanh(z);
    assert_eq!(tape.value(y).data(), &[0.0]);
    let a = tape.constant(&t(&[&[-3.0, 2.0]]));
    let r = tape.relu(a);
    assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
    let l = tape.activation(a, Activation::LeakyRelu(0.2));
    assert!((tape.value(l).data()[0] + 0.6).abs() < 1e-15);
}

#[test]
fn tanh_gradient() {
    let mut rng = Rng::new(3);
    let x = random(3, 4, &mut rng);
    let rep = grad_check(|tp, v| Ok(tp.tanh(v)), &x, 1e-6).unwrap();
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(&t(&[&[1.0, 1.0, 1.0]]));
    let g = tape.constant(&Tensor::ones(1, 3));
    let b = tape.constant(&Tensor::zeros(1, 3));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);

    let x = tape.constant(&t(&[&[-1.0, 1.0]]));
    let g = tape.constant(&Tensor::ones(1, 2));
    let b = tape.constant(&Tensor::zeros(1, 2));
    let y = tape.layer_norm(x, g, b, 1e-300).unwrap();
    assert!(tape.value(y).max_abs_diff(&t(&[&[-1.0, 1.0]])) < 1e-12);
    assert!(tape.layer_norm(x, g, b, 0.0).is_err());
}

#[test]
fn layer_norm_gradient() {
    let mut rng = Rng::new(4);
    let x = random(3, 5, &mut rng);
    let g = Tensor::uniform(1, 5, 0.5, 1.5, &mut rng);
    let b = random(1, 5, &mut rng);
    let c = random(3, 5, &mut rng);
    let rep = grad_check_many(
        |tp, v| {
            let y = tp.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let c = tp.constant(&c);
            tp.hadamard(y, c)
        },
        &[x.clone(), g, b],
        1e-4,
    )
    .unwrap();
    assert!(rep.passed, "{rep:?}");

    // plain sum with unit affine has a zero gradient; both sides must agree
    let rep = grad_check(
        |tp, v| {
            let g = tp.constant(&Tensor::ones(1, 5));
            let b = tp.constant(&Tensor::zeros(1, 5));
            tp.layer_norm(v, g, b, 1e-5)
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn gather_examples() {
    let mut tape = Tape::new();
    let a = tape.leaf(&t(&[&[1.0], &[2.0], &[3.0]]).with_grad());
    let g = tape.gather_rows(a, idx(&[2, 0])).unwrap();
    assert_eq!(tape.value(g).data(), &[3.0, 1.0]);
    let e = tape.gather_rows(a, idx(&[])).unwrap();
    assert_eq!(tape.shape(e), (0, 1));
    assert!(matches!(
        tape.gather_rows(a, idx(&[3])),
        Err(Error::Index { index: 3, .. })
    ));

    let dup = tape.gather_rows(a, idx(&[1, 1])).unwrap();
    let w = tape.constant(&t(&[&[2.0], &[5.0]]));
    let y = tape.hadamard(dup, w).unwrap();
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[0.0, 7.0, 0.0]);
}

#[test]
fn scatter_examples() {
    let mut tape = Tape::new();
    let s = tape.constant(&t(&[&[1.0], &[2.0]]));
    let out = tape.scatter_add_rows(s, idx(&[0, 0]), 2).unwrap();
    assert_eq!(tape.value(out).data(), &[3.0, 0.0]);
    assert!(tape.scatter_add_rows(s, idx(&[0, 2]), 2).is_err());
}

#[test]
fn scatter_matches_naive_loop() {
    let mut rng = Rng::new(9);
    let src = random(20, 3, &mut rng);
    let ids: Vec<usize> = (0..20).map(|_| rng.below(5)).collect();
    let mut naive = Tensor::zeros(5, 3);
    for j in 0..5 {
        for i in 0..20 {
            if ids[i] == j {
                for c in 0..3 {
                    naive.set(j, c, naive.get(j, c) + src.get(i, c));
                }
            }
        }
    }
    let mut tape = Tape::new();
    let s = tape.constant(&src);
    let out = tape.scatter_add_rows(s, idx(&ids), 5).unwrap();
    assert_eq!(tape.value(out), &naive);

    // permuting the (row, index) pairs leaves the sums unchanged
    let mut perm: Vec<usize> = (0..20).collect();
    rng.shuffle(&mut perm);
    let src_p = src.select_rows(&perm);
    let ids_p: Vec<usize> = perm.iter().map(|&p| ids[p]).collect();
    let s = tape.constant(&src_p);
    let out_p = tape.scatter_add_rows(s, idx(&ids_p), 5).unwrap();
    assert!(tape.value(out_p).max_abs_diff(&naive) < 1e-12);
}

#[test]
fn row_scaling_and_segment_softmax_gradients() {
    let mut rng = Rng::new(12);
    let a = random(6, 3, &mut rng);
    let s = random(6, 1, &mut rng);
    let seg = idx(&[0, 0, 1, 2, 2, 2]);
    let c = random(6, 3, &mut rng);
    let rep = grad_check_many(
        |tp, v| {
            let alpha = tp.segment_softmax(v[1], seg.clone(), 3)?;
            let y = tp.scale_rows(v[0], alpha)?;
            let c = tp.constant(&c);
            tp.hadamard(y, c)
        },
        &[a.clone(), s.clone()],
        1e-5,
    )
    .unwrap();
    assert!(rep.passed, "{rep:?}");

    let mut tape = Tape::new();
    let sv = tape.constant(&s);
    let alpha = tape.segment_softmax(sv, seg.clone(), 3).unwrap();
    let al = tape.value(alpha).data();
    assert!((al[0] + al[1] - 1.0).abs() < 1e-12);
    assert_eq!(al[2], 1.0);
    assert!((al[3] + al[4] + al[5] - 1.0).abs() < 1e-12);

    let norm: Arc<[f64]> = Arc::from(vec![0.5, 1.0, 2.0, 0.1, 0.2, 0.3]);
    let rep = grad_check(|tp, v| tp.scale_rows_const(v, norm.clone()), &a, 1e-5).unwrap();
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let z = tape.constant(&Tensor::zeros(3, 4));
    let labels = idx(&[0, 1, 3]);
    let loss = tape
        .softmax_cross_entropy(z, labels.clone(), idx(&[0, 1, 2]))
        .unwrap();
    assert!((tape.value(loss).data()[0] - 4f64.ln()).abs() < 1e-12);

    let z = tape.constant(&t(&[&[10.0, -10.0]]));
    let loss = tape.softmax_cross_entropy(z, idx(&[0]), idx(&[0])).unwrap();
    assert!(tape.value(loss).data()[0] < 1e-4);

    assert!(matches!(
        tape.softmax_cross_entropy(z, idx(&[0]), idx(&[])),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = Rng::new(6);
    let z = Tensor::uniform(5, 3, -3.0, 3.0, &mut rng);
    let labels = idx(&[0, 2, 1, 1, 0]);
    let mask = idx(&[0, 2, 3]);
    let rep = grad_check(
        |tp, v| tp.softmax_cross_entropy(v, labels.clone(), mask.clone()),
        &z,
        1e-5,
    )
    .unwrap();
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn backward_examples_and_accumulation() {
    let w = t(&[&[1.0, -2.0], &[3.0, 0.5]]).with_grad();
    let mut tape = Tape::new();
    let v = tape.leaf(&w);
    let loss = tape.sum(v);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(v).unwrap(), &[1.0; 4]);

    let mut tape = Tape::new();
    let v = tape.leaf(&w);
    let sq = tape.hadamard(v, v).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    let expect: Vec<f64> = w.data().iter().map(|x| 2.0 * x).collect();
    assert_eq!(tape.grad(v).unwrap(), expect.as_slice());

    // a second pass without zeroing accumulates
    tape.backward(loss).unwrap();
    let twice: Vec<f64> = expect.iter().map(|x| 2.0 * x).collect();
    assert_eq!(tape.grad(v).unwrap(), twice.as_slice());

    let mut target = w.clone();
    tape.accumulate_into(v, &mut target);
    assert_eq!(target.grad().unwrap(), twice.as_slice());

    assert!(tape.backward(sq).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(&Tensor::ones(2, 2));
    let w = tape.leaf(&Tensor::ones(2, 2).with_grad());
    let y = tape.hadamard(c, w).unwrap();
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();
    assert!(tape.grad(c).is_none());
    assert!(tape.grad(w).is_some());
}

#[test]
fn grad_check_constant_function() {
    let x = Tensor::ones(2, 2);
    let rep = grad_check(
        |tp, _| Ok(tp.constant(&Tensor::filled(1, 1, 3.0))),
        &x,
        1e-12,
    )
    .unwrap();
    assert!(rep.passed);
    assert_eq!(rep.max_rel_err, 0.0);
}

#[test]
fn grad_check_flags_wrong_gradient() {
    // relu probed exactly at its kink: one-sided analytic vs symmetric numeric
    let x = t(&[&[0.0, 1.0]]);
    let rep = grad_check(|tp, v| Ok(tp.relu(v)), &x, 1e-6).unwrap();
    assert!(!rep.passed);
    assert_eq!(rep.worst, Some((0, 0)));
}
