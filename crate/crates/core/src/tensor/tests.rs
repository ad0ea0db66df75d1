use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks analytic input gradients of `build` against central differences of
/// the scalar `sum(weights ⊙ output)`.
fn check(inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Var, tol: f64) {
    let store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let eval = |xs: &[Tensor]| -> (Tensor, Vec<Var>, Graph<'_>) {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = xs.iter().map(|x| g.input_with_grad(x.clone())).collect();
        let out = build(&mut g, &vars);
        (g.value(out).clone(), vars, g)
    };
    let (out, _, _) = eval(&inputs);
    let weights = rand_tensor(&mut rng, out.shape());
    let objective = |t: &Tensor| -> f64 {
        t.data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum()
    };

    let mut g = Graph::new(&store);
    let vars: Vec<Var> = inputs.iter().map(|x| g.input_with_grad(x.clone())).collect();
    let out_var = build(&mut g, &vars);
    let grads = g.backward(&[(out_var, weights.clone())]).unwrap();

    let h = 1e-2f32;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).expect("input gradient");
        for i in 0..x.numel() {
            let mut xs = inputs.clone();
            xs[k].data_mut()[i] = x.data()[i] + h;
            let fp = objective(&eval(&xs).0);
            xs[k].data_mut()[i] = x.data()[i] - h;
            let fm = objective(&eval(&xs).0);
            let numeric = (fp - fm) / (2.0 * h as f64);
            let a = analytic.data()[i] as f64;
            assert!(
                (a - numeric).abs() <= tol * (1.0 + numeric.abs()),
                "input {k} elem {i}: analytic {a} numeric {numeric}"
            );
        }
    }
}

#[test]
fn add_sub_scale_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[3, 4]);
    check(
        vec![a, b],
        |g, v| {
            let s = g.add(v[0], v[1]).unwrap();
            let d = g.sub(s, v[1]).unwrap();
            let d = g.sub(d, v[1]).unwrap();
            g.scale(d, -1.5)
        },
        1e-3,
    );
}

#[test]
fn broadcast_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, &[2, 3, 4]);
    let b = rand_tensor(&mut rng, &[1, 3, 1]);
    check(vec![a, b], |g, v| g.add_broadcast(v[0], v[1]).unwrap(), 1e-3);
}

#[test]
fn relu_gradient_away_from_kink() {
    let data = vec![-0.9, -0.4, 0.3, 0.8, 1.2, -1.1];
    check(vec![Tensor::new(&[6], data).unwrap()], |g, v| g.relu(v[0]), 1e-3);
}

#[test]
fn matmul_gradients_all_transpose_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = rand_tensor(&mut rng, if ta { &[2, 4, 3] } else { &[2, 3, 4] });
        let b = rand_tensor(&mut rng, if tb { &[2, 5, 4] } else { &[2, 4, 5] });
        check(vec![a, b], |g, v| g.matmul(v[0], v[1], ta, tb).unwrap(), 2e-3);
    }
}

#[test]
fn matmul_shared_operand_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rand_tensor(&mut rng, &[3, 2, 4]);
    let w = rand_tensor(&mut rng, &[4, 5]);
    check(vec![a, w], |g, v| g.matmul(v[0], v[1], false, false).unwrap(), 2e-3);
    let a = rand_tensor(&mut rng, &[4, 2]);
    let b = rand_tensor(&mut rng, &[3, 4, 5]);
    check(vec![a, b], |g, v| g.matmul(v[0], v[1], true, false).unwrap(), 2e-3);
}

#[test]
fn matmul_matches_naive_product() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.input(Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
    let b = g.input(Tensor::new(&[3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap());
    let c = g.matmul(a, b, false, false).unwrap();
    assert_eq!(g.value(c).data(), &[58., 64., 139., 154.]);
    let ct = g.matmul(b, a, true, true).unwrap();
    assert_eq!(g.value(ct).data(), &[58., 139., 64., 154.]);
}

#[test]
fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (stride, pad) in [(1, 1), (2, 1), (2, 0)] {
        let x = rand_tensor(&mut rng, &[2, 2, 5, 6]);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = rand_tensor(&mut rng, &[3]);
        let spec = Conv2dSpec { stride, padding: pad };
        check(
            vec![x, w, b],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), spec).unwrap(),
            2e-3,
        );
    }
}

#[test]
fn conv_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[1, 2, 4, 4]);
    let w = rand_tensor(&mut rng, &[2, 2, 3, 3]);
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let xv = g.input(x.clone());
    let wv = g.input(w.clone());
    let spec = Conv2dSpec { stride: 2, padding: 1 };
    let y = g.conv2d(xv, wv, None, spec).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 2, 2]);
    let at = |c: usize, i: isize, j: isize| -> f32 {
        if (0..4).contains(&i) && (0..4).contains(&j) {
            x.data()[c * 16 + i as usize * 4 + j as usize]
        } else {
            0.0
        }
    };
    for co in 0..2 {
        for oy in 0..2 {
            for ox in 0..2 {
                let mut s = 0.0;
                for c in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wv = w.data()[((co * 2 + c) * 3 + ky) * 3 + kx];
                            s += wv * at(c, (oy * 2 + ky) as isize - 1, (ox * 2 + kx) as isize - 1);
                        }
                    }
                }
                let got = g.value(y).data()[(co * 2 + oy) * 2 + ox];
                assert!((got - s).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn reduction_and_softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = rand_tensor(&mut rng, &[3, 5]);
    check(vec![a.clone()], |g, v| g.mean_last(v[0]).unwrap(), 1e-3);
    check(vec![a], |g, v| g.softmax_last(v[0]), 2e-3);
}

#[test]
fn softmax_rows_sum_to_one() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::new(&[2, 3], vec![1000., 1001., 1002., -5., 0., 5.]).unwrap());
    let y = g.softmax_last(x);
    for row in g.value(y).data().chunks(3) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[3, 6]);
    let gamma = rand_tensor(&mut rng, &[6]);
    let beta = rand_tensor(&mut rng, &[6]);
    check(
        vec![x, gamma, beta],
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap(),
        5e-3,
    );
}

#[test]
fn shape_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = rand_tensor(&mut rng, &[2, 3, 4]);
    let b = rand_tensor(&mut rng, &[2, 3, 2]);
    check(
        vec![a, b],
        |g, v| {
            let c = g.concat_last(&[v[0], v[1]]).unwrap();
            let p = g.permute(c, &[2, 0, 1]).unwrap();
            g.reshape(p, &[6, 6]).unwrap()
        },
        1e-3,
    );
}

#[test]
fn permute_moves_axes() {
    let t = Tensor::new(&[2, 3], vec![0., 1., 2., 3., 4., 5.]).unwrap();
    let p = graph::permute(&t, &[1, 0]).unwrap();
    assert_eq!(p.shape(), &[3, 2]);
    assert_eq!(p.data(), &[0., 3., 1., 4., 2., 5.]);
    assert!(graph::permute(&t, &[0, 0]).is_err());
}

#[test]
fn shape_errors_are_reported() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 4]));
    assert!(g.add(a, b).is_err());
    assert!(g.matmul(a, b, false, false).is_err());
    assert!(g.matmul(a, b, true, false).is_ok());
    assert!(g.concat_last(&[]).is_err());
}

#[test]
fn frozen_parameters_get_no_gradient_and_stay_put() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::full(&[2, 2], 1.0), true);
    let f = store.add("f", Tensor::full(&[2, 2], 1.0), false);
    let grads = {
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::full(&[1, 2], 1.0));
        let wv = g.param(w);
        let fv = g.param(f);
        let y = g.matmul(x, wv, false, false).unwrap();
        let y = g.matmul(y, fv, false, false).unwrap();
        g.backward(&[(y, Tensor::full(&[1, 2], 1.0))]).unwrap()
    };
    assert!(grads.param(f).is_none());
    assert_eq!(grads.param(w).unwrap().data(), &[2., 2., 2., 2.]);
    let mut opt = SgdMomentum::new(0.5, 0.9);
    opt.step(&mut store, &grads).unwrap();
    assert_eq!(store.get(w).data(), &[0., 0., 0., 0.]);
    assert_eq!(store.get(f).data(), &[1., 1., 1., 1.]);
    opt.step(&mut store, &grads).unwrap();
    // velocity = 0.9·2 + 2 = 3.8
    assert!((store.get(w).data()[0] - (0.0 - 0.5 * 3.8)).abs() < 1e-6);
}
