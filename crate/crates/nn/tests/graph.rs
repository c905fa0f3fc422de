use cholec_nn::gradcheck::grad_check;
use cholec_nn::graph::{ConvGeometry, Graph};
use cholec_nn::{NnError, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn sum_of_parameter_has_unit_gradient() {
    let mut p = ParamSet::<f64>::new();
    let id = p.add("w", [3, 4], vec![0.5; 12]);
    let mut g = Graph::new(&p);
    let w = g.param(id);
    let l = g.sum(w);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.grads[0], vec![1.0; 12]);
}

#[test]
fn annihilated_loss_and_unreachable_parameters_get_zeros() {
    let mut p = ParamSet::<f64>::new();
    let a = p.add("a", [2, 2], vec![1.0, -2.0, 3.0, 0.5]);
    p.add("unused", [1, 3], vec![1.0; 3]);
    let mut g = Graph::new(&p);
    let av = g.param(a);
    let t = g.tanh(av);
    let s = g.sum(t);
    let l = g.scale(s, 0.0);
    let grads = g.backward(l).unwrap();
    assert!(grads.grads.iter().flatten().all(|x| *x == 0.0));
}

#[test]
fn backward_rejects_non_scalar() {
    let mut p = ParamSet::<f64>::new();
    let a = p.add("a", [2, 2], vec![0.0; 4]);
    let mut g = Graph::new(&p);
    let av = g.param(a);
    assert!(matches!(g.backward(av), Err(NnError::Contract(_))));
}

#[test]
fn linear_layer_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut p = ParamSet::<f64>::new();
    let w = p.add("w", [5, 3], random(&mut rng, 15));
    let b = p.add("b", [1, 3], random(&mut rng, 3));
    let x = random(&mut rng, 20);
    let c = random(&mut rng, 12);
    let r = grad_check(
        &p,
        |g| {
            let xv = g.input(x.clone(), 4, 5);
            let y = g.linear(xv, w, b);
            let cv = g.input(c.clone(), 4, 3);
            let z = g.mul(y, cv);
            Ok(g.sum(z))
        },
        1e-5,
    )
    .unwrap();
    assert!(r.max_relative_error < 1e-8, "{r:?}");
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut p = ParamSet::<f64>::new();
    let a = p.add("a", [3, 4], random(&mut rng, 12));
    let b = p.add("b", [3, 4], random(&mut rng, 12));
    let r = grad_check(
        &p,
        |g| {
            let av = g.param(a);
            let bv = g.param(b);
            let s = g.sigmoid(av);
            let t = g.tanh(bv);
            let m = g.mul(s, t);
            let e = g.exp(m);
            let d = g.sub(e, av);
            let q = g.square(d);
            let mn = g.minimum(q, bv);
            let cl = g.clamp(mn, -0.5, 0.8);
            let rl = g.relu(av);
            let cat = g.concat_cols(&[cl, rl]);
            let sl = g.slice_cols(cat, 2, 5);
            let rows = g.concat_rows(&[sl, sl]);
            let sr = g.slice_rows(rows, 1, 4);
            let ls = g.log_softmax(sr);
            let pk = g.pick(ls, vec![0, 4, 2, 1]);
            let sc = g.scale_rows(pk, vec![1.0, -2.0, 0.5, 3.0]);
            let m1 = g.mean(sc);
            let abt = g.input(random(&mut ChaCha8Rng::seed_from_u64(3), 12), 4, 3);
            let mm = g.matmul(av, abt);
            let m2 = g.sum(mm);
            let m2s = g.scale(m2, 0.1);
            Ok(g.add(m1, m2s))
        },
        1e-5,
    )
    .unwrap();
    assert!(r.max_relative_error < 1e-6, "{r:?}");
}

#[test]
fn conv_stage_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let geo = ConvGeometry { in_channels: 2, in_height: 8, in_width: 8, out_channels: 3, kernel: 4, stride: 2, pad: 1 };
    assert_eq!((geo.out_height(), geo.out_width()), (4, 4));
    let mut p = ParamSet::<f64>::new();
    let x = p.add("x", [2, geo.in_len()], random(&mut rng, 2 * geo.in_len()));
    let w = p.add("w", [3, 2 * 16], random(&mut rng, 3 * 32));
    let b = p.add("b", [1, 3], random(&mut rng, 3));
    let weights = random(&mut rng, 2 * geo.out_len());
    let r = grad_check(
        &p,
        |g| {
            let xv = g.param(x);
            let y = g.conv2d(xv, w, b, geo);
            let t = g.tanh(y);
            let c = g.input(weights.clone(), 2, geo.out_len());
            let z = g.mul(t, c);
            Ok(g.sum(z))
        },
        1e-5,
    )
    .unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

#[test]
fn conv_matches_direct_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let geo = ConvGeometry { in_channels: 2, in_height: 7, in_width: 6, out_channels: 2, kernel: 3, stride: 2, pad: 1 };
    let xs = random(&mut rng, geo.in_len());
    let ws = random(&mut rng, 2 * 2 * 9);
    let bs = random(&mut rng, 2);
    let mut p = ParamSet::<f64>::new();
    let w = p.add("w", [2, 18], ws.clone());
    let b = p.add("b", [1, 2], bs.clone());
    let mut g = Graph::new(&p);
    let xv = g.input(xs.clone(), 1, geo.in_len());
    let y = g.conv2d(xv, w, b, geo);
    let (oh, ow) = (geo.out_height(), geo.out_width());
    for co in 0..2 {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bs[co];
                for ci in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy >= 0 && ix >= 0 && (iy as usize) < 7 && (ix as usize) < 6 {
                                s += ws[co * 18 + ci * 9 + ky * 3 + kx] * xs[ci * 42 + iy as usize * 6 + ix as usize];
                            }
                        }
                    }
                }
                let got = g.value(y)[co * oh * ow + oy * ow + ox];
                assert!((got - s).abs() < 1e-12);
            }
        }
    }
}
