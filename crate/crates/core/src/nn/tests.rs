use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::math::softplus;

fn mixed_stack(seed: u64) -> NetworkStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![
        DenseLayer::init(3, 6, Activation::Sine { omega0: 5.0 }, true, true, &mut rng),
        DenseLayer::init(6, 5, Activation::Gelu, false, true, &mut rng),
        DenseLayer::init(5, 4, Activation::Tanh, false, false, &mut rng),
        DenseLayer::init(4, 3, Activation::Linear, false, true, &mut rng),
    ];
    // tighten two bounds so the clamp is active on some rows
    for i in [1, 3] {
        let l = &mut layers[i];
        let target = 0.6 * max_row_l1(&l.w);
        l.lipschitz = Some(softplus_inverse(target));
    }
    NetworkStack::new(layers).unwrap()
}

#[test]
fn zero_weight_linear_stack_returns_biases() {
    let l1 = DenseLayer::new(DMatrix::zeros(2, 3), DVector::from_vec(vec![0.5, -1.0]), Activation::Linear, None).unwrap();
    let l2 = DenseLayer::new(DMatrix::zeros(2, 2), DVector::from_vec(vec![0.25, 2.0]), Activation::Linear, None).unwrap();
    let s = NetworkStack::new(vec![l1, l2]).unwrap();
    let y = s.forward(&DMatrix::from_fn(3, 4, |i, j| (i + j) as f64)).unwrap();
    for col in y.column_iter() {
        assert_eq!(col[0], 0.25);
        assert_eq!(col[1], 2.0);
    }
}

#[test]
fn single_sine_layer() {
    let w = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, -0.3, 0.4, -0.5, 0.6]);
    let b = DVector::from_vec(vec![0.05, -0.1]);
    let s = NetworkStack::new(vec![DenseLayer::new(w.clone(), b.clone(), Activation::Sine { omega0: 5.0 }, None).unwrap()]).unwrap();
    let x = DMatrix::from_column_slice(3, 1, &[0.3, -0.7, 1.1]);
    let y = s.forward(&x).unwrap();
    let expect = (&w * &x + &b).map(|z| (5.0 * z).sin());
    assert_eq!(y, expect);
}

#[test]
fn dimension_mismatch_is_an_error() {
    let s = mixed_stack(1);
    assert!(matches!(s.forward(&DMatrix::zeros(4, 2)), Err(crate::Error::SizeMismatch { .. })));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = DenseLayer::init(3, 4, Activation::Gelu, false, false, &mut rng);
    let b = DenseLayer::init(5, 2, Activation::Gelu, false, false, &mut rng);
    assert!(NetworkStack::new(vec![a, b]).is_err());
}

/// Scalar probe of outputs, tangents and gates for finite differences.
struct Probe {
    y: DMatrix<f64>,
    t: Vec<DMatrix<f64>>,
}

fn probed_loss(s: &NetworkStack, x: &DMatrix<f64>, tangents: &[DMatrix<f64>], gates: &[Option<&DVector<f64>>], p: &Probe) -> f64 {
    let f = s.forward_full(x, tangents, gates).unwrap();
    f.y.component_mul(&p.y).sum() + f.tangents.iter().zip(&p.t).map(|(a, b)| a.component_mul(b).sum()).sum::<f64>()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn full_stack_gradients_match_differences() {
    let s = mixed_stack(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0));
    let tangents: Vec<_> = (0..3).map(|k| DMatrix::from_fn(3, 5, |i, _| if i == k { 1.0 } else { 0.0 })).collect();
    let gate = DVector::from_fn(5, |_, _| rng.gen_range(-0.9..0.9));
    let gates = [None, Some(&gate)];
    let probe = Probe {
        y: DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0)),
        t: (0..3).map(|_| DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0))).collect(),
    };
    let f = s.forward_full(&x, &tangents, &gates).unwrap();
    let back = s.backward(&f.cache, &probe.y, &probe.t).unwrap();
    let analytic = s.flatten_grads(&back.grads);
    let base = s.params();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut sp = s.clone();
        let mut p = base.clone();
        p[i] += h;
        sp.set_params(&p).unwrap();
        let lp = probed_loss(&sp, &x, &tangents, &gates, &probe);
        p[i] -= 2.0 * h;
        sp.set_params(&p).unwrap();
        let lm = probed_loss(&sp, &x, &tangents, &gates, &probe);
        let r = rel(analytic[i], (lp - lm) / (2.0 * h));
        worst = worst.max(r);
    }
    assert!(worst < 1e-5, "{worst}");

    // inputs and gates
    for (r, c) in [(0, 0), (1, 3), (2, 4)] {
        let mut xp = x.clone();
        xp[(r, c)] += h;
        let mut xm = x.clone();
        xm[(r, c)] -= h;
        let fd = (probed_loss(&s, &xp, &tangents, &gates, &probe) - probed_loss(&s, &xm, &tangents, &gates, &probe)) / (2.0 * h);
        assert!(rel(back.dx[(r, c)], fd) < 1e-5);
    }
    let dg = back.d_gates[1].as_ref().unwrap();
    for i in 0..gate.len() {
        let mut gp = gate.clone();
        gp[i] += h;
        let mut gm = gate.clone();
        gm[i] -= h;
        let fd = (probed_loss(&s, &x, &tangents, &[None, Some(&gp)], &probe)
            - probed_loss(&s, &x, &tangents, &[None, Some(&gm)], &probe))
            / (2.0 * h);
        assert!(rel(dg[i], fd) < 1e-5);
    }
    assert!(back.d_gates[0].is_none());
}

#[test]
fn tangents_are_input_jacobians() {
    let s = mixed_stack(5);
    let x = DMatrix::from_column_slice(3, 1, &[0.2, -0.4, 0.1]);
    let tangents: Vec<_> = (0..3).map(|k| DMatrix::from_fn(3, 1, |i, _| if i == k { 1.0 } else { 0.0 })).collect();
    let f = s.forward_full(&x, &tangents, &[]).unwrap();
    let h = 1e-6;
    for k in 0..3 {
        let mut xp = x.clone();
        xp[k] += h;
        let mut xm = x.clone();
        xm[k] -= h;
        let fd = (s.forward(&xp).unwrap() - s.forward(&xm).unwrap()) / (2.0 * h);
        assert!((&fd - &f.tangents[k]).amax() < 1e-8);
    }
}

#[test]
fn lipschitz_loss_is_product_of_bounds() {
    let mut s = mixed_stack(6);
    let lip: Vec<usize> = (0..s.layers.len()).filter(|&i| s.layers[i].lipschitz.is_some()).collect();
    for &i in &lip {
        s.layers[i].lipschitz = Some(softplus_inverse(1.0));
    }
    assert!((s.lipschitz_loss().unwrap().0 - 1.0).abs() < 1e-12);

    let two = vec![
        DenseLayer::new(DMatrix::identity(2, 2), DVector::zeros(2), Activation::Gelu, Some(softplus_inverse(2.0))).unwrap(),
        DenseLayer::new(DMatrix::identity(2, 2), DVector::zeros(2), Activation::Linear, Some(softplus_inverse(3.0))).unwrap(),
    ];
    let s2 = NetworkStack::new(two).unwrap();
    assert!((s2.lipschitz_loss().unwrap().0 - 6.0).abs() < 1e-12);

    let s = mixed_stack(7);
    let (_, grads) = s.lipschitz_loss().unwrap();
    let h = 1e-6;
    for (i, g) in grads.iter().enumerate() {
        match s.layers[i].lipschitz {
            Some(c) => {
                let mut sp = s.clone();
                sp.layers[i].lipschitz = Some(c + h);
                let mut sm = s.clone();
                sm.layers[i].lipschitz = Some(c - h);
                let fd = (sp.lipschitz_loss().unwrap().0 - sm.lipschitz_loss().unwrap().0) / (2.0 * h);
                assert!((fd - g).abs() < 1e-6 * fd.abs().max(1.0));
            }
            None => assert_eq!(*g, 0.0),
        }
    }
    let plain = NetworkStack::new(vec![DenseLayer::new(DMatrix::identity(2, 2), DVector::zeros(2), Activation::Linear, None).unwrap()]).unwrap();
    assert!(plain.lipschitz_loss().is_err());
}

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let s = mixed_stack(9);
    let mut buf = Vec::new();
    checkpoint::write_stack(&mut buf, &s).unwrap();
    let back = checkpoint::read_stack(&mut buf.as_slice()).unwrap();
    assert_eq!(back, s);
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(checkpoint::read_stack(&mut bad.as_slice()).is_err());
    assert!(checkpoint::read_stack(&mut &buf[..buf.len() - 3]).is_err());
}

#[test]
fn same_seed_same_network() {
    let x = DMatrix::from_fn(3, 4, |i, j| 0.1 * (i as f64) - 0.2 * (j as f64));
    assert_eq!(mixed_stack(11).forward(&x).unwrap(), mixed_stack(11).forward(&x).unwrap());
    assert_ne!(mixed_stack(11).params(), mixed_stack(12).params());
}

#[test]
fn row_bound_holds_through_training() {
    let mut s = mixed_stack(13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = DMatrix::from_fn(3, 16, |_, _| rng.gen_range(-1.0..1.0));
    let target = DMatrix::from_fn(3, 16, |_, _| rng.gen_range(-1.0..1.0));
    let mut adam = Adam::new(s.param_count(), 1e-2);
    let first = (s.forward(&x).unwrap() - &target).norm_squared();
    for _ in 0..200 {
        let f = s.forward_full(&x, &[], &[]).unwrap();
        let back = s.backward(&f.cache, &((&f.y - &target) * 2.0), &[]).unwrap();
        let mut p = s.params();
        adam.step(&mut p, &s.flatten_grads(&back.grads)).unwrap();
        s.set_params(&p).unwrap();
        s.check_row_bounds().unwrap();
    }
    assert!((s.forward(&x).unwrap() - &target).norm_squared() < first);
}

proptest! {
    #[test]
    fn normalized_rows_never_exceed_bound(
        data in proptest::collection::vec(-10.0f64..10.0, 12),
        c in -6.0f64..6.0,
    ) {
        let w = DMatrix::from_row_slice(3, 4, &data);
        let n = lipschitz_normalize(&w, c);
        prop_assert!(max_row_l1(&n) <= softplus(c) * (1.0 + ROW_BOUND_SLACK));
        // rows under the bound are untouched
        for i in 0..3 {
            let r: f64 = w.row(i).iter().map(|x| x.abs()).sum();
            if r <= softplus(c) {
                prop_assert_eq!(n.row(i), w.row(i));
            }
        }
    }
}
