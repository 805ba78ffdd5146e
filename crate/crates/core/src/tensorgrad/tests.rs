use super::*;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseArray {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
    DenseArray::new(shape.to_vec(), data).unwrap()
}

/// Central-difference gradient of `f` w.r.t. every input element.
fn finite_difference(inputs: &[DenseArray], f: &dyn Fn(&[DenseArray]) -> f64, h: f64) -> Vec<DenseArray> {
    let mut out = Vec::new();
    for k in 0..inputs.len() {
        let mut g = DenseArray::zeros(inputs[k].shape());
        for e in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= h;
            g.data_mut()[e] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Builds `sum(op(inputs) * weights)` so that every output element matters.
fn probe_loss(g: &mut Graph, op: Primitive, ids: &[NodeId], weights: &DenseArray) -> NodeId {
    let y = g.apply(op, ids).unwrap();
    let w = if g.value(y).shape() == weights.shape() {
        weights.clone()
    } else {
        DenseArray::filled(g.value(y).shape(), 0.7)
    };
    let w = g.constant(w);
    let prod = g.mul(y, w).unwrap();
    g.sum(prod).unwrap()
}

fn check_primitive(op: Primitive, shapes: &[Vec<usize>], out_shape: &[usize], positive_margin: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ op.name().len() as u64);
    for _ in 0..20 {
        let mut inputs: Vec<DenseArray> = shapes.iter().map(|s| random_array(&mut rng, s)).collect();
        if positive_margin {
            // keep relu inputs away from the kink
            for a in &mut inputs {
                for v in a.data_mut() {
                    if v.abs() < 0.05 {
                        *v += 0.1;
                    }
                }
            }
        }
        let weights = random_array(&mut rng, out_shape);
        let eval = |xs: &[DenseArray]| {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = xs.iter().map(|x| g.constant(x.clone())).collect();
            let l = probe_loss(&mut g, op, &ids, &weights);
            g.value(l).data()[0]
        };
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| g.param(ParamId(i), x.clone()))
            .collect();
        let loss = probe_loss(&mut g, op, &ids, &weights);
        let grads = g.backward(loss).unwrap();
        let fd = finite_difference(&inputs, &eval, 1e-5);
        for (i, fd_i) in fd.iter().enumerate() {
            let an = grads.param(ParamId(i)).unwrap();
            for (a, b) in an.data().iter().zip(fd_i.data()) {
                assert!(rel_err(*a, *b) <= 1e-4, "{}: analytic {a} vs fd {b}", op.name());
            }
        }
    }
}

#[test]
fn every_primitive_matches_finite_differences() {
    let m = vec![3, 4];
    check_primitive(Primitive::Add, &[m.clone(), m.clone()], &m, false);
    check_primitive(Primitive::Add, &[m.clone(), vec![1, 4]], &m, false);
    check_primitive(Primitive::Sub, &[m.clone(), m.clone()], &m, false);
    check_primitive(Primitive::Mul, &[m.clone(), m.clone()], &m, false);
    check_primitive(Primitive::ScalarMul(-1.7), core::slice::from_ref(&m), &m, false);
    check_primitive(Primitive::Matmul, &[vec![3, 5], vec![5, 2]], &[3, 2], false);
    check_primitive(Primitive::Tanh, core::slice::from_ref(&m), &m, false);
    check_primitive(Primitive::Relu, core::slice::from_ref(&m), &m, true);
    check_primitive(Primitive::Square, core::slice::from_ref(&m), &m, false);
    check_primitive(Primitive::Sum, core::slice::from_ref(&m), &[1], false);
    check_primitive(Primitive::Mean, core::slice::from_ref(&m), &[1], false);
    check_primitive(Primitive::Concat { axis: 1 }, &[m.clone(), vec![3, 2]], &[3, 6], false);
    check_primitive(Primitive::Concat { axis: 0 }, &[m.clone(), vec![1, 4]], &[4, 4], false);
    check_primitive(
        Primitive::Slice { start: 1, end: 3 },
        core::slice::from_ref(&m),
        &[3, 2],
        false,
    );
}

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let i2 = g.constant(DenseArray::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let a = g.constant(DenseArray::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.matmul(i2, a).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn mean_and_tanh_simple_values() {
    let mut g = Graph::new();
    let x = g.constant(DenseArray::new(vec![3], vec![2.0, 4.0, 6.0]).unwrap());
    let m = g.mean(x).unwrap();
    assert_eq!(g.value(m).data(), &[4.0]);
    let z = g.constant(DenseArray::scalar(0.0));
    let t = g.tanh(z).unwrap();
    assert_eq!(g.value(t).data(), &[0.0]);
}

#[test]
fn square_gradient_at_three() {
    let mut g = Graph::new();
    let x = g.param(ParamId(0), DenseArray::scalar(3.0));
    let y = g.square(x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.param(ParamId(0)).unwrap().data(), &[6.0]);
}

#[test]
fn detached_branch_gives_zero_gradient() {
    let mut g = Graph::new();
    let x = g.param(ParamId(0), DenseArray::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
    let dx = g.detach(x);
    let sq = g.square(dx).unwrap();
    let loss = g.mean(sq).unwrap();
    assert!(!g.is_tracked(loss));
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(ParamId(0)).unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn mixed_detached_branch_contributes_nothing() {
    // loss = sum(x*x) + sum(detach(x)*x); only the first term and the
    // non-detached factor of the second carry gradient.
    let mut g = Graph::new();
    let x = g.param(ParamId(0), DenseArray::new(vec![2], vec![1.5, -0.5]).unwrap());
    let xx = g.mul(x, x).unwrap();
    let dx = g.detach(x);
    let dxx = g.mul(dx, x).unwrap();
    let s = g.add(xx, dxx).unwrap();
    let loss = g.sum(s).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(ParamId(0)).unwrap().data(), &[3.0 * 1.5, 3.0 * -0.5]);
}

#[test]
fn unreachable_param_maps_to_zero() {
    let mut g = Graph::new();
    let a = g.param(ParamId(0), DenseArray::scalar(2.0));
    let _b = g.param(ParamId(1), DenseArray::new(vec![2], vec![1.0, 1.0]).unwrap());
    let loss = g.square(a).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(ParamId(1)).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let a = g.param(ParamId(0), DenseArray::new(vec![2], vec![1.0, 1.0]).unwrap());
    let y = g.square(a).unwrap();
    assert!(matches!(g.backward(y), Err(GradError::NotScalar { .. })));
}

#[test]
fn backward_reports_cycle() {
    let mut g = Graph::new();
    let a = g.param(ParamId(0), DenseArray::scalar(1.0));
    let b = g.square(a).unwrap();
    let c = g.square(b).unwrap();
    g.corrupt_parent_for_test(b, c);
    assert!(matches!(g.backward(c), Err(GradError::Cycle { .. })));
}

#[test]
fn shape_mismatch_and_non_finite_are_errors() {
    let mut g = Graph::new();
    let a = g.constant(DenseArray::zeros(&[2, 3]));
    let b = g.constant(DenseArray::zeros(&[3, 3]));
    assert!(matches!(g.add(a, b), Err(GradError::ShapeMismatch { .. })));
    assert!(matches!(g.matmul(a, a), Err(GradError::ShapeMismatch { .. })));
    let big = g.constant(DenseArray::scalar(1e200));
    let sq = g.square(big);
    assert!(matches!(sq, Err(GradError::NonFinite { op: "square" })));
}

fn two_layer_loss(g: &mut Graph, params: &[DenseArray], x: &DenseArray, tracked: bool) -> NodeId {
    let ids: Vec<NodeId> = params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if tracked {
                g.param(ParamId(i), p.clone())
            } else {
                g.constant(p.clone())
            }
        })
        .collect();
    let x = g.constant(x.clone());
    let h = g.matmul(x, ids[0]).unwrap();
    let h = g.add(h, ids[1]).unwrap();
    let h = g.tanh(h).unwrap();
    let y = g.matmul(h, ids[2]).unwrap();
    let y = g.add(y, ids[3]).unwrap();
    let y = g.square(y).unwrap();
    g.mean(y).unwrap()
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = vec![
        random_array(&mut rng, &[4, 6]),
        random_array(&mut rng, &[1, 6]),
        random_array(&mut rng, &[6, 2]),
        random_array(&mut rng, &[1, 2]),
    ];
    let x1 = random_array(&mut rng, &[5, 4]);
    let x2 = random_array(&mut rng, &[5, 4]);
    let (a, b) = (0.3, -2.1);

    let grad_of = |x: &DenseArray| {
        let mut g = Graph::new();
        let l = two_layer_loss(&mut g, &params, x, true);
        g.backward(l).unwrap().into_param_vec()
    };
    let g1 = grad_of(&x1);
    let g2 = grad_of(&x2);

    let mut g = Graph::new();
    let l1 = two_layer_loss(&mut g, &params, &x1, true);
    let l2 = two_layer_loss(&mut g, &params, &x2, true);
    let l1 = g.scale(l1, a).unwrap();
    let l2 = g.scale(l2, b).unwrap();
    let l = g.add(l1, l2).unwrap();
    let combined = g.backward(l).unwrap().into_param_vec();
    for ((c, p), q) in combined.iter().zip(&g1).zip(&g2) {
        for ((cv, pv), qv) in c.data().iter().zip(p.data()).zip(q.data()) {
            assert!((cv - (a * pv + b * qv)).abs() <= 1e-10);
        }
    }
}

#[test]
fn live_size_ignores_detached_history() {
    let mut g = Graph::new();
    let w = g.param(ParamId(0), DenseArray::scalar(2.0));
    let mut h = w;
    for _ in 0..10 {
        h = g.square(h).unwrap();
        h = g.scale(h, 0.5).unwrap();
    }
    let cut = g.detach(h);
    let y = g.mul(cut, w).unwrap();
    let loss = g.sum(y).unwrap();
    assert_eq!(g.live_size(loss), 3);
}

#[test]
fn adamw_zero_gradient_is_fixed_point() {
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    let mut p = vec![DenseArray::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap()];
    let before = p.clone();
    opt.step(&mut p, &[DenseArray::zeros(&[3])]).unwrap();
    assert_eq!(p, before);
    assert_eq!(opt.step_count(), 1);
}

#[test]
fn adamw_first_step_moves_by_learning_rate() {
    // m = 0.1, v = 0.001 after one step; bias corrections give m_hat = v_hat = 1.
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    let mut p = vec![DenseArray::scalar(0.5)];
    opt.step(&mut p, &[DenseArray::scalar(1.0)]).unwrap();
    let delta = p[0].data()[0] - 0.5;
    let expected = -1e-5 / (1.0 + 1e-8);
    assert!((delta - expected).abs() < 1e-15, "delta {delta}");
}

#[test]
fn adamw_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p0 = vec![random_array(&mut rng, &[4, 4])];
    let g0 = vec![random_array(&mut rng, &[4, 4])];
    let run = || {
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut p = p0.clone();
        opt.step(&mut p, &g0).unwrap();
        opt.step(&mut p, &g0).unwrap();
        (p, opt)
    };
    assert_eq!(run(), run());
}

#[test]
fn adamw_rejects_bad_input() {
    let mut opt = AdamW::new(AdamWConfig::default());
    let mut p = vec![DenseArray::zeros(&[2])];
    assert!(opt.step(&mut p, &[DenseArray::zeros(&[3])]).is_err());
    assert!(opt.step(&mut p, &[DenseArray::filled(&[2], f64::NAN)]).is_err());
    assert_eq!(opt.step_count(), 0);
}

#[test]
fn clip_examples() {
    let mut g = vec![DenseArray::new(vec![2], vec![3.0, 4.0]).unwrap()];
    let norm = clip_global_norm(&mut g, 1.0);
    assert_eq!(norm, 5.0);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    assert!((g[0].data()[1] - 0.8).abs() < 1e-15);

    let mut small = vec![DenseArray::scalar(0.1)];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0].data(), &[0.1]);
}

#[test]
fn clipped_norm_never_exceeds_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let k = rng.random_range(1..5);
        let mut grads: Vec<DenseArray> = (0..k)
            .map(|_| {
                let n = rng.random_range(1..20);
                let scale = rng.random_range(0.01..10.0);
                let mut a = random_array(&mut rng, &[n]);
                a.scale_in_place(scale);
                a
            })
            .collect();
        let before = grads.clone();
        clip_global_norm(&mut grads, 1.0);
        assert!(global_norm(&grads) <= 1.0 + 1e-12);
        for (a, b) in grads.iter().zip(&before) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!(x.abs() <= y.abs());
            }
        }
    }
}
