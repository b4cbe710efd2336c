use super::*;
use rand::Rng;
use proptest::prelude::*;

fn rand_points(n: usize, seed: u64) -> Vec<Point3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect()
}

/// Small net with non-zero biases so every parameter matters.
fn small_net(seed: u64) -> SirenField<f64> {
    let mut f = SirenField::<f64>::init(&[3, 8, 8, 1], DEFAULT_OMEGA0, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    for l in f.layers_mut() {
        l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
    }
    f
}

/// Central differences of `loss(theta)`.
fn fd_params(field: &SirenField<f64>, h: f64, loss: impl Fn(&SirenField<f64>) -> f64) -> Vec<f64> {
    let base = field.params();
    let mut probe = field.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_params(&p).unwrap();
            let up = loss(&probe);
            p[i] = base[i] - h;
            probe.set_params(&p).unwrap();
            let down = loss(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn max_rel_error(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    got.iter()
        .zip(want)
        .map(|(g, w)| (g - w).abs() / w.abs().max(1e-3 * scale).max(1e-12))
        .fold(0.0, f64::max)
}

#[test]
fn init_is_deterministic() {
    let a = SirenField::<f32>::init(&architecture(5, 64), 30.0, 4).unwrap();
    let b = SirenField::<f32>::init(&architecture(5, 64), 30.0, 4).unwrap();
    let c = SirenField::<f32>::init(&architecture(5, 64), 30.0, 5).unwrap();
    assert_eq!(a.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_ne!(a, c);
}

#[test]
fn init_breaks_odd_symmetry() {
    let f = SirenField::<f64>::init(&architecture(5, 64), 30.0, 4).unwrap();
    for l in f.layers() {
        let bound = 1.0 / (l.fan_in() as f64).sqrt();
        let max = l.bias.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        assert!(max <= bound);
        assert!(l.fan_out() == 1 || max > 0.5 * bound);
    }
    let x = Vec3::new(0.3, -0.2, 0.1);
    assert!((f.eval(x) + f.eval(-x)).abs() > 1e-6);
}

#[test]
fn init_bounds() {
    let f = SirenField::<f64>::init(&architecture(5, 256), 30.0, 1).unwrap();
    assert_eq!(f.dims(), vec![3, 256, 256, 256, 256, 1]);
    assert_eq!(f.num_params(), 4 * 256 + 3 * (256 * 257) + 257);
    let first = f.layers()[0].weight.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(first <= 1.0 / 3.0 && first > 0.3);
    let bound = (6.0f64 / 256.0).sqrt() / 30.0;
    let hidden = f.layers()[2].weight.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(hidden <= bound && hidden > 0.95 * bound);
}

#[test]
fn zero_network_is_zero() {
    let f = SirenField::<f64>::zeros(&architecture(5, 16), 30.0).unwrap();
    for x in rand_points(20, 1) {
        let d = f.eval_dual(x);
        assert_eq!(d.value, 0.0);
        assert_eq!(d.grad, Vec3::zero());
        assert_eq!(f.eval(x), 0.0);
    }
}

#[test]
fn first_layer_activations_span_sine_range() {
    // pre-activations have std omega * sqrt(3 * (1/27) * (1/3)) ~ 5.8 rad, so
    // sin is near arcsine-distributed with std ~ 1/sqrt(2)
    let f = SirenField::<f64>::init(&architecture(5, 256), 30.0, 2).unwrap();
    let xs = rand_points(10_000, 3);
    let l0 = &f.layers()[0];
    let mut acts = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        let o = i % 256;
        let z = l0.weight[[o, 0]] * x.x + l0.weight[[o, 1]] * x.y + l0.weight[[o, 2]] * x.z;
        acts.push((30.0 * z).sin());
    }
    let mean = acts.iter().sum::<f64>() / acts.len() as f64;
    let std = (acts.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / acts.len() as f64).sqrt();
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((0.6..0.8).contains(&std), "std {std}");
    assert!(acts.iter().any(|&a| a > 0.99) && acts.iter().any(|&a| a < -0.99));
}

#[test]
fn one_neuron_chain_matches_closed_form() {
    let w = 30.0f64;
    let mut f = SirenField::<f64>::zeros(&[3, 1, 1, 1], w).unwrap();
    let (w1, b1, w2, b2, w3, b3) = ([0.2, -0.1, 0.05], 0.03, 0.7, -0.02, 1.3, 0.1);
    {
        let ls = f.layers_mut();
        for (j, &v) in w1.iter().enumerate() {
            ls[0].weight[[0, j]] = v;
        }
        ls[0].bias[0] = b1;
        ls[1].weight[[0, 0]] = w2;
        ls[1].bias[0] = b2;
        ls[2].weight[[0, 0]] = w3;
        ls[2].bias[0] = b3;
    }
    let x = Vec3::new(0.3, -0.4, 0.8);
    let a1 = w * (w1[0] * x.x + w1[1] * x.y + w1[2] * x.z + b1);
    let h1 = a1.sin();
    let a2 = w * (w2 * h1 + b2);
    let value = w3 * a2.sin() + b3;
    let chain = w3 * a2.cos() * w * w2 * a1.cos() * w;
    let d = f.eval_dual(x);
    assert!((d.value - value).abs() < 1e-14);
    for (j, &v) in w1.iter().enumerate() {
        assert!((d.grad[j] - chain * v).abs() < 1e-12, "{j}: {} vs {}", d.grad[j], chain * v);
    }
}

#[test]
fn eval_matches_dual_value_and_batch() {
    let f = SirenField::<f32>::init(&architecture(5, 64), 30.0, 8).unwrap();
    let xs: Vec<Point3<f32>> = rand_points(300, 4).iter().map(|p| p.cast()).collect();
    let batch = f.eval_batch(&xs);
    let dual = f.eval_dual_batch(&xs);
    for (i, &x) in xs.iter().enumerate() {
        let v = f.eval(x);
        assert_eq!(v.to_bits(), f.eval_dual(x).value.to_bits());
        assert_eq!(v.to_bits(), batch[i].to_bits());
        assert_eq!(v.to_bits(), dual[i].value.to_bits());
        assert_eq!(f.eval_dual(x).grad, dual[i].grad);
    }
}

fn central_gradient(f: &SirenField<f64>, x: Point3<f64>, h: f64) -> Vec3<f64> {
    let d = |e: Vec3<f64>| (f.eval(x + e * h) - f.eval(x - e * h)) / (2.0 * h);
    Vec3::new(d(Vec3::axis(0)), d(Vec3::axis(1)), d(Vec3::axis(2)))
}

#[test]
fn input_gradient_matches_finite_differences() {
    let f = SirenField::<f64>::init(&architecture(5, 256), 30.0, 11).unwrap();
    for x in rand_points(100, 12) {
        let g = f.eval_dual(x).grad;
        let fd = central_gradient(&f, x, 1e-5);
        let rel = (g - fd).norm() / fd.norm();
        assert!(rel < 1e-4, "relative error {rel} at {x:?}");
    }
}

#[test]
fn coarse_difference_gap_is_truncation() {
    // with omega0 = 30 the third derivative is large enough that h = 1e-3
    // leaves a few 1e-4 of truncation error; it must shrink as h^2
    let f = SirenField::<f64>::init(&architecture(5, 256), 30.0, 11).unwrap();
    for x in rand_points(20, 12) {
        let g = f.eval_dual(x).grad;
        let coarse = (g - central_gradient(&f, x, 1e-3)).norm();
        let fine = (g - central_gradient(&f, x, 1e-4)).norm();
        let ratio = coarse / fine;
        assert!((90.0..110.0).contains(&ratio), "ratio {ratio} at {x:?}");
    }
}

#[test]
fn directional_difference_error_is_second_order() {
    let f = SirenField::<f64>::init(&architecture(5, 64), 30.0, 13).unwrap();
    let dir = Vec3::new(0.3, -0.5, 0.2);
    let mut ratios = Vec::new();
    for x in rand_points(10, 14) {
        let g = f.eval_dual(x).grad.dot(dir);
        let err = |h: f64| (g - (f.eval(x + dir * h) - f.eval(x - dir * h)) / (2.0 * h)).abs();
        ratios.push(err(4e-3) / err(2e-3));
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    assert!((3.5..4.5).contains(&median), "median ratio {median}");
}

#[test]
fn value_backward_matches_finite_differences() {
    for seed in 0..5 {
        let f = small_net(seed);
        let xs = rand_points(16, 100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dv: Vec<f64> = xs.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = f.backward_batch(&xs, &dv, &vec![Vec3::zero(); xs.len()]).unwrap();
        let fd = fd_params(&f, 1e-6, |g| xs.iter().zip(&dv).map(|(&x, &c)| c * g.eval(x)).sum());
        let err = max_rel_error(&got, &fd);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn gradient_backward_matches_finite_differences() {
    for seed in 0..5 {
        let f = small_net(seed + 20);
        let x = rand_points(1, 200 + seed)[0];
        let c = Vec3::new(0.4, -0.7, 0.3);
        let got = f.backward_batch(&[x], &[0.0], &[c]).unwrap();
        let fd = fd_params(&f, 1e-6, |g| g.eval_dual(x).grad.dot(c));
        let err = max_rel_error(&got, &fd);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn mixed_backward_matches_finite_differences() {
    let f = small_net(40);
    let xs = rand_points(16, 41);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let dv: Vec<f64> = xs.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let dg: Vec<Vec3<f64>> = rand_points(16, 43);
    let got = f.backward_batch(&xs, &dv, &dg).unwrap();
    let fd = fd_params(&f, 1e-6, |g| {
        xs.iter()
            .zip(dv.iter().zip(&dg))
            .map(|(&x, (&a, &b))| {
                let d = g.eval_dual(x);
                a * d.value + b.dot(d.grad)
            })
            .sum()
    });
    assert!(max_rel_error(&got, &fd) < 1e-4);
}

#[test]
fn zero_cotangents_give_zero_gradient() {
    let f = small_net(3);
    let xs = rand_points(5, 1);
    let g = f.backward_batch(&xs, &[0.0; 5], &[Vec3::zero(); 5]).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn length_mismatch_is_rejected() {
    let f = small_net(3);
    let xs = rand_points(5, 1);
    assert!(matches!(f.backward_batch(&xs, &[0.0; 4], &[Vec3::zero(); 5]), Err(Error::InvalidArgument(_))));
}

#[test]
fn unit_chunks_equal_sum_of_single_calls() {
    let f = SirenField::<f64>::init(&architecture(4, 32), 30.0, 6).unwrap();
    let xs = rand_points(40, 7);
    let dv: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
    let dg = rand_points(40, 8);
    let batch = f.backward_batch_chunked(&xs, &dv, &dg, 1).unwrap();
    let mut sum = vec![0.0; f.num_params()];
    for i in 0..xs.len() {
        let g = f.backward_batch(&xs[i..=i], &dv[i..=i], &dg[i..=i]).unwrap();
        sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
    }
    assert_eq!(batch, sum);
    let blocked = f.backward_batch(&xs, &dv, &dg).unwrap();
    assert!(max_rel_error(&blocked, &sum) < 1e-10);
}

#[test]
fn backward_is_thread_count_independent() {
    let f = SirenField::<f32>::init(&architecture(5, 32), 30.0, 6).unwrap();
    let xs: Vec<Point3<f32>> = rand_points(2000, 7).iter().map(|p| p.cast()).collect();
    let dv = vec![0.01f32; xs.len()];
    let dg: Vec<Vec3<f32>> = rand_points(2000, 9).iter().map(|p| p.cast()).collect();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| f.backward_batch(&xs, &dv, &dg).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn checkpoint_round_trip() {
    let f = SirenField::<f32>::init(&architecture(5, 16), 30.0, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.npsn");
    save_checkpoint(&f, &path).unwrap();
    let g: SirenField<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(f, g);
    let bytes = encode_checkpoint(&f);
    assert_eq!(&bytes[..4], b"NPSN");
    assert_eq!(encode_checkpoint(&g), bytes);
}

#[test]
fn checkpoint_errors() {
    let f = SirenField::<f32>::init(&architecture(3, 8), 30.0, 2).unwrap();
    let bytes = encode_checkpoint(&f);
    let truncated = decode_checkpoint::<f32>(&bytes[..bytes.len() - 3]);
    assert!(matches!(truncated, Err(Error::Checkpoint(_))));
    let mut wrong = bytes.clone();
    wrong[4..8].copy_from_slice(&7u32.to_le_bytes());
    match decode_checkpoint::<f32>(&wrong) {
        Err(Error::Checkpoint(m)) => assert!(m.contains('7') && m.contains('1'), "{m}"),
        other => panic!("{other:?}"),
    }
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode_checkpoint::<f32>(&magic), Err(Error::Checkpoint(_))));
    assert!(matches!(decode_checkpoint::<f32>(&bytes[..2]), Err(Error::Checkpoint(_))));
}

#[test]
fn rejects_bad_dims() {
    assert!(SirenField::<f32>::zeros(&[3, 1], 30.0).is_err());
    assert!(SirenField::<f32>::zeros(&[2, 8, 1], 30.0).is_err());
    assert!(SirenField::<f32>::zeros(&[3, 8, 2], 30.0).is_err());
    assert!(SirenField::<f32>::zeros(&[3, 8, 1], 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn eval_batch_is_partition_invariant(n in 1usize..400, seed in 0u64..1000) {
        let f = SirenField::<f32>::init(&architecture(4, 24), 30.0, seed).unwrap();
        let xs: Vec<Point3<f32>> = rand_points(n, seed).iter().map(|p| p.cast()).collect();
        let whole = f.eval_batch(&xs);
        let split = n / 3;
        let mut parts = f.eval_batch(&xs[..split]);
        parts.extend(f.eval_batch(&xs[split..]));
        prop_assert_eq!(whole, parts);
    }

    #[test]
    fn set_params_round_trip(seed in 0u64..1000) {
        let f = SirenField::<f64>::init(&architecture(3, 8), 30.0, seed).unwrap();
        let mut g = SirenField::<f64>::zeros(&architecture(3, 8), 30.0).unwrap();
        g.set_params(&f.params()).unwrap();
        prop_assert_eq!(f, g);
    }
}
