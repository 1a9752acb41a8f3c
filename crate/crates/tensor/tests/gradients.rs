//! Finite-difference checks for every differentiable primitive in f64.

use orthoseg_tensor::gradcheck::{finite_diff_check, GradReport};
use orthoseg_tensor::{Graph, Padding, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero so ELU's kink is never straddled.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Distinct values with gaps of at least 1e-3 so window maxima stay unique.
fn distinct(shape: &[usize], seed: u64) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    Tensor::from_fn(shape, |i| order[i] as f64 * 1e-2 - 0.5)
}

fn assert_passes(name: &str, r: &GradReport) {
    assert!(
        r.passed(),
        "{name}: max relative error {:?}",
        r.max_rel_error
    );
}

const SHAPES: [[usize; 4]; 5] = [
    [1, 2, 8, 8],
    [2, 1, 4, 6],
    [1, 3, 6, 4],
    [2, 2, 2, 2],
    [1, 1, 10, 6],
];

#[test]
fn conv2d_gradients() {
    for (i, s) in SHAPES.iter().enumerate() {
        for dil in [1, 2] {
            let seed = (i * 10 + dil) as u64;
            let x = random(s, seed);
            let w = random(&[3, s[1], 3, 3], seed + 1);
            let b = random(&[3], seed + 2);
            let r = finite_diff_check(
                |g, v| g.conv2d(&v[0], &v[1], Some(&v[2]), dil, Padding::Same),
                &[x, w, b],
                EPS,
                TOL,
            )
            .unwrap();
            assert_passes("conv2d", &r);
        }
    }
    // pointwise and valid-padding paths
    let x = random(&[1, 4, 5, 5], 77);
    let w = random(&[2, 4, 1, 1], 78);
    let r = finite_diff_check(
        |g, v| g.conv2d(&v[0], &v[1], None, 1, Padding::Same),
        &[x.clone(), w],
        EPS,
        TOL,
    )
    .unwrap();
    assert_passes("conv2d 1x1", &r);
    let w = random(&[2, 4, 3, 3], 79);
    let r = finite_diff_check(
        |g, v| g.conv2d(&v[0], &v[1], None, 1, Padding::Valid),
        &[x, w],
        EPS,
        TOL,
    )
    .unwrap();
    assert_passes("conv2d valid", &r);
}

#[test]
fn pooling_and_upsampling_gradients() {
    for (i, s) in SHAPES.iter().enumerate() {
        let seed = 100 + i as u64;
        let r =
            finite_diff_check(|g, v| g.max_pool2(&v[0]), &[distinct(s, seed)], EPS, TOL).unwrap();
        assert_passes("max_pool2", &r);
        let r = finite_diff_check(
            |g, v| g.avg_pool(&v[0], 5, 1, Padding::Same),
            &[random(s, seed)],
            EPS,
            TOL,
        )
        .unwrap();
        assert_passes("avg_pool 5 same", &r);
        let r = finite_diff_check(
            |g, v| g.avg_pool(&v[0], 2, 2, Padding::Valid),
            &[random(s, seed)],
            EPS,
            TOL,
        )
        .unwrap();
        assert_passes("avg_pool 2 valid", &r);
        let r = finite_diff_check(|g, v| g.upsample2(&v[0]), &[random(s, seed)], EPS, TOL).unwrap();
        assert_passes("upsample2", &r);
    }
}

#[test]
fn upsample_sum_gradient_is_four() {
    let x = random(&[1, 2, 3, 3], 5);
    let mut g = Graph::<f64>::new();
    let v = g.param(x.clone());
    let up = g.upsample2(&v).unwrap();
    let s = g.sum(&up);
    let grads = g.backward(&s).unwrap();
    assert!(grads.get(&v).unwrap().data().iter().all(|&d| d == 4.0));
    // and numerically
    let r = finite_diff_check(
        |g, v| {
            let up = g.upsample2(&v[0])?;
            Ok(g.sum(&up))
        },
        &[x],
        EPS,
        TOL,
    )
    .unwrap();
    assert_passes("sum(upsample2)", &r);
}

#[test]
fn pointwise_gradients() {
    for (i, s) in SHAPES.iter().enumerate() {
        let seed = 200 + i as u64;
        let r = finite_diff_check(
            |g, v| Ok(g.elu(&v[0])),
            &[away_from_zero(s, seed)],
            EPS,
            TOL,
        )
        .unwrap();
        assert_passes("elu", &r);
        let r = finite_diff_check(
            |g, v| g.softmax_channels(&v[0]),
            &[random(s, seed)],
            EPS,
            TOL,
        )
        .unwrap();
        assert_passes("softmax", &r);
        let r = finite_diff_check(
            |g, v| Ok(g.scale_const(&v[0], 0.05)),
            &[random(s, seed)],
            EPS,
            TOL,
        )
        .unwrap();
        assert_passes("scale", &r);
        let r = finite_diff_check(
            |g, v| g.add(&v[0], &v[1]),
            &[random(s, seed), random(s, seed + 1)],
            EPS,
            TOL,
        )
        .unwrap();
        assert_passes("add", &r);
        let r = finite_diff_check(
            |g, v| g.sub(&v[0], &v[1]),
            &[random(s, seed), random(s, seed + 1)],
            EPS,
            TOL,
        )
        .unwrap();
        assert_passes("sub", &r);
        let r = finite_diff_check(
            |g, v| g.mul(&v[0], &v[1]),
            &[random(s, seed), random(s, seed + 1)],
            EPS,
            TOL,
        )
        .unwrap();
        assert_passes("mul", &r);
    }
}

#[test]
fn scale_gradient_is_factor() {
    let mut g = Graph::<f64>::new();
    let x = g.param(random(&[1, 1, 3, 3], 6));
    let y = g.scale_const(&x, 1.0 / 20.0);
    let s = g.sum(&y);
    let grads = g.backward(&s).unwrap();
    assert!(grads.get(&x).unwrap().data().iter().all(|&d| d == 0.05));
}

#[test]
fn concat_gradients() {
    for (i, s) in SHAPES.iter().enumerate() {
        let seed = 300 + i as u64;
        let other = [s[0], 2, s[2], s[3]];
        let r = finite_diff_check(
            |g, v| g.concat_channels(&[&v[0], &v[1], &v[0]]),
            &[random(s, seed), random(&other, seed + 1)],
            EPS,
            TOL,
        )
        .unwrap();
        assert_passes("concat", &r);
    }
}

#[test]
fn dmgn_gradient_with_frozen_noise() {
    for (i, s) in SHAPES.iter().enumerate() {
        let seed = 400 + i as u64;
        let r = finite_diff_check(
            |g, v| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                g.dmgn(&v[0], 0.25, true, &mut rng)
            },
            &[random(s, seed)],
            EPS,
            TOL,
        )
        .unwrap();
        assert_passes("dmgn", &r);
    }
}

#[test]
fn cross_entropy_gradients() {
    for (i, s) in SHAPES.iter().enumerate() {
        let seed = 500 + i as u64;
        let classes = s[1].max(2);
        let shape = [s[0], classes, s[2], s[3]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..s[0] * s[2] * s[3])
            .map(|_| rng.gen_range(0..classes))
            .collect();
        let r = finite_diff_check(
            |g, v| {
                let p = g.softmax_channels(&v[0])?;
                g.cross_entropy_loss(&p, &labels)
            },
            &[random(&shape, seed)],
            EPS,
            TOL,
        )
        .unwrap();
        assert_passes("cross_entropy", &r);
    }
}

#[test]
fn stop_gradient_matches_branch_removed_differences() {
    for (i, s) in SHAPES.iter().enumerate() {
        let seed = 600 + i as u64;
        let r = finite_diff_check(
            |g, v| {
                let sq = g.mul(&v[0], &v[0])?;
                let branch = g.stop_gradient(&sq);
                g.add(&v[0], &branch)
            },
            &[random(s, seed)],
            EPS,
            TOL,
        )
        .unwrap();
        assert_passes("stop_gradient residual", &r);
        // pure gate: analytic zero, and the replayed difference is zero too
        let r = finite_diff_check(
            |g, v| Ok(g.stop_gradient(&v[0])),
            &[random(s, seed)],
            EPS,
            TOL,
        )
        .unwrap();
        assert_eq!(r.max_abs_grad[0], 0.0);
        assert_eq!(r.max_rel_error[0], 0.0);
    }
}

#[test]
fn composite_block_gradient() {
    // conv -> elu -> pool -> upsample -> concat with the input -> 1x1 conv
    let x = away_from_zero(&[1, 2, 8, 8], 700);
    let w = random(&[3, 2, 3, 3], 701);
    let w2 = random(&[2, 5, 1, 1], 702);
    let r = finite_diff_check(
        |g, v| {
            let h = g.conv2d(&v[0], &v[1], None, 2, Padding::Same)?;
            let h = g.elu(&h);
            let p = g.avg_pool(&h, 2, 2, Padding::Valid)?;
            let u = g.upsample2(&p)?;
            let cat = g.concat_channels(&[&u, &v[0]])?;
            g.conv2d(&cat, &v[2], None, 1, Padding::Same)
        },
        &[x, w, w2],
        EPS,
        TOL,
    )
    .unwrap();
    assert_passes("composite", &r);
}

#[test]
fn f32_conv_gradient_within_single_precision_tolerance() {
    let x32: Tensor<f32> = random(&[1, 2, 6, 6], 800).cast();
    let w32: Tensor<f32> = random(&[2, 2, 3, 3], 801).cast();
    let mut g = Graph::<f32>::new();
    let x = g.param(x32.clone());
    let w = g.param(w32.clone());
    let y = g.conv2d(&x, &w, None, 2, Padding::Same).unwrap();
    let s = g.sum(&y);
    let grads = g.backward(&s).unwrap();
    let analytic = grads.get(&w).unwrap();
    let eps = 1e-2f32;
    let scale = analytic.max_abs();
    for j in 0..w32.len() {
        let f = |delta: f32| {
            let mut wp = w32.clone();
            wp.data_mut()[j] += delta;
            let mut g = Graph::<f32>::inference();
            let y = g
                .conv2d(
                    &Var::constant(x32.clone()),
                    &Var::constant(wp),
                    None,
                    2,
                    Padding::Same,
                )
                .unwrap();
            y.value().sum()
        };
        let numeric = (f(eps) - f(-eps)) / (2.0 * eps);
        assert!((numeric - analytic.data()[j]).abs() / scale < 1e-3);
    }
}

#[test]
fn primitive_suite_passes_everywhere() {
    let entries = orthoseg_tensor::gradcheck::primitive_suite(EPS, TOL, 42).unwrap();
    assert_eq!(entries.len(), 18);
    for e in &entries {
        assert_eq!(e.shapes.len(), 5, "{}", e.primitive);
        assert!(e.passed, "{}: worst {}", e.primitive, e.worst);
    }
}
