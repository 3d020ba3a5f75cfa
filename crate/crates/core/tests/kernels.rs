//! Kernels against brute-force references and their algebraic invariants.

mod common;

use hebbnet::conv_hebbian::{
    conv_hebbian_step, update_centering, CenteringStats, ConvHebbianLayer, ConvSpec, Rule,
};
use hebbnet::nn::{conv_forward, extract_patches, max_pool};
use hebbnet::oracle::{batch_pca, covariance, kmeans};
use hebbnet::probe::{evaluate_accuracy, probe_loss, probe_sgd_step, LinearProbe};
use hebbnet::rules::{hpca_update, representation_error, wta_select, Nonlinearity, WeightMatrix};
use hebbnet::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

fn rows_of(w: &WeightMatrix) -> Vec<Vec<f64>> {
    (0..w.neurons()).map(|i| w.row(i).to_vec()).collect()
}

#[derive(Debug, Clone)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
}

fn geometry() -> impl Strategy<Value = Geometry> {
    (
        1usize..4,
        2usize..9,
        2usize..9,
        1usize..3,
        1usize..3,
        0usize..2,
        0usize..2,
    )
        .prop_flat_map(|(c, h, w, sh, sw, ph, pw)| {
            (1..=h.min(5), 1..=w.min(5)).prop_map(move |k| Geometry {
                c,
                h,
                w,
                k,
                stride: (sh, sw),
                pad: (ph, pw),
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_forward_matches_direct_loops(g in geometry(), filters in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = uniform(&mut rng, vec![g.c, g.h, g.w]);
        let weights = uniform(&mut rng, vec![filters, g.c * g.k.0 * g.k.1]);
        let patches = extract_patches(&img, g.k, g.stride, g.pad).unwrap();
        let got = conv_forward(&patches, &weights).unwrap();
        let rows: Vec<Vec<f64>> = weights.rows().map(<[f64]>::to_vec).collect();
        let want = common::naive_conv(img.data(), (g.c, g.h, g.w), &rows, g.k, g.stride, g.pad);
        prop_assert_eq!(got.len(), want.len());
        for (a, b) in got.data().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn patches_match_window_enumeration(g in geometry(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = uniform(&mut rng, vec![g.c, g.h, g.w]);
        let patches = extract_patches(&img, g.k, g.stride, g.pad).unwrap();
        let want = common::naive_patches(img.data(), (g.c, g.h, g.w), g.k, g.stride, g.pad);
        prop_assert_eq!(patches.rows(), want.len());
        for (p, row) in want.iter().enumerate() {
            prop_assert_eq!(patches.row(p), row.as_slice());
        }
    }

    #[test]
    fn pooled_values_are_window_maxima(
        f in 1usize..3, h in 1usize..9, w in 1usize..9, win in 1usize..4, stride in 1usize..4, seed in any::<u64>()
    ) {
        prop_assume!(win <= h && win <= w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, vec![f, h, w]);
        let out = max_pool(&x, (win, win), (stride, stride)).unwrap();
        let (oh, ow) = (out.shape()[1], out.shape()[2]);
        // a window starts at every stride step inside the input until one
        // has reached the far edge
        let starts = |n: usize| (0..n).step_by(stride).filter(|&s| s == 0 || s - stride + win < n).count();
        prop_assert_eq!(oh, starts(h));
        prop_assert_eq!(ow, starts(w));
        for c in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for y in oy * stride..(oy * stride + win).min(h) {
                        for xx in ox * stride..(ox * stride + win).min(w) {
                            m = m.max(x.get(&[c, y, xx]));
                        }
                    }
                    prop_assert_eq!(out.get(&[c, oy, ox]), m);
                }
            }
        }
    }

    #[test]
    fn wta_winner_is_translation_invariant(n in 1usize..6, d in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = WeightMatrix::random_uniform(n, d, &mut rng).unwrap();
        let x = uniform(&mut rng, vec![d]);
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let moved_w: Vec<Vec<f64>> = rows_of(&w)
            .into_iter()
            .map(|r| r.iter().zip(&shift).map(|(a, s)| a + s).collect())
            .collect();
        let moved_x: Vec<f64> = x.data().iter().zip(&shift).map(|(a, s)| a + s).collect();
        let before = wta_select(&w, &x).unwrap();
        let after = wta_select(&WeightMatrix::from_rows(&moved_w).unwrap(), &Tensor::new(vec![d], moved_x).unwrap()).unwrap();
        // shifting can only reorder exact ties, which random inputs avoid
        prop_assert_eq!(before, after);
    }

    #[test]
    fn batch_hpca_is_mean_of_single_sample_oracle(
        n in 1usize..5, d in 1usize..7, b in 1usize..6, relu in any::<bool>(), seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = WeightMatrix::random_uniform(n, d, &mut rng).unwrap();
        let x = uniform(&mut rng, vec![b, d]);
        let (f, fr): (Nonlinearity, fn(f64) -> f64) =
            if relu { (Nonlinearity::Relu, common::relu) } else { (Nonlinearity::Identity, |v| v) };
        let got = hpca_update(&w, &x, f, 0.1).unwrap();
        let mut want = vec![0.0; n * d];
        for row in x.rows() {
            let dw = common::naive_hpca(&rows_of(&w), row, fr, 0.1);
            want.iter_mut().zip(dw.iter().flatten()).for_each(|(a, v)| *a += v / b as f64);
        }
        for (a, v) in got.data().iter().zip(&want) {
            prop_assert!((a - v).abs() < 1e-12);
        }
    }
}

#[test]
fn small_linear_steps_reduce_representation_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for f in [Nonlinearity::Identity, Nonlinearity::Relu] {
        for _ in 0..20 {
            let w = WeightMatrix::random_uniform(3, 5, &mut rng).unwrap();
            let x = uniform(&mut rng, vec![64, 5]);
            let before = representation_error(&w, &x, f, 3).unwrap();
            let after = representation_error(
                &w.apply(&hpca_update(&w, &x, f, 1e-3).unwrap()).unwrap(),
                &x,
                f,
                3,
            )
            .unwrap();
            assert!(after <= before + 1e-12, "{f:?}: {before} -> {after}");
        }
    }
}

fn random_layer(rng: &mut ChaCha8Rng, rule: Rule) -> ConvHebbianLayer {
    let w = WeightMatrix::random_uniform(4, 2 * 3 * 3, rng).unwrap();
    let spec = ConvSpec {
        kernel: (3, 3),
        stride: (1, 1),
        padding: (1, 1),
    };
    let mut layer = ConvHebbianLayer::new("t", w, 2, spec, rule).unwrap();
    if rule.centers_input() {
        let mean = (0..18).map(|_| rng.random_range(-0.2..0.2)).collect();
        layer.centering = CenteringStats::from_parts(mean, 3).unwrap();
    }
    layer
}

#[test]
fn conv_update_ignores_image_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for rule in [
        Rule::Hpca(Nonlinearity::Relu),
        Rule::Hpca(Nonlinearity::Identity),
        Rule::Wta,
    ] {
        let layer = random_layer(&mut rng, rule);
        let batch = uniform(&mut rng, vec![5, 2, 6, 6]);
        let per = 2 * 36;
        let mut reversed = Vec::new();
        for i in (0..5).rev() {
            reversed.extend_from_slice(&batch.data()[i * per..(i + 1) * per]);
        }
        let a = conv_hebbian_step(&layer, &batch, 0.01).unwrap();
        let b = conv_hebbian_step(
            &layer,
            &Tensor::new(vec![5, 2, 6, 6], reversed).unwrap(),
            0.01,
        )
        .unwrap();
        assert!(a.max_abs_diff(&b) < 1e-14, "{rule:?}");
    }
}

#[test]
fn conv_update_is_linear_in_learning_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for rule in [Rule::Hpca(Nonlinearity::Relu), Rule::Wta] {
        let layer = random_layer(&mut rng, rule);
        let batch = uniform(&mut rng, vec![3, 2, 5, 5]);
        let a = conv_hebbian_step(&layer, &batch, 0.01).unwrap();
        let b = conv_hebbian_step(&layer, &batch, 0.04).unwrap();
        assert!(a.scale(4.0).max_abs_diff(&b) < 1e-14);
    }
}

#[test]
fn conv_update_of_a_thousand_patches_is_their_mean_dense_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    // 10 images of 1x10x10 with a 1x1 kernel: exactly 1000 patches
    let w = WeightMatrix::random_uniform(3, 1, &mut rng).unwrap();
    let spec = ConvSpec {
        kernel: (1, 1),
        stride: (1, 1),
        padding: (0, 0),
    };
    let layer =
        ConvHebbianLayer::new("t", w.clone(), 1, spec, Rule::Hpca(Nonlinearity::Relu)).unwrap();
    let batch = uniform(&mut rng, vec![10, 1, 10, 10]);
    let got = conv_hebbian_step(&layer, &batch, 0.05).unwrap();
    let rows = Tensor::new(vec![1000, 1], batch.data().to_vec()).unwrap();
    let want = hpca_update(&w, &rows, Nonlinearity::Relu, 0.05).unwrap();
    assert!(got.max_abs_diff(&want) < 1e-13);
}

#[test]
fn centering_stats_equal_the_exact_patch_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut stats = CenteringStats::new(2 * 3 * 3);
    let mut all = Vec::new();
    for _ in 0..7 {
        let img = uniform(&mut rng, vec![2, 5, 4]);
        let p = extract_patches(&img, (3, 3), (1, 1), (1, 1)).unwrap();
        all.extend(common::naive_patches(
            img.data(),
            (2, 5, 4),
            (3, 3),
            (1, 1),
            (1, 1),
        ));
        stats = update_centering(&stats, &p).unwrap();
    }
    assert_eq!(stats.count(), all.len() as u64);
    for (j, m) in stats.mean().iter().enumerate() {
        let exact = all.iter().map(|r| r[j]).sum::<f64>() / all.len() as f64;
        assert!((m - exact).abs() < 1e-14);
    }
}

#[test]
fn probe_loss_ignores_a_common_bias_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let p = LinearProbe::random(4, 6, 1e-3, &mut rng).unwrap();
    let x = uniform(&mut rng, vec![10, 6]);
    let y: Vec<usize> = (0..10).map(|i| i % 4).collect();
    let shifted = LinearProbe::new(p.weights.clone(), p.bias.map(|b| b + 3.5), p.l2).unwrap();
    let (a, b) = (
        probe_loss(&p, &x, &y).unwrap(),
        probe_loss(&shifted, &x, &y).unwrap(),
    );
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn small_sgd_step_lowers_probe_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    for _ in 0..20 {
        let p = LinearProbe::random(3, 5, 5e-4, &mut rng).unwrap();
        let x = uniform(&mut rng, vec![16, 5]);
        let y: Vec<usize> = (0..16).map(|_| rng.random_range(0..3)).collect();
        let before = probe_loss(&p, &x, &y).unwrap();
        let after = probe_loss(&probe_sgd_step(&p, &x, &y, 1e-2).unwrap(), &x, &y).unwrap();
        assert!(after < before);
    }
}

#[test]
fn accuracy_matches_argmax_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let p = LinearProbe::random(5, 4, 0.0, &mut rng).unwrap();
    let x = uniform(&mut rng, vec![50, 4]);
    let y: Vec<usize> = (0..50).map(|_| rng.random_range(0..5)).collect();
    let correct = x
        .rows()
        .zip(&y)
        .filter(|(row, &label)| {
            let scores: Vec<f64> = (0..5)
                .map(|k| {
                    p.weights
                        .row(k)
                        .iter()
                        .zip(*row)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        + p.bias.data()[k]
                })
                .collect();
            let best = (0..5).fold(0, |b, k| if scores[k] > scores[b] { k } else { b });
            best == label
        })
        .count();
    assert_eq!(
        evaluate_accuracy(&p, &x, &y).unwrap(),
        correct as f64 / 50.0
    );
}

#[test]
fn full_pca_reconstructs_the_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(48);
    let x = uniform(&mut rng, vec![200, 4]);
    let basis = batch_pca(&x, 4).unwrap();
    let cov = covariance(&x).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let r: f64 = (0..4)
                .map(|k| basis.eigenvalues[k] * basis.vector(k)[i] * basis.vector(k)[j])
                .sum();
            assert!((r - cov[i * 4 + j]).abs() < 1e-10);
        }
    }
    let trace: f64 = (0..4).map(|i| cov[i * 5]).sum();
    assert!((basis.eigenvalues.iter().sum::<f64>() - trace).abs() < 1e-10);
    let rows: Vec<Vec<f64>> = x.rows().map(<[f64]>::to_vec).collect();
    let naive = common::naive_covariance(&rows);
    assert!((0..16).all(|k| (naive[k / 4][k % 4] - cov[k]).abs() < 1e-12));
}

#[test]
fn pca_eigenvalues_are_rotation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(49);
    let x = uniform(&mut rng, vec![300, 2]);
    let (s, c) = 0.7f64.sin_cos();
    let rotated: Vec<f64> = x
        .rows()
        .flat_map(|r| [c * r[0] - s * r[1], s * r[0] + c * r[1]])
        .collect();
    let a = batch_pca(&x, 2).unwrap();
    let b = batch_pca(&Tensor::new(vec![300, 2], rotated).unwrap(), 2).unwrap();
    for i in 0..2 {
        assert!((a.eigenvalues[i] - b.eigenvalues[i]).abs() < 1e-12);
        let turned = [
            c * a.vector(i)[0] - s * a.vector(i)[1],
            s * a.vector(i)[0] + c * a.vector(i)[1],
        ];
        assert!(common::abs_cos(&turned, b.vector(i)) > 1.0 - 1e-10);
    }
}

#[test]
fn kmeans_objective_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let x = uniform(&mut rng, vec![400, 3]);
    let km = kmeans(&x, 6, &[0, 1, 2, 3, 4, 5], 100).unwrap();
    assert!(
        km.objective.windows(2).all(|p| p[1] <= p[0] + 1e-12),
        "{:?}",
        km.objective
    );
}
