use iadg_core::label::Class;
use iadg_core::numcore::{Rng, Tensor, NORM_EPS};
use iadg_core::style::{
    assemble_style, build_bank, compute_style_stats, draw_targets, fps_select, identity_targets, reassemble, sample_weights, StyleAugment, StyleBank, StyleStats, StyleTargets,
};
use proptest::prelude::*;

fn random(shape: &[usize], rng: &mut Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| scale * rng.normal() + rng.range(-1.0, 1.0)).collect()).unwrap()
}

/// Greedy max-min selection recomputed from scratch at every step.
fn brute_force_fps(points: &[Vec<f64>], l: usize) -> Vec<usize> {
    let n = points.len();
    if l >= n {
        return (0..n).collect();
    }
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centroid = vec![0.0; points[0].len()];
    for p in points {
        for (c, v) in centroid.iter_mut().zip(p) {
            *c += v / n as f64;
        }
    }
    let mut first = 0;
    for i in 1..n {
        if d(&points[i], &centroid) > d(&points[first], &centroid) {
            first = i;
        }
    }
    let mut sel = vec![first];
    while sel.len() < l {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|i| !sel.contains(i)) {
            let m = sel.iter().map(|&s| d(&points[i], &points[s])).fold(f64::INFINITY, f64::min);
            if best.map_or(true, |(_, bm)| m > bm) {
                best = Some((i, m));
            }
        }
        sel.push(best.unwrap().0);
    }
    sel
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fps_equals_brute_force_oracle(
        pts in prop::collection::vec(prop::collection::vec(-3i32..4, 3), 1..=64),
        l in 1usize..70,
    ) {
        // Integer coordinates make equal distances common, exercising ties.
        let points: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|&v| v as f64).collect()).collect();
        prop_assert_eq!(fps_select(&points, l).unwrap(), brute_force_fps(&points, l));
    }

    #[test]
    fn fps_on_continuous_points(
        pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..=64),
        l in 1usize..20,
    ) {
        prop_assert_eq!(fps_select(&pts, l).unwrap(), brute_force_fps(&pts, l));
    }
}

#[test]
fn fps_exhaustive_small_sets() {
    let mut rng = Rng::new(5);
    for n in 1..=64 {
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.below(5) as f64, rng.below(5) as f64]).collect();
        for l in 1..=n {
            assert_eq!(fps_select(&pts, l).unwrap(), brute_force_fps(&pts, l), "n={n} l={l}");
        }
    }
}

#[test]
fn dirichlet_draws_lie_on_simplex_with_uniform_mean() {
    for l in [2, 16, 64] {
        let mut rng = Rng::new(l as u64);
        let draws = 10_000;
        let mut mean = vec![0.0; l];
        for _ in 0..draws {
            let w = sample_weights(l, &mut rng);
            assert_eq!(w.len(), l);
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (m, v) in mean.iter_mut().zip(&w) {
                *m += v / draws as f64;
            }
        }
        for m in mean {
            assert!((m - 1.0 / l as f64).abs() < 0.02, "L={l}: {m}");
        }
    }
}

#[test]
fn adain_identity_is_exact() {
    let mut rng = Rng::new(8);
    for _ in 0..20 {
        let scale = rng.range(0.2, 4.0);
        let f = random(&[3, 5, 4, 4], &mut rng, scale);
        let out = reassemble(&f, &identity_targets(&f).unwrap(), NORM_EPS).unwrap();
        for (a, b) in out.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn reassembled_features_carry_target_statistics() {
    let mut rng = Rng::new(9);
    for _ in 0..20 {
        let scale = rng.range(0.2, 4.0);
        let f = random(&[2, 6, 5, 5], &mut rng, scale);
        let mu = Tensor::new(&[2, 6], (0..12).map(|_| rng.range(-2.0, 2.0)).collect()).unwrap();
        let sigma = Tensor::new(&[2, 6], (0..12).map(|_| rng.range(0.1, 3.0)).collect()).unwrap();
        let targets = StyleTargets { mu: mu.clone(), sigma: sigma.clone() };
        // The normalizer's eps shrinks the output std by sqrt(var/(var+eps));
        // a negligible eps isolates the transplant itself.
        let out = reassemble(&f, &targets, 1e-14).unwrap();
        let stats = compute_style_stats(&out, &[Class::Real, Class::Real], 0.0).unwrap();
        for (n, s) in stats.iter().enumerate() {
            for c in 0..6 {
                assert!((s.mu[c] - mu.data()[n * 6 + c]).abs() < 1e-6);
                assert!((s.sigma[c] - sigma.data()[n * 6 + c]).abs() < 1e-6);
            }
        }
        // With the training eps the shrink factor is exactly as predicted.
        let out = reassemble(&f, &targets, NORM_EPS).unwrap();
        let before = compute_style_stats(&f, &[Class::Real, Class::Real], 0.0).unwrap();
        let after = compute_style_stats(&out, &[Class::Real, Class::Real], 0.0).unwrap();
        for n in 0..2 {
            for c in 0..6 {
                let var = before[n].sigma[c].powi(2);
                let expect = sigma.data()[n * 6 + c] * (var / (var + NORM_EPS)).sqrt();
                assert!((after[n].sigma[c] - expect).abs() < 1e-9);
            }
        }
    }
}

fn banded_bank(rng: &mut Rng, l: usize, c: usize) -> StyleBank {
    // Real styles live in [1, 2]^c, spoof styles in [−2, −1]^c, so any
    // convex combination reveals which class it was drawn from.
    let make = |rng: &mut Rng, lo: f64, class| StyleStats {
        mu: (0..c).map(|_| rng.range(lo, lo + 1.0)).collect(),
        sigma: (0..c).map(|_| rng.range(lo.abs(), lo.abs() + 1.0)).collect(),
        class,
    };
    let stats: Vec<StyleStats> = (0..3 * l).map(|i| if i % 2 == 0 { make(rng, 1.0, Class::Real) } else { make(rng, -2.0, Class::Spoof) }).collect();
    build_bank(&stats, l, 0).unwrap()
}

#[test]
fn assembled_styles_never_cross_classes() {
    let mut rng = Rng::new(10);
    let bank = banded_bank(&mut rng, 8, 4);
    let mut checked = 0;
    while checked < 10_000 {
        let batch: Vec<StyleStats> = (0..16)
            .map(|i| StyleStats {
                mu: vec![0.0; 4],
                sigma: vec![1.0; 4],
                class: if (i + checked) % 3 == 0 { Class::Spoof } else { Class::Real },
            })
            .collect();
        let t = draw_targets(&batch, Some(&bank), StyleAugment::Csa, &mut rng).unwrap().unwrap();
        for (i, s) in batch.iter().enumerate() {
            let mu = &t.mu.data()[i * 4..(i + 1) * 4];
            let inside = match s.class {
                Class::Real => mu.iter().all(|&m| (1.0 - 1e-12..=2.0 + 1e-12).contains(&m)),
                Class::Spoof => mu.iter().all(|&m| (-2.0 - 1e-12..=-1.0 + 1e-12).contains(&m)),
            };
            assert!(inside, "{:?} got {mu:?}", s.class);
            checked += 1;
        }
    }
}

#[test]
fn bank_holds_up_to_l_styles_per_class() {
    let mut rng = Rng::new(12);
    let bank = banded_bank(&mut rng, 5, 3);
    assert_eq!(bank.real.len(), 5);
    assert_eq!(bank.spoof.len(), 5);
    assert!(bank.real.iter().all(|s| s.class == Class::Real));
    assert!(bank.spoof.iter().all(|s| s.class == Class::Spoof));
    let capped = banded_bank(&mut rng, 64, 3);
    assert_eq!(capped.real.len(), 64);
}

#[test]
fn one_hot_weights_reproduce_a_basis_style() {
    let mut rng = Rng::new(13);
    let bank = banded_bank(&mut rng, 4, 3);
    for k in 0..4 {
        let mut w = vec![0.0; 4];
        w[k] = 1.0;
        let (mu, sigma) = assemble_style(&w, &bank, Class::Spoof).unwrap();
        assert_eq!(mu, bank.spoof[k].mu);
        assert_eq!(sigma, bank.spoof[k].sigma);
    }
}
