mod common;

use common::{circle, fd_gradient, outline, random_image, random_shape, rel_l2, rng, square};
use proptest::prelude::*;
use wordart_core::diffrast::{flatten, loss_gradient, rasterize, RasterConfig, RasterError};
use wordart_core::geom::{CubicSegment, Point};
use wordart_core::image::Image;
use wordart_core::shapeparam::to_params;

fn cfg(w: usize, h: usize, tau: f64, subdiv: usize) -> RasterConfig {
    RasterConfig {
        width: w,
        height: h,
        smoothing_tau: tau,
        subdiv,
        supersample: 2,
    }
}

#[test]
fn quarter_circle_flattening_is_tight() {
    let arc = circle(0.0, 0.0, 100.0, 4)[0];
    let p = to_params(&outline(vec![vec![arc]]));
    let poly = &flatten(&p, 16)[0];
    assert_eq!(poly.len(), 17);
    // every vertex is within 0.05 px of the true circle (chords themselves
    // sag by r(1 - cos(pi/64)) ~ 0.12 px and are not part of the contract)
    for v in poly {
        assert!((v.norm() - 100.0).abs() < 0.05, "deviation {}", (v.norm() - 100.0).abs());
    }
}

#[test]
fn circle_area_within_two_percent() {
    let p = to_params(&outline(vec![circle(32.0, 32.0, 20.0, 8)]));
    let img = rasterize(&p, &RasterConfig::with_size(64, 64)).unwrap().image;
    let area = std::f64::consts::PI * 400.0;
    assert!((img.sum() - area).abs() / area < 0.02, "sum {}", img.sum());
}

#[test]
fn square_translation_is_exact() {
    let c = RasterConfig::with_size(48, 48);
    let base = rasterize(&to_params(&outline(vec![square(10.0, 12.0, 15.0)])), &c).unwrap().image;
    for (dx, dy) in [(3i64, 0i64), (0, 5), (4, -2), (-6, 7)] {
        let shifted = outline(vec![square(10.0 + dx as f64, 12.0 + dy as f64, 15.0)]);
        let img = rasterize(&to_params(&shifted), &c).unwrap().image;
        for y in 0..48i64 {
            for x in 0..48i64 {
                let (sx, sy) = (x - dx, y - dy);
                if (0..48).contains(&sx) && (0..48).contains(&sy) {
                    let a = img.get(x as usize, y as usize, 0);
                    let b = base.get(sx as usize, sy as usize, 0);
                    assert!((a - b).abs() <= 1e-12, "({x},{y}) {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn o_hole_is_empty() {
    let mut hole = circle(32.0, 32.0, 10.0, 8);
    hole = hole.iter().rev().map(|s| s.reversed()).collect();
    let o = outline(vec![circle(32.0, 32.0, 24.0, 8), hole]);
    let img = rasterize(&to_params(&o), &RasterConfig::with_size(64, 64)).unwrap().image;
    // hole radius 10 > 5 tau
    for (x, y) in [(31, 31), (31, 32), (32, 31), (32, 32)] {
        assert!(img.get(x, y, 0) < 0.05);
    }
    assert!(img.get(32, 12, 0) > 0.95);
}

#[test]
fn rectangle_matches_exact_area_fractions() {
    let c = cfg(32, 32, 0.05, 4);
    let img = rasterize(&to_params(&outline(vec![square(8.0, 8.0, 16.0)])), &c).unwrap().image;
    for y in 0..32 {
        for x in 0..32 {
            let exact = common::rect_overlap(x, y, 8.0, 8.0, 24.0, 24.0);
            if exact == 0.0 || exact == 1.0 {
                assert!((img.get(x, y, 0) - exact).abs() < 0.01, "({x},{y})");
            }
        }
    }
}

#[test]
fn smoothing_is_monotone() {
    let p = to_params(&outline(vec![square(16.0, 16.0, 32.0)]));
    let mut prev_in = 0.0;
    let mut prev_out = 1.0;
    for tau in [4.0, 2.0, 1.0, 0.5, 0.25] {
        let img = rasterize(&p, &cfg(64, 64, tau, 4)).unwrap().image;
        let (inside, outside) = (img.get(32, 32, 0), img.get(4, 4, 0));
        assert!(inside >= prev_in && outside <= prev_out);
        prev_in = inside;
        prev_out = outside;
    }
}

#[test]
fn translate_direction_matches_fd() {
    // off-grid center: a symmetric placement puts samples exactly on
    // bisectors where two edges tie for nearest
    let o = outline(vec![circle(24.31, 23.77, 12.0, 4)]);
    let p = to_params(&o);
    let c = cfg(48, 48, 0.8, 8);
    let ones = Image::new(48, 48, 1, vec![1.0; 48 * 48]).unwrap();
    let g = loss_gradient(&p, &c, &ones).unwrap();
    let analytic: f64 = g.values.iter().step_by(2).sum();
    let shift = |d: f64| {
        let mut q = p.clone();
        q.values.iter_mut().step_by(2).for_each(|v| *v += d);
        rasterize(&q, &c).unwrap().image.sum()
    };
    let h = 1e-3;
    let fd = (shift(h) - shift(-h)) / (2.0 * h);
    assert!((analytic - fd).abs() <= 1e-3 * fd.abs().max(1e-9), "{analytic} vs {fd}");
}

#[test]
fn random_shapes_match_finite_differences() {
    let c = cfg(48, 48, 0.8, 8);
    let mut passed = 0;
    for seed in 0..10 {
        let mut r = rng(seed);
        let p = to_params(&random_shape(&mut r, 48.0));
        let w = random_image(&mut r, 48, 48);
        let g = loss_gradient(&p, &c, &w).unwrap();
        assert!(g.values.iter().all(|v| v.is_finite()));
        if rel_l2(&g.values, &fd_gradient(&p, &c, &w, 1e-3)) < 1e-3 {
            passed += 1;
        }
    }
    assert!(passed >= 9, "{passed}/10");
}

#[test]
fn gradient_shape_is_checked() {
    let p = to_params(&outline(vec![square(0.0, 0.0, 4.0)]));
    let w = Image::zeros(8, 9, 1);
    assert!(matches!(
        loss_gradient(&p, &RasterConfig::with_size(8, 8), &w),
        Err(RasterError::DimensionMismatch { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coverage_is_strictly_inside_unit_interval(seed in 0u64..1000) {
        let p = to_params(&random_shape(&mut rng(seed), 32.0));
        let img = rasterize(&p, &cfg(32, 32, 1.0, 6)).unwrap().image;
        prop_assert!(img.data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn flatten_vertices_are_on_the_curve(
        coords in proptest::array::uniform8(-50.0..50.0f64),
        subdiv in 2usize..20,
    ) {
        let pt = |i: usize| Point::new(coords[i], coords[i + 1]);
        let seg = CubicSegment::new(pt(0), pt(2), pt(4), pt(6));
        let p = to_params(&outline(vec![vec![seg]]));
        let poly = &flatten(&p, subdiv)[0];
        prop_assert_eq!(poly.len(), subdiv + 1);
        for (k, v) in poly.iter().enumerate() {
            let expect = common::cubic_casteljau(&seg, k as f64 / subdiv as f64);
            prop_assert!(v.distance(expect) < 1e-9);
        }
    }
}
