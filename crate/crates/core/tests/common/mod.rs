//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use wordart_core::diffrast::{rasterize, RasterConfig};
use wordart_core::fontparse::{Contour, GlyphOutline};
use wordart_core::geom::{CubicSegment, Point};
use wordart_core::image::Image;
use wordart_core::shapeparam::{to_params, ParamVector};

pub mod stub;

pub const SQUARE_TTF: &[u8] = include_bytes!("../fixtures/square.ttf");

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn outline(contours: Vec<Vec<CubicSegment>>) -> GlyphOutline {
    GlyphOutline {
        contours: contours.into_iter().map(Contour::new).collect(),
        em_size_px: 64.0,
        advance_px: 64.0,
    }
}

/// Closed polygon made of straight cubics.
pub fn polygon(points: &[(f64, f64)]) -> Vec<CubicSegment> {
    (0..points.len())
        .map(|i| {
            let (ax, ay) = points[i];
            let (bx, by) = points[(i + 1) % points.len()];
            CubicSegment::line(Point::new(ax, ay), Point::new(bx, by))
        })
        .collect()
}

pub fn square(x0: f64, y0: f64, side: f64) -> Vec<CubicSegment> {
    polygon(&[(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)])
}

/// Circle of radius `r` from `n` cubic arcs with the standard tangent length.
pub fn circle(cx: f64, cy: f64, r: f64, n: usize) -> Vec<CubicSegment> {
    let step = std::f64::consts::TAU / n as f64;
    let k = 4.0 / 3.0 * (step / 4.0).tan() * r;
    (0..n)
        .map(|i| {
            let a0 = step * i as f64;
            let a1 = a0 + step;
            let p0 = Point::new(cx + r * a0.cos(), cy + r * a0.sin());
            let p3 = Point::new(cx + r * a1.cos(), cy + r * a1.sin());
            let p1 = Point::new(p0.x - k * a0.sin(), p0.y + k * a0.cos());
            let p2 = Point::new(p3.x + k * a1.sin(), p3.y - k * a1.cos());
            CubicSegment::new(p0, p1, p2, p3)
        })
        .collect()
}

fn reversed(segs: Vec<CubicSegment>) -> Vec<CubicSegment> {
    segs.iter().rev().map(|s| s.reversed()).collect()
}

/// Wobbly closed loop around `(cx, cy)`: `n` cubic arcs whose control
/// points sit at jittered radii.
pub fn blob(r: &mut impl Rng, cx: f64, cy: f64, radius: f64, n: usize) -> Vec<CubicSegment> {
    let step = std::f64::consts::TAU / n as f64;
    let at = |a: f64, rr: f64| Point::new(cx + rr * a.cos(), cy + rr * a.sin());
    let knots: Vec<Point> = (0..n)
        .map(|i| at(step * i as f64, radius * r.random_range(0.8..1.2)))
        .collect();
    (0..n)
        .map(|i| {
            let a = step * i as f64;
            let p1 = at(a + step / 3.0, radius * r.random_range(0.8..1.25));
            let p2 = at(a + 2.0 * step / 3.0, radius * r.random_range(0.8..1.25));
            CubicSegment::new(knots[i], p1, p2, knots[(i + 1) % n])
        })
        .collect()
}

/// One blob, or a blob with a blob-shaped hole, or two separate blobs,
/// all inside a `size`×`size` canvas.
pub fn random_shape(r: &mut impl Rng, size: f64) -> GlyphOutline {
    let c = size / 2.0;
    match r.random_range(0..3) {
        0 => {
            let n = r.random_range(3..6);
            outline(vec![blob(r, c, c, size * 0.3, n)])
        }
        1 => {
            let outer = blob(r, c, c, size * 0.33, 4);
            let inner = reversed(blob(r, c, c, size * 0.13, 3));
            outline(vec![outer, inner])
        }
        _ => {
            let a = blob(r, size * 0.3, size * 0.32, size * 0.16, 3);
            let b = blob(r, size * 0.68, size * 0.66, size * 0.16, 4);
            outline(vec![a, b])
        }
    }
}

pub fn random_image(r: &mut impl Rng, w: usize, h: usize) -> Image {
    let data = (0..w * h).map(|_| r.random_range(0.0..1.0)).collect();
    Image::new(w, h, 1, data).unwrap()
}

pub fn weighted_sum(img: &Image, weights: &Image) -> f64 {
    img.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// Central finite differences of `sum(weights * rasterize(params))`,
/// perturbing one stored coordinate at a time.
pub fn fd_gradient(params: &ParamVector, cfg: &RasterConfig, weights: &Image, h: f64) -> Vec<f64> {
    let eval = |p: &ParamVector| weighted_sum(&rasterize(p, cfg).unwrap().image, weights);
    (0..params.len())
        .map(|i| {
            let mut plus = params.clone();
            plus.values[i] += h;
            let mut minus = params.clone();
            minus.values[i] -= h;
            (eval(&plus) - eval(&minus)) / (2.0 * h)
        })
        .collect()
}

pub fn rel_l2(analytic: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = analytic.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    (num / den.max(1e-300)).sqrt()
}

pub fn params_of(o: &GlyphOutline) -> ParamVector {
    to_params(o)
}

/// Quadratic Bézier in power-free Bernstein form.
pub fn quad_eval(q0: Point, q1: Point, q2: Point, t: f64) -> Point {
    let u = 1.0 - t;
    Point::new(
        u * u * q0.x + 2.0 * u * t * q1.x + t * t * q2.x,
        u * u * q0.y + 2.0 * u * t * q1.y + t * t * q2.y,
    )
}

/// Cubic Bézier evaluated by de Casteljau, independent of the library's
/// Bernstein evaluation.
pub fn cubic_casteljau(s: &CubicSegment, t: f64) -> Point {
    let l = |a: Point, b: Point| Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
    let [a, b, c, d] = s.points();
    let (ab, bc, cd) = (l(a, b), l(b, c), l(c, d));
    let (abc, bcd) = (l(ab, bc), l(bc, cd));
    l(abc, bcd)
}

/// Exact coverage fraction of pixel `(x, y)` by an axis-aligned rectangle.
pub fn rect_overlap(x: usize, y: usize, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let ox = ((x as f64 + 1.0).min(x1) - (x as f64).max(x0)).max(0.0);
    let oy = ((y as f64 + 1.0).min(y1) - (y as f64).max(y0)).max(0.0);
    ox * oy
}

fn random_scalar(r: &mut impl Rng) -> Value {
    match r.random_range(0..9) {
        0 => Value::Null,
        1 => json!(r.random::<bool>()),
        2 => json!(r.random_range(-5i64..80)),
        3 => json!(r.random_range(-1.0..2.0)),
        4 => json!(r.random::<u64>()),
        5 => json!(["circle", "heart", "leaf", "diamond", "star", "blob", ""].choose(r).unwrap()),
        6 => json!("x".repeat(r.random_range(0..3000))),
        7 => json!([r.random_range(0..4), -1, "a"]),
        _ => json!({ "nested": r.random_range(0..3) }),
    }
}

/// A planner reply: mostly objects mixing well-typed, ill-typed and
/// unknown fields, sometimes a bare scalar.
pub fn random_plan_doc(r: &mut impl Rng) -> Value {
    const FIELDS: &[&str] = &[
        "semantic_concept",
        "target_shape",
        "style_prompt",
        "texture_prompt",
        "num_variants",
        "min_successes_K",
        "retry_budget",
        "base_seed",
        "region_policy",
        "unknown_field",
    ];
    if r.random_ratio(1, 20) {
        return random_scalar(r);
    }
    let mut m = Map::new();
    for f in FIELDS {
        if !r.random_ratio(1, 2) {
            continue;
        }
        let v = if *f == "region_policy" && r.random_ratio(2, 3) {
            let mut p = Map::new();
            for k in ["mode", "deform_ratio", "contour_indices"] {
                if r.random::<bool>() {
                    let v = match (k, r.random_range(0..3)) {
                        ("mode", 0) => json!(["all", "contour_indices", "saliency_ratio", "none"].choose(r).unwrap()),
                        ("deform_ratio", 0) => json!(r.random_range(0.0..1.0)),
                        _ => random_scalar(r),
                    };
                    p.insert(k.to_string(), v);
                }
            }
            Value::Object(p)
        } else if r.random_ratio(1, 2) {
            match *f {
                "num_variants" => json!(r.random_range(1..8)),
                "min_successes_K" => json!(r.random_range(1..10)),
                "retry_budget" => json!(r.random_range(0..4)),
                "target_shape" => json!("star"),
                _ => json!("cat"),
            }
        } else {
            random_scalar(r)
        };
        m.insert(f.to_string(), v);
    }
    Value::Object(m)
}
