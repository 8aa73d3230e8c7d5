//! Condition maps derived from glyph rasters: a normalized interior distance
//! transform for depth conditioning and a Sobel edge map for control
//! conditioning.

use crate::image::Image;

/// Exact 1-D squared Euclidean distance transform (lower envelope of
/// parabolas) of `f`, written into `out`.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    // skip leading infinite cells so the envelope starts from a finite one
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let s = loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so k never underflows
            if s <= z[k] {
                k -= 1;
            } else {
                break s;
            }
        };
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Interior depth: binarize at 0.5, take each interior pixel's Euclidean
/// distance to the nearest exterior pixel (pixels beyond the border count as
/// exterior), normalize by the largest distance. Exterior pixels are 0.
pub fn depth_map(glyph_raster: &Image) -> Image {
    let lum = glyph_raster.luminance();
    let (w, h) = (lum.width(), lum.height());
    // pad by one exterior pixel on each side
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![0.0f64; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            let interior = x >= 1 && y >= 1 && x <= w && y <= h && lum.get(x - 1, y - 1, 0) >= 0.5;
            grid[y * pw + x] = if interior { f64::INFINITY } else { 0.0 };
        }
    }
    let mut col = vec![0.0; ph];
    let mut col_out = vec![0.0; ph];
    for x in 0..pw {
        for y in 0..ph {
            col[y] = grid[y * pw + x];
        }
        edt_1d(&col, &mut col_out);
        for y in 0..ph {
            grid[y * pw + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; pw];
    for y in 0..ph {
        edt_1d(&grid[y * pw..(y + 1) * pw], &mut row_out);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&row_out);
    }
    let dist: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| grid[(y + 1) * pw + x + 1].sqrt())
        .collect();
    let max = dist.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Image::zeros(w, h, 1);
    }
    Image::from_fn_clamped(w, h, 1, |x, y, _| dist[y * w + x] / max)
}

/// Sobel gradient magnitude with edge-clamped borders, normalized by its
/// maximum (all zeros for a flat image). RGB input is reduced to luminance.
pub fn control_map(image: &Image) -> Image {
    let lum = image.luminance();
    let (w, h) = (lum.width() as isize, lum.height() as isize);
    let at = |x: isize, y: isize| lum.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize, 0);
    let mut mag = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            mag.push((gx * gx + gy * gy).sqrt());
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    let (w, h) = (w as usize, h as usize);
    if max == 0.0 {
        return Image::zeros(w, h, 1);
    }
    Image::from_fn_clamped(w, h, 1, |x, y, _| mag[y * w + x] / max)
}
