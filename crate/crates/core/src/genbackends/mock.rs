//! Deterministic procedural stand-ins for the stylization and texturing
//! models. Outputs are pure functions of the request.

use sha2::{Digest, Sha256};

use super::{BackendError, StyleBackend, StylizeRequest, TexturizeRequest};
use crate::image::Image;

/// Chebyshev radius of the band around control edges that receives texture.
pub const TEXTURE_BAND_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

pub(crate) fn prompt_hash(prompt: &str) -> u64 {
    let digest = Sha256::digest(prompt.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
fn value_noise(key: u64, x: usize, y: usize, cell: usize) -> f64 {
    let lattice = |ix: usize, iy: usize| {
        unit(splitmix(
            key ^ splitmix((ix as u64).wrapping_mul(0x1656_67B1_9E37_79F9) ^ (iy as u64).wrapping_mul(0x27D4_EB2F_1656_67C5)),
        ))
    };
    let fx = (x as f64 + 0.5) / cell as f64;
    let fy = (y as f64 + 0.5) / cell as f64;
    let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
    let top = lattice(ix, iy) * (1.0 - tx) + lattice(ix + 1, iy) * tx;
    let bottom = lattice(ix, iy + 1) * (1.0 - tx) + lattice(ix + 1, iy + 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

fn palette(key: u64, lo: f64, span: f64) -> [f64; 3] {
    let h = splitmix(key);
    [0, 1, 2].map(|k| lo + span * (((h >> (8 * k)) & 0xFF) as f64 / 255.0))
}

impl MockBackend {
    /// Flat background color of [`StyleBackend::texturize`] for a prompt and
    /// seed; every channel lies in `[0.1, 0.4]`.
    pub fn texture_background(prompt: &str, seed: u64) -> [f64; 3] {
        palette(prompt_hash(prompt) ^ splitmix(seed ^ 0x7E47), 0.1, 0.3)
    }
}

impl StyleBackend for MockBackend {
    /// `rgb = color(prompt) · (0.75 + 0.25·noise(seed, prompt)) · (1 − s + s·depth)`
    fn stylize(&self, req: &StylizeRequest) -> Result<Image, BackendError> {
        req.validate()?;
        let ph = prompt_hash(&req.prompt);
        let color = palette(ph, 0.35, 0.65);
        let key = ph ^ splitmix(req.seed);
        let s = req.strength;
        let depth = &req.depth;
        Ok(Image::from_fn_clamped(depth.width(), depth.height(), 3, |x, y, c| {
            let n = value_noise(key, x, y, 8);
            color[c] * (0.75 + 0.25 * n) * (1.0 - s + s * depth.get(x, y, 0))
        }))
    }

    /// `rgb = bg + w·(tex − bg)` with `w` the control map dilated by
    /// [`TEXTURE_BAND_RADIUS`]; `bg` is [`MockBackend::texture_background`]
    /// and `tex ≥ 0.55` per channel, so any `w > 0` changes the pixel.
    fn texturize(&self, req: &TexturizeRequest) -> Result<Image, BackendError> {
        req.validate()?;
        let ph = prompt_hash(&req.prompt);
        let bg = Self::texture_background(&req.prompt, req.seed);
        let tint = palette(ph ^ 0xC01D, 0.0, 1.0);
        let key = ph ^ splitmix(req.seed.wrapping_add(1));
        let control = &req.control;
        let (w, h) = (control.width(), control.height());
        let r = TEXTURE_BAND_RADIUS as isize;
        let mut weight = vec![0.0f64; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut m = 0.0f64;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (sx, sy) = (x + dx, y + dy);
                        if sx >= 0 && sy >= 0 && sx < w as isize && sy < h as isize {
                            m = m.max(control.get(sx as usize, sy as usize, 0));
                        }
                    }
                }
                weight[y as usize * w + x as usize] = m;
            }
        }
        Ok(Image::from_fn_clamped(w, h, 3, |x, y, c| {
            let wgt = weight[y * w + x];
            if wgt == 0.0 {
                return bg[c];
            }
            let n = value_noise(key, x, y, 4);
            let tex = 0.55 + 0.45 * (0.5 * tint[c] + 0.5 * n);
            bg[c] + wgt * (tex - bg[c])
        }))
    }
}
