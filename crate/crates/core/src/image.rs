//! Row-major float rasters and their on-disk encodings.
//!
//! Every stage of the pipeline exchanges [`Image`]s: one or three channels of
//! `f64` values in `[0, 1]`. Images leave the process either as 8-bit PNG
//! (`round(255 * v)`) or as a portable float map (PFM) when full precision is
//! needed.

use std::io::{BufRead, Cursor, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image data length {actual} does not match {width}x{height}x{channels}")]
    BadLength {
        width: usize,
        height: usize,
        channels: usize,
        actual: usize,
    },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    BadChannels(usize),
    #[error("image dimensions must be positive")]
    Empty,
    #[error("pixel value {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("png codec: {0}")]
    Png(#[from] image::ImageError),
    #[error("pfm: {0}")]
    Pfm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty);
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::BadChannels(channels));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::BadLength {
                width,
                height,
                channels,
                actual: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::OutOfRange(bad));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image, clamping every value into `[0, 1]` (NaN maps to 0).
    pub fn from_fn_clamped(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(clamp01(f(x, y, c)));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::from_fn_clamped(width, height, channels, |_, _, _| 0.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Single-channel view: identity for gray images, Rec. 601 luma for RGB.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| clamp01(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]))
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Snap every value to the nearest 8-bit level, i.e. what survives a PNG
    /// round trip.
    pub fn quantized(&self) -> Image {
        Image {
            data: self.data.iter().map(|&v| f64::from(to_u8(v)) / 255.0).collect(),
            ..self.clone()
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn to_png(&self) -> Result<Vec<u8>, ImageError> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        let mut out = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(encoder, &bytes, self.width as u32, self.height as u32, color)?;
        Ok(out)
    }

    /// Decodes a PNG. Gray (with or without alpha) becomes one channel,
    /// everything else three; alpha is dropped.
    pub fn from_png(bytes: &[u8]) -> Result<Image, ImageError> {
        let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
        let (width, height) = (decoded.width() as usize, decoded.height() as usize);
        if width == 0 || height == 0 {
            return Err(ImageError::Empty);
        }
        let gray = matches!(
            decoded.color(),
            image::ColorType::L8 | image::ColorType::La8 | image::ColorType::L16 | image::ColorType::La16
        );
        let (channels, raw) = if gray {
            (1, decoded.to_luma8().into_raw())
        } else {
            (3, decoded.to_rgb8().into_raw())
        };
        let data = raw.into_iter().map(|b| f64::from(b) / 255.0).collect();
        Image::new(width, height, channels, data)
    }

    /// Portable float map, little-endian, bottom row first.
    pub fn to_pfm(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let magic = if self.channels == 3 { "PF" } else { "Pf" };
        write!(out, "{magic}\n{} {}\n-1.0\n", self.width, self.height).expect("write to vec");
        for y in (0..self.height).rev() {
            let row = &self.data[y * self.width * self.channels..(y + 1) * self.width * self.channels];
            for &v in row {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_pfm(bytes: &[u8]) -> Result<Image, ImageError> {
        let mut cursor = Cursor::new(bytes);
        let mut line = String::new();
        let mut next_line = |cursor: &mut Cursor<&[u8]>| -> Result<String, ImageError> {
            line.clear();
            cursor.read_line(&mut line)?;
            Ok(line.trim().to_string())
        };
        let channels = match next_line(&mut cursor)?.as_str() {
            "PF" => 3,
            "Pf" => 1,
            other => return Err(ImageError::Pfm(format!("bad magic {other:?}"))),
        };
        let dims = next_line(&mut cursor)?;
        let mut it = dims.split_whitespace().map(str::parse::<usize>);
        let (width, height) = match (it.next(), it.next()) {
            (Some(Ok(w)), Some(Ok(h))) => (w, h),
            _ => return Err(ImageError::Pfm(format!("bad dimensions {dims:?}"))),
        };
        let scale: f64 = next_line(&mut cursor)?
            .parse()
            .map_err(|_| ImageError::Pfm("bad scale".into()))?;
        let n = width * height * channels;
        let mut raw = vec![0u8; n * 4];
        cursor.read_exact(&mut raw)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| {
                let arr = [b[0], b[1], b[2], b[3]];
                f64::from(if scale < 0.0 {
                    f32::from_le_bytes(arr)
                } else {
                    f32::from_be_bytes(arr)
                })
            })
            .collect();
        let row = width * channels;
        let mut data = Vec::with_capacity(n);
        for y in (0..height).rev() {
            data.extend_from_slice(&values[y * row..(y + 1) * row]);
        }
        Image::new(width, height, channels, data)
    }
}

#[inline]
pub(crate) fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (clamp01(v) * 255.0).round() as u8
}
