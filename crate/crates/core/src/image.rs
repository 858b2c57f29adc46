//! RGB image buffers in floating point, gamma transfer and PNG I/O.

use std::path::Path;

use crate::error::{shape_err, Error, Result};

/// Default display gamma used for linearization.
pub const DEFAULT_GAMMA: f64 = 2.2;

/// An `H×W×3` image stored row-major, channels interleaved.
///
/// Values are nominally in `[0, 1]`. Whether they are gamma-encoded or
/// linear is up to the caller; the blur routines track that explicitly.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, [0.0; 3])
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self { height, width, data }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(shape_err(height * width * 3, data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(shape_err(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// ITU-R BT.601 luma.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(shape_err(
                format!("crop within {}x{}", self.height, self.width),
                format!("{height}x{width}@({top},{left})"),
            ));
        }
        Ok(Image::from_fn(height, width, |y, x| self.get(top + y, left + x)))
    }

    /// Quantizes to 8 bits per channel, rounding to nearest.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for (dst, src) in out.as_mut().iter_mut().zip(&self.data) {
            *dst = (src.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        out
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Image {
        Image {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let img = image::open(path)?.to_rgb8();
        Ok(Image::from_rgb8(&img))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Image> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        Ok(Image::from_rgb8(&img))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("gamma must be positive, got {gamma}")))
    }
}

fn check_nonnegative(image: &Image) -> Result<()> {
    match image.data.iter().find(|v| !(**v >= 0.0)) {
        Some(v) => Err(Error::Domain(format!(
            "gamma transfer needs non-negative finite values, found {v}"
        ))),
        None => Ok(()),
    }
}

/// Display space to linear intensity: `v^gamma`.
pub fn gamma_decode(image: &Image, gamma: f64) -> Result<Image> {
    check_gamma(gamma)?;
    check_nonnegative(image)?;
    Ok(image.map(|v| v.powf(gamma)))
}

/// Linear intensity to display space: `v^(1/gamma)`.
pub fn gamma_encode(image: &Image, gamma: f64) -> Result<Image> {
    check_gamma(gamma)?;
    check_nonnegative(image)?;
    let inv = 1.0 / gamma;
    Ok(image.map(|v| v.powf(inv)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_fixed_points() {
        let img = Image::from_vec(1, 2, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let lin = gamma_decode(&img, DEFAULT_GAMMA).unwrap();
        assert_eq!(lin.data(), img.data());
    }

    #[test]
    fn gamma_half() {
        let img = Image::filled(1, 1, [0.5; 3]);
        let lin = gamma_decode(&img, 2.2).unwrap();
        // 0.5^2.2 = exp(-2.2 ln 2)
        let expected = (-2.2f64 * std::f64::consts::LN_2).exp();
        assert!((lin.get(0, 0)[0] - expected).abs() < 1e-15);
        assert!((lin.get(0, 0)[0] - 0.217_637_640_824_031).abs() < 1e-12);
    }

    #[test]
    fn gamma_rejects_negative_and_bad_gamma() {
        let img = Image::filled(1, 1, [-0.1, 0.2, 0.3]);
        assert!(matches!(gamma_decode(&img, 2.2), Err(Error::Domain(_))));
        let ok = Image::filled(1, 1, [0.1; 3]);
        assert!(gamma_decode(&ok, 0.0).is_err());
        assert!(gamma_encode(&ok, -1.0).is_err());
    }

    #[test]
    fn png_round_trip_is_8bit() {
        let img = Image::from_fn(4, 5, |y, x| [y as f64 / 4.0, x as f64 / 5.0, 0.5]);
        let bytes = img.encode_png().unwrap();
        let back = Image::decode_png(&bytes).unwrap();
        assert_eq!(back.dims(), (4, 5));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
