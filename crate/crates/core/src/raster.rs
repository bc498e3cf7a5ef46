//! Float image and mask containers, bilinear sampling, and quality metrics.
//!
//! Intensities are normalized to `[0,1]` on load (8-bit value / 255) so the
//! energy hyperparameters keep their meaning across inputs. All types are
//! immutable after construction; sampling and metrics are pure.

use crate::{Error, Result};
use std::path::Path;

/// Floating-point raster with 1 or 3 interleaved channels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageF {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParam(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("non-finite intensity".into()));
        }
        Ok(ImageF {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        ImageF {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    /// Build from a per-pixel closure returning one value per channel.
    pub fn from_fn<F: FnMut(usize, usize) -> [f64; 3]>(
        width: usize,
        height: usize,
        channels: usize,
        mut f: F,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                data.extend_from_slice(&px[..channels]);
            }
        }
        ImageF {
            width,
            height,
            channels,
            data,
        }
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

    #[inline]
    pub fn get(&self, x: usize, y: usize, ch: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    /// Pixel fetch treating out-of-bounds coordinates as 0.
    #[inline]
    fn get_or_zero(&self, x: i64, y: i64, ch: usize) -> f64 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.get(x as usize, y as usize, ch)
        }
    }

    /// Bilinear interpolation of the 2x2 neighborhood around `(x, y)`.
    ///
    /// Returns the per-channel value and a validity flag. The sample is valid
    /// iff `(x, y)` lies in the closed box `[0, width-1] x [0, height-1]`;
    /// outside, missing neighbors contribute 0 and the flag is false, so
    /// warping an all-one image reproduces the validity mask exactly.
    #[inline]
    pub fn bilinear_sample(&self, x: f64, y: f64) -> ([f64; 3], bool) {
        let mut out = [0.0; 3];
        if !x.is_finite() || !y.is_finite() {
            return (out, false);
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let (x1, y1) = (x0 + 1, y0 + 1);
        // Skip entirely when no neighbor can land inside the raster. The
        // nested-lerp form is exact on constant images, so warping an all-one
        // image reproduces the validity mask bit for bit.
        if x1 >= 0 && y1 >= 0 && x0 < self.width as i64 && y0 < self.height as i64 {
            for ch in 0..self.channels {
                let p00 = self.get_or_zero(x0, y0, ch);
                let p10 = self.get_or_zero(x1, y0, ch);
                let p01 = self.get_or_zero(x0, y1, ch);
                let p11 = self.get_or_zero(x1, y1, ch);
                let top = p00 + fx * (p10 - p00);
                let bot = p01 + fx * (p11 - p01);
                out[ch] = top + fy * (bot - top);
            }
        }
        let valid = x >= 0.0
            && y >= 0.0
            && x <= (self.width - 1) as f64
            && y <= (self.height - 1) as f64;
        (out, valid)
    }

    /// Spatial gradient of the bilinear interpolant at `(x, y)`, per channel.
    /// Piecewise constant within each cell; used by photometric gradients.
    #[inline]
    pub fn bilinear_gradient(&self, x: f64, y: f64) -> ([f64; 3], [f64; 3]) {
        let mut dx = [0.0; 3];
        let mut dy = [0.0; 3];
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let (x1, y1) = (x0 + 1, y0 + 1);
        for ch in 0..self.channels {
            let p00 = self.get_or_zero(x0, y0, ch);
            let p10 = self.get_or_zero(x1, y0, ch);
            let p01 = self.get_or_zero(x0, y1, ch);
            let p11 = self.get_or_zero(x1, y1, ch);
            dx[ch] = (1.0 - fy) * (p10 - p00) + fy * (p11 - p01);
            dy[ch] = (1.0 - fx) * (p01 - p00) + fx * (p11 - p10);
        }
        (dx, dy)
    }

    /// Rec. 601 luminance; identity for single-channel images.
    pub fn to_luma(&self) -> ImageF {
        if self.channels == 1 {
            return self.clone();
        }
        ImageF::from_fn(self.width, self.height, 1, |x, y| {
            let l =
                0.299 * self.get(x, y, 0) + 0.587 * self.get(x, y, 1) + 0.114 * self.get(x, y, 2);
            [l, 0.0, 0.0]
        })
    }
}

/// Per-pixel float mask in `[0,1]`, row-major, same spatial layout as [`ImageF`].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl SoftMask {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "mask data length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParam("mask value outside [0,1]".into()));
        }
        Ok(SoftMask {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        SoftMask {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        SoftMask {
            width,
            height,
            data: vec![1.0; width * height],
        }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> f64>(width: usize, height: usize, mut f: F) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        SoftMask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear mask sample; out-of-bounds reads 0.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        if !x.is_finite() || !y.is_finite() {
            return 0.0;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let fetch = |xi: i64, yi: i64| -> f64 {
            if xi < 0 || yi < 0 || xi >= self.width as i64 || yi >= self.height as i64 {
                0.0
            } else {
                self.data[yi as usize * self.width + xi as usize]
            }
        };
        (1.0 - fx) * (1.0 - fy) * fetch(x0, y0)
            + fx * (1.0 - fy) * fetch(x0 + 1, y0)
            + (1.0 - fx) * fy * fetch(x0, y0 + 1)
            + fx * fy * fetch(x0 + 1, y0 + 1)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &SoftMask) -> Result<SoftMask> {
        self.check_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(SoftMask {
            width: self.width,
            height: self.height,
            data,
        })
    }

    /// Elementwise maximum (union footprint of two validity masks).
    pub fn max_of(&self, other: &SoftMask) -> Result<SoftMask> {
        self.check_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.max(*b))
            .collect();
        Ok(SoftMask {
            width: self.width,
            height: self.height,
            data,
        })
    }

    pub fn count_above(&self, threshold: f64) -> usize {
        self.data.iter().filter(|v| **v > threshold).count()
    }

    fn check_dims(&self, other: &SoftMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

fn check_metric_dims(a: &ImageF, b: &ImageF, region: &SoftMask) -> Result<()> {
    if a.width != b.width
        || a.height != b.height
        || a.channels != b.channels
        || region.width != a.width
        || region.height != a.height
    {
        return Err(Error::ShapeMismatch(format!(
            "metric inputs {}x{}x{} vs {}x{}x{} with region {}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels, region.width,
            region.height
        )));
    }
    Ok(())
}

/// Cap applied when the mean squared error underflows 1e-10.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio over the pixels where `region > 0.5`.
///
/// Computed per channel as `10*log10(1/MSE)` (intensities are already in
/// `[0,1]`), capped at 99 dB, then averaged over channels.
pub fn psnr(a: &ImageF, b: &ImageF, region: &SoftMask) -> Result<f64> {
    check_metric_dims(a, b, region)?;
    let mut sums = [0.0f64; 3];
    let mut count = 0usize;
    for y in 0..a.height {
        for x in 0..a.width {
            if region.get(x, y) > 0.5 {
                count += 1;
                for ch in 0..a.channels {
                    let d = a.get(x, y, ch) - b.get(x, y, ch);
                    sums[ch] += d * d;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyRegion("psnr: no pixel with region > 0.5"));
    }
    let mut total = 0.0;
    for ch in 0..a.channels {
        let mse = sums[ch] / count as f64;
        let db = if mse < 1e-10 {
            PSNR_CAP_DB
        } else {
            (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
        };
        total += db;
    }
    Ok(total / a.channels as f64)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for j in 0..SSIM_WINDOW {
        for i in 0..SSIM_WINDOW {
            let dx = i as f64 - c;
            let dy = j as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[j * SSIM_WINDOW + i] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean local SSIM (11x11 Gaussian window, sigma 1.5) over windows whose
/// center passes `region > 0.5`. Three-channel inputs are converted to
/// luminance first. Windows must fit entirely inside the image.
pub fn ssim(a: &ImageF, b: &ImageF, region: &SoftMask) -> Result<f64> {
    check_metric_dims(a, b, region)?;
    let half = SSIM_WINDOW / 2;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::InvalidParam(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {}x{}",
            a.width, a.height
        )));
    }
    let la = a.to_luma();
    let lb = b.to_luma();
    let win = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for cy in half..a.height - half {
        for cx in half..a.width - half {
            if region.get(cx, cy) <= 0.5 {
                continue;
            }
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..SSIM_WINDOW {
                for i in 0..SSIM_WINDOW {
                    let w = win[j * SSIM_WINDOW + i];
                    let pa = la.get(cx + i - half, cy + j - half, 0);
                    let pb = lb.get(cx + i - half, cy + j - half, 0);
                    mx += w * pa;
                    my += w * pb;
                    mxx += w * pa * pa;
                    myy += w * pb * pb;
                    mxy += w * pa * pb;
                }
            }
            let vx = mxx - mx * mx;
            let vy = myy - my * my;
            let cov = mxy - mx * my;
            let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            total += s;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyRegion("ssim: no window center with region > 0.5"));
    }
    Ok(total / count as f64)
}

/// Decode a PNG or JPEG into a normalized float image (value / 255).
pub fn load_image(path: &Path) -> Result<ImageF> {
    let img = image::open(path)?;
    Ok(match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let data = g.into_raw().iter().map(|v| *v as f64 / 255.0).collect();
            ImageF::new(w, h, 1, data)?
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let data = rgb.into_raw().iter().map(|v| *v as f64 / 255.0).collect();
            ImageF::new(w, h, 3, data)?
        }
    })
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode to PNG bytes (for atomic write-then-rename flows).
pub fn encode_png(img: &ImageF) -> Result<Vec<u8>> {
    let w = img.width as u32;
    let h = img.height as u32;
    let mut out = std::io::Cursor::new(Vec::new());
    let buf: Vec<u8> = img.data.iter().map(|v| to_u8(*v)).collect();
    match img.channels {
        1 => image::GrayImage::from_raw(w, h, buf)
            .expect("buffer length matches dimensions")
            .write_to(&mut out, image::ImageFormat::Png)?,
        _ => image::RgbImage::from_raw(w, h, buf)
            .expect("buffer length matches dimensions")
            .write_to(&mut out, image::ImageFormat::Png)?,
    }
    Ok(out.into_inner())
}

/// Encode a mask to 8-bit grayscale PNG bytes.
pub fn encode_mask_png(mask: &SoftMask) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    let buf: Vec<u8> = mask.data.iter().map(|v| to_u8(*v)).collect();
    image::GrayImage::from_raw(mask.width as u32, mask.height as u32, buf)
        .expect("buffer length matches dimensions")
        .write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Encode to 8-bit PNG (value * 255, rounded).
pub fn save_png(img: &ImageF, path: &Path) -> Result<()> {
    let w = img.width as u32;
    let h = img.height as u32;
    match img.channels {
        1 => {
            let buf: Vec<u8> = img.data.iter().map(|v| to_u8(*v)).collect();
            let g = image::GrayImage::from_raw(w, h, buf)
                .expect("buffer length matches dimensions");
            g.save(path)?;
        }
        _ => {
            let buf: Vec<u8> = img.data.iter().map(|v| to_u8(*v)).collect();
            let rgb = image::RgbImage::from_raw(w, h, buf)
                .expect("buffer length matches dimensions");
            rgb.save(path)?;
        }
    }
    Ok(())
}

/// Encode a mask to 8-bit grayscale PNG.
pub fn save_mask_png(mask: &SoftMask, path: &Path) -> Result<()> {
    let buf: Vec<u8> = mask.data.iter().map(|v| to_u8(*v)).collect();
    let g = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, buf)
        .expect("buffer length matches dimensions");
    g.save(path)?;
    Ok(())
}
