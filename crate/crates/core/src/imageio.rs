//! Float RGB images, sRGB transfer functions, and the resampling used by
//! dataset preparation.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::colmap::{CameraModel, CameraModelKind};

/// Interleaved RGB, row-major, values nominally in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

pub fn srgb_to_linear(c: f32) -> f32 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f32) -> f32 {
    let c = c.clamp(0.0, 1.0);
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

pub const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

impl ImageRgb {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width * height * 3) as usize],
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn num_pixels(&self) -> usize {
        (self.width * self.height) as usize
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_linear(&self) -> Self {
        self.map(srgb_to_linear)
    }

    pub fn to_srgb(&self) -> Self {
        self.map(linear_to_srgb)
    }

    /// Rounds every value to the nearest 8-bit level.
    pub fn quantize_u8(&self) -> Self {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
    }

    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64)
            .collect()
    }

    /// Loads an 8-bit image and returns its stored (sRGB-encoded) values.
    pub fn load(path: &Path) -> image::ImageResult<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        })
    }

    /// Saves values as-is (callers encode to sRGB first) in an 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        self.to_rgb8().save(path)
    }

    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let raw: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::from_raw(self.width, self.height, raw).expect("buffer size matches dimensions")
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory PNG encoding does not fail");
        out.into_inner()
    }

    /// Columns `[left, left+width)`.
    pub fn crop_columns(&self, left: u32, width: u32) -> Self {
        assert!(left + width <= self.width);
        let mut out = Self::new(width, self.height);
        for y in 0..self.height {
            let src = ((y * self.width + left) * 3) as usize;
            let dst = ((y * width) * 3) as usize;
            out.data[dst..dst + (width * 3) as usize]
                .copy_from_slice(&self.data[src..src + (width * 3) as usize]);
        }
        out
    }

    /// Box-filter downscale over exact `factor × factor` blocks; trailing
    /// rows and columns that do not fill a block are dropped.
    pub fn box_downscale(&self, factor: u32) -> Self {
        if factor == 1 {
            return self.clone();
        }
        let w = self.width / factor;
        let h = self.height / factor;
        let mut out = Self::new(w, h);
        let norm = 1.0 / (factor * factor) as f32;
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = [0.0f32; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.pixel(ox * factor + dx, oy * factor + dy);
                        acc[0] += p[0];
                        acc[1] += p[1];
                        acc[2] += p[2];
                    }
                }
                out.set_pixel(ox, oy, [acc[0] * norm, acc[1] * norm, acc[2] * norm]);
            }
        }
        out
    }

    /// Bilinear lookup at continuous pixel coordinates (pixel centers at +0.5).
    /// Outside the image returns black.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> [f32; 3] {
        let x = u - 0.5;
        let y = v - 0.5;
        if x < -0.5 || y < -0.5 || x > self.width as f64 - 0.5 || y > self.height as f64 - 0.5 {
            return [0.0; 3];
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let clampx = |v: f64| v.clamp(0.0, (self.width - 1) as f64) as u32;
        let clampy = |v: f64| v.clamp(0.0, (self.height - 1) as f64) as u32;
        let (xa, xb, ya, yb) = (clampx(x0), clampx(x0 + 1.0), clampy(y0), clampy(y0 + 1.0));
        let p00 = self.pixel(xa, ya);
        let p10 = self.pixel(xb, ya);
        let p01 = self.pixel(xa, yb);
        let p11 = self.pixel(xb, yb);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bottom * fy;
        }
        out
    }
}

/// Applies the lens distortion of `camera` to normalized image coordinates.
pub fn distort_normalized(camera: &CameraModel, u: f64, v: f64) -> (f64, f64) {
    match camera.model_kind {
        CameraModelKind::SimplePinhole | CameraModelKind::Pinhole => (u, v),
        CameraModelKind::SimpleRadial => {
            let k = camera.distortion[0];
            let r2 = u * u + v * v;
            (u + u * k * r2, v + v * k * r2)
        }
        CameraModelKind::OpenCv => {
            let [k1, k2, p1, p2] = [
                camera.distortion[0],
                camera.distortion[1],
                camera.distortion[2],
                camera.distortion[3],
            ];
            let (u2, v2, uv) = (u * u, v * v, u * v);
            let r2 = u2 + v2;
            let radial = k1 * r2 + k2 * r2 * r2;
            (
                u + u * radial + 2.0 * p1 * uv + p2 * (r2 + 2.0 * u2),
                v + v * radial + 2.0 * p2 * uv + p1 * (r2 + 2.0 * v2),
            )
        }
    }
}

/// The ideal pinhole camera sharing `camera`'s focal lengths and principal point.
pub fn pinhole_of(camera: &CameraModel) -> CameraModel {
    CameraModel::pinhole(
        camera.camera_id,
        camera.width,
        camera.height,
        camera.fx,
        camera.fy,
        camera.cx,
        camera.cy,
    )
}

/// Resamples a distorted image onto the ideal pinhole returned by [`pinhole_of`].
pub fn undistort(img: &ImageRgb, camera: &CameraModel) -> ImageRgb {
    if camera.model_kind.is_pinhole() {
        return img.clone();
    }
    let mut out = ImageRgb::new(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            let u = (x as f64 + 0.5 - camera.cx) / camera.fx;
            let v = (y as f64 + 0.5 - camera.cy) / camera.fy;
            let (du, dv) = distort_normalized(camera, u, v);
            let px = du * camera.fx + camera.cx;
            let py = dv * camera.fy + camera.cy;
            out.set_pixel(x, y, img.sample_bilinear(px, py));
        }
    }
    out
}

pub fn save_gray8(path: &Path, width: u32, height: u32, values: &[u8]) -> image::ImageResult<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width, height, values.to_vec()).expect("buffer size matches dimensions");
    buf.save(path)
}

pub fn save_gray16(path: &Path, width: u32, height: u32, values: &[u16]) -> image::ImageResult<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width, height, values.to_vec()).expect("buffer size matches dimensions");
    buf.save(path)
}
