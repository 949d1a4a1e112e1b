//! Image quality metrics and the evaluation report.
//!
//! Both metrics take sRGB-encoded values in `[0,1]`, the same space the
//! ground-truth frames are stored in.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::colmap::{CameraModel, PoseSE3};
use crate::dataset::{CircleMask, DatasetManifest, Split};
use crate::geometry::Aabb;
use crate::imageio::{ImageRgb, LUMA};
use crate::rays::RayError;
use crate::render::{render_image, OccupancyGrid, RadianceField, RenderSettings};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image sizes differ: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("image {0}x{1} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")]
    ImageTooSmall(u32, u32),
    #[error("no eval frames")]
    EmptySplit,
    #[error(transparent)]
    Ray(#[from] RayError),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn check_dims(a: &ImageRgb, b: &ImageRgb, mask: Option<&CircleMask>) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(MetricsError::DimensionMismatch((a.width, a.height), (b.width, b.height)));
    }
    if let Some(m) = mask {
        if (m.width, m.height) != (a.width, a.height) {
            return Err(MetricsError::DimensionMismatch((m.width, m.height), (a.width, a.height)));
        }
    }
    Ok(())
}

pub fn mse(a: &ImageRgb, b: &ImageRgb, mask: Option<&CircleMask>) -> Result<f64> {
    check_dims(a, b, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..a.height {
        for x in 0..a.width {
            if mask.is_some_and(|m| !m.contains(x, y)) {
                continue;
            }
            let (p, q) = (a.pixel(x, y), b.pixel(x, y));
            for c in 0..3 {
                let d = p[c] as f64 - q[c] as f64;
                sum += d * d;
            }
            n += 3;
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// `+∞` for identical inputs.
pub fn psnr(a: &ImageRgb, b: &ImageRgb, mask: Option<&CircleMask>) -> Result<f64> {
    let m = mse(a, b, mask)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimMode {
    #[default]
    Luma,
    PerChannel,
}

/// Windows are placed only where they fit inside the image, and with a mask
/// only where all window pixels are inside it.
pub fn ssim(a: &ImageRgb, b: &ImageRgb, mask: Option<&CircleMask>) -> Result<f64> {
    ssim_with(a, b, mask, SsimMode::Luma)
}

pub fn ssim_with(a: &ImageRgb, b: &ImageRgb, mask: Option<&CircleMask>, mode: SsimMode) -> Result<f64> {
    check_dims(a, b, mask)?;
    if (a.width as usize) < SSIM_WINDOW || (a.height as usize) < SSIM_WINDOW {
        return Err(MetricsError::ImageTooSmall(a.width, a.height));
    }
    match mode {
        SsimMode::Luma => ssim_plane(&a.luma(), &b.luma(), a.width as usize, a.height as usize, mask),
        SsimMode::PerChannel => {
            let mut total = 0.0;
            for c in 0..3 {
                let pa: Vec<f64> = a.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
                let pb: Vec<f64> = b.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
                total += ssim_plane(&pa, &pb, a.width as usize, a.height as usize, mask)?;
            }
            Ok(total / 3.0)
        }
    }
}

fn window_in_mask(mask: &CircleMask, x0: usize, y0: usize) -> bool {
    // The mask is a disc, so the square is inside iff its corners are.
    let e = (SSIM_WINDOW - 1) as u32;
    let (x0, y0) = (x0 as u32, y0 as u32);
    mask.contains(x0, y0) && mask.contains(x0 + e, y0) && mask.contains(x0, y0 + e) && mask.contains(x0 + e, y0 + e)
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, mask: Option<&CircleMask>) -> Result<f64> {
    let g = gaussian_window();
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    // Five moment images, filtered horizontally then vertically.
    let planes: [Vec<f64>; 5] = [
        a.to_vec(),
        b.to_vec(),
        a.iter().map(|v| v * v).collect(),
        b.iter().map(|v| v * v).collect(),
        a.iter().zip(b).map(|(x, y)| x * y).collect(),
    ];
    let filtered: Vec<Vec<f64>> = planes
        .iter()
        .map(|p| {
            let mut horiz = vec![0.0; ow * h];
            for y in 0..h {
                for x in 0..ow {
                    horiz[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * p[y * w + x + k]).sum();
                }
            }
            let mut out = vec![0.0; ow * oh];
            for y in 0..oh {
                for x in 0..ow {
                    out[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * horiz[(y + k) * ow + x]).sum();
                }
            }
            out
        })
        .collect();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mut total = 0.0;
    let mut n = 0usize;
    for y in 0..oh {
        for x in 0..ow {
            if mask.is_some_and(|m| !window_in_mask(m, x, y)) {
                continue;
            }
            let i = y * ow + x;
            let (ma, mb) = (filtered[0][i], filtered[1][i]);
            let va = filtered[2][i] - ma * ma;
            let vb = filtered[3][i] - mb * mb;
            let cov = filtered[4][i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    Ok(total / n as f64)
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

mod nonfinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    /// `null` reads back as `+∞`, the identical-image sentinel.
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame_index: usize,
    #[serde(with = "nonfinite_as_null")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<FrameScore>,
    #[serde(with = "nonfinite_as_null")]
    pub mean_psnr: f64,
    #[serde(with = "nonfinite_as_null")]
    pub std_psnr: f64,
    pub mean_ssim: f64,
    pub std_ssim: f64,
    pub config_digest: String,
    pub masked_region_only: bool,
    pub ssim_mode: SsimMode,
    /// Reserved for externally computed perceptual scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
}

impl EvalReport {
    pub fn from_frames(frames: Vec<FrameScore>, config_digest: String, masked_region_only: bool, ssim_mode: SsimMode) -> Self {
        let p: Vec<f64> = frames.iter().map(|f| f.psnr).collect();
        let s: Vec<f64> = frames.iter().map(|f| f.ssim).collect();
        let (mean_psnr, std_psnr) = mean_std(&p);
        let (mean_ssim, std_ssim) = mean_std(&s);
        Self {
            frames,
            mean_psnr,
            std_psnr,
            mean_ssim,
            std_ssim,
            config_digest,
            masked_region_only,
            ssim_mode,
            lpips: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A posed frame with its ground truth in stored (sRGB) encoding.
#[derive(Debug, Clone)]
pub struct EvalFrame {
    pub index: usize,
    pub pose: PoseSE3,
    pub image: ImageRgb,
}

pub fn load_eval_frames(manifest: &DatasetManifest, base_dir: &Path) -> Result<Vec<EvalFrame>> {
    let frames = manifest
        .frames_in(Split::Eval)
        .map(|f| {
            Ok(EvalFrame {
                index: f.index,
                pose: f.pose.expect("eval frames are posed"),
                image: ImageRgb::load(&base_dir.join(&f.path))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if frames.is_empty() {
        return Err(MetricsError::EmptySplit);
    }
    Ok(frames)
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub masked_region_only: bool,
    pub ssim_mode: SsimMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            masked_region_only: true,
            ssim_mode: SsimMode::Luma,
        }
    }
}

/// Renders `view` and returns the frame as it would be stored on disk.
#[allow(clippy::too_many_arguments)]
pub fn render_stored<F: RadianceField>(
    camera: &CameraModel,
    pose: &PoseSE3,
    bounds: &Aabb,
    grid: Option<&OccupancyGrid>,
    field: &F,
    settings: &RenderSettings,
) -> Result<ImageRgb> {
    Ok(render_image(camera, pose, bounds, grid, field, settings)?.rgb.to_srgb().quantize_u8())
}

pub fn score_frame(index: usize, render: &ImageRgb, gt: &ImageRgb, mask: &CircleMask, opts: &EvalOptions) -> Result<FrameScore> {
    let m = opts.masked_region_only.then_some(mask);
    Ok(FrameScore {
        frame_index: index,
        psnr: psnr(render, gt, m)?,
        ssim: ssim_with(render, gt, m, opts.ssim_mode)?,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate<F: RadianceField>(
    frames: &[EvalFrame],
    camera: &CameraModel,
    bounds: &Aabb,
    mask: &CircleMask,
    field: &F,
    grid: Option<&OccupancyGrid>,
    settings: &RenderSettings,
    opts: &EvalOptions,
    config_digest: String,
) -> Result<EvalReport> {
    if frames.is_empty() {
        return Err(MetricsError::EmptySplit);
    }
    let scores = frames
        .iter()
        .map(|f| {
            let render = render_stored(camera, &f.pose, bounds, grid, field, settings)?;
            score_frame(f.index, &render, &f.image, mask, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_frames(scores, config_digest, opts.masked_region_only, opts.ssim_mode))
}

/// Ground truth, render and a ×4 amplified absolute-error heatmap side by side.
pub fn contact_sheet(gt: &ImageRgb, render: &ImageRgb) -> ImageRgb {
    let (w, h) = (gt.width, gt.height);
    let mut out = ImageRgb::new(3 * w, h);
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (gt.pixel(x, y), render.pixel(x, y));
            let e = (0..3).map(|c| (a[c] - b[c]).abs() as f64 * LUMA[c]).sum::<f64>() as f32 * 4.0;
            out.set_pixel(x, y, a);
            out.set_pixel(w + x, y, b);
            out.set_pixel(2 * w + x, y, [e.min(1.0), (e - 1.0).clamp(0.0, 1.0), 0.0]);
        }
    }
    out
}
