//! Frame selection, crop/downscale geometry, the one-for-all circular mask,
//! the train/eval split, and the dataset manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colmap::{self, CameraModel, ColmapError, PoseSE3, SparseModel};
use crate::geometry::Aabb;
use crate::imageio::{self, ImageRgb};

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("cannot select {n} frames out of {total}")]
    BadCount { total: usize, n: usize },
    #[error("crop fractions ({left}, {right}) must be non-negative and sum below 1")]
    BadFractions { left: f64, right: f64 },
    #[error("downscale factor must be >= 1")]
    BadFactor,
    #[error("mask radius fraction {0} must lie in (0, 1]")]
    BadRadius(f64),
    #[error("frame {name} is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        name: String,
        found: (u32, u32),
        expected: (u32, u32),
    },
    #[error("registered image {0} has no file in the frames directory")]
    MissingFrameFile(String),
    #[error("sparse model has no registered images matching the frames")]
    NoPoses,
    #[error("registered images use differing intrinsics (cameras {0} and {1})")]
    InconsistentIntrinsics(u32, u32),
    #[error("found {found} frames but the source only has {total}")]
    FrameCountMismatch { found: usize, total: u64 },
    #[error("unsupported manifest schema {0}")]
    Schema(u32),
    #[error(transparent)]
    Colmap(#[from] ColmapError),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PrepError> = std::result::Result<T, E>;

/// `n` indices at a uniform stride of `total/n` source frames starting at 0:
/// index k = ⌊k·total/n⌋, so consecutive gaps are ⌊total/n⌋ or ⌈total/n⌉.
pub fn equidistant_indices(total: usize, n: usize) -> Result<Vec<usize>> {
    if n < 1 || n > total {
        return Err(PrepError::BadCount { total, n });
    }
    let (total, n) = (total as u128, n as u128);
    Ok((0..n).map(|k| (k * total / n) as usize).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub left: u32,
    pub width: u32,
}

pub fn crop_window(src_width: u32, left_frac: f64, right_frac: f64) -> Result<CropWindow> {
    if !(left_frac >= 0.0 && right_frac >= 0.0 && left_frac + right_frac < 1.0) {
        return Err(PrepError::BadFractions {
            left: left_frac,
            right: right_frac,
        });
    }
    let w = src_width as f64;
    let left = (w * left_frac).round() as u32;
    let width = ((w * (1.0 - left_frac - right_frac)).round() as u32).min(src_width - left);
    Ok(CropWindow { left, width })
}

pub fn crop_width(src_width: u32, left_frac: f64, right_frac: f64) -> Result<u32> {
    Ok(crop_window(src_width, left_frac, right_frac)?.width)
}

pub fn downscale_dims(width: u32, height: u32, factor: u32) -> Result<(u32, u32)> {
    if factor < 1 {
        return Err(PrepError::BadFactor);
    }
    Ok((width / factor, height / factor))
}

/// Intrinsics after an integer box downscale: each axis scales by out/in.
pub fn downscale_camera(camera: &CameraModel, factor: u32) -> Result<CameraModel> {
    let (w, h) = downscale_dims(camera.width, camera.height, factor)?;
    let sx = w as f64 / camera.width as f64;
    let sy = h as f64 / camera.height as f64;
    let mut out = camera.clone();
    out.width = w;
    out.height = h;
    out.fx *= sx;
    out.fy *= sy;
    out.cx *= sx;
    out.cy *= sy;
    Ok(out)
}

pub fn crop_camera(camera: &CameraModel, window: CropWindow) -> CameraModel {
    let mut out = camera.clone();
    out.width = window.width;
    out.cx -= window.left as f64;
    out
}

/// A single centered disc of valid pixels shared by every frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleMask {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub width: u32,
    pub height: u32,
    pub valid_count: u64,
}

impl CircleMask {
    #[inline]
    pub fn contains(&self, x: u32, y: u32) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Row-major flat indices of the valid pixels.
    pub fn valid_pixels(&self) -> Vec<u32> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.contains(x, y))
            .map(|(x, y)| y * self.width + x)
            .collect()
    }

    /// A mask accepting every pixel.
    pub fn full(width: u32, height: u32) -> Self {
        let cx = width as f64 / 2.0;
        let cy = height as f64 / 2.0;
        Self {
            cx,
            cy,
            radius: (cx * cx + cy * cy).sqrt(),
            width,
            height,
            valid_count: width as u64 * height as u64,
        }
    }

    pub fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        let mut v = vec![0u8; (self.width * self.height) as usize];
        for i in self.valid_pixels() {
            v[i as usize] = 255;
        }
        imageio::save_gray8(path, self.width, self.height, &v)
    }
}

pub fn build_circle_mask(width: u32, height: u32, radius_frac: f64) -> Result<CircleMask> {
    if !(radius_frac > 0.0 && radius_frac <= 1.0) {
        return Err(PrepError::BadRadius(radius_frac));
    }
    Ok(circle_mask_with_radius(width, height, radius_frac * width.min(height) as f64 / 2.0))
}

pub fn circle_mask_with_radius(width: u32, height: u32, radius: f64) -> CircleMask {
    let mut m = CircleMask {
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        radius,
        width,
        height,
        valid_count: 0,
    };
    m.valid_count = m.valid_pixels().len() as u64;
    m
}

/// Mean value of each luma image above which a ring counts as lit.
const RING_LIT_THRESHOLD: f64 = 5.0 / 255.0;

/// Estimates the laparoscope's circular field of view: the largest radius
/// whose one-pixel ring has mean luma above 5/255 on at least 95% of frames.
/// Returns the radius as a fraction of `min(width,height)/2`, capped at 1.
pub fn estimate_radius_frac(frames: &[ImageRgb]) -> Option<f64> {
    let first = frames.first()?;
    let (w, h) = (first.width, first.height);
    let cx = w as f64 / 2.0;
    let cy = h as f64 / 2.0;
    let half_min = w.min(h) as f64 / 2.0;
    let max_r = (cx * cx + cy * cy).sqrt().ceil() as usize;
    // sums[frame][ring], counts[ring]
    let mut counts = vec![0u64; max_r + 1];
    let mut ring_of = vec![0usize; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
            let r = d.floor() as usize;
            ring_of[(y * w + x) as usize] = r;
            counts[r] += 1;
        }
    }
    let mut lit = vec![0usize; max_r + 1];
    for f in frames.iter().filter(|f| f.width == w && f.height == h) {
        let mut sums = vec![0.0f64; max_r + 1];
        for (i, l) in f.luma().into_iter().enumerate() {
            sums[ring_of[i]] += l;
        }
        for r in 0..=max_r {
            if counts[r] > 0 && sums[r] / counts[r] as f64 > RING_LIT_THRESHOLD {
                lit[r] += 1;
            }
        }
    }
    let need = (0.95 * frames.len() as f64).ceil() as usize;
    (0..=max_r)
        .rev()
        .find(|&r| counts[r] > 0 && lit[r] >= need)
        .map(|r| ((r + 1) as f64 / half_min).min(1.0))
}

/// Positions with `p mod eval_every == eval_every − 1` go to eval.
pub fn split_train_eval<T: Clone>(posed: &[T], eval_every: usize) -> (Vec<T>, Vec<T>) {
    assert!(eval_every >= 2, "eval_every must be at least 2");
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (p, f) in posed.iter().enumerate() {
        if p % eval_every == eval_every - 1 {
            eval.push(f.clone());
        } else {
            train.push(f.clone());
        }
    }
    (train, eval)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Split {
    Train,
    Eval,
    Unposed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Position in extraction order.
    pub index: usize,
    /// Processed frame, relative to the manifest directory.
    pub path: PathBuf,
    /// File name in the source frame directory.
    pub source_name: String,
    pub pose: Option<PoseSE3>,
    pub width: u32,
    pub height: u32,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMeta {
    pub fps: Option<f64>,
    pub total_source_frames: Option<u64>,
    pub crop_left_frac: f64,
    pub crop_right_frac: f64,
    pub downscale: u32,
    /// Model kind of the source calibration before undistortion.
    pub source_camera_model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: u32,
    pub frames: Vec<FrameRecord>,
    pub camera: CameraModel,
    pub mask: CircleMask,
    pub bounds: Aabb,
    pub source_meta: SourceMeta,
}

pub const MANIFEST_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MASK_FILE: &str = "mask.png";

impl DatasetManifest {
    pub fn n_frame(&self) -> usize {
        self.frames.len()
    }

    pub fn n_pose(&self) -> usize {
        self.frames.iter().filter(|f| f.pose.is_some()).count()
    }

    pub fn frames_in(&self, split: Split) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(move |f| f.split == split)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(PrepError::Schema(m.schema));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepConfig {
    pub crop_left_frac: f64,
    pub crop_right_frac: f64,
    pub downscale: u32,
    pub radius_frac: f64,
    pub eval_every: usize,
    pub bounds_lo_pct: f64,
    pub bounds_hi_pct: f64,
    pub bounds_inflate: f64,
    pub fps: Option<f64>,
    pub total_source_frames: Option<u64>,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            crop_left_frac: 0.0,
            crop_right_frac: 0.0,
            downscale: 1,
            radius_frac: 1.0,
            eval_every: 10,
            bounds_lo_pct: 0.01,
            bounds_hi_pct: 0.99,
            bounds_inflate: 1.2,
            fps: None,
            total_source_frames: None,
        }
    }
}

fn is_frame_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Frame file names in `dir`, sorted (extraction order).
pub fn list_frames(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_file() && is_frame_file(&p) {
            if let Some(n) = p.file_name().and_then(|n| n.to_str()) {
                names.push(n.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn processed_name(source: &str) -> PathBuf {
    let stem = Path::new(source).file_stem().and_then(|s| s.to_str()).unwrap_or(source);
    PathBuf::from("frames").join(format!("{stem}.png"))
}

/// The single source camera shared by all registered images.
fn shared_camera(sparse: &SparseModel) -> Result<CameraModel> {
    let mut first: Option<&CameraModel> = None;
    for img in sparse.images.values() {
        let cam = &sparse.cameras[&img.camera_id];
        match first {
            None => first = Some(cam),
            Some(f) => {
                let same = f.model_kind == cam.model_kind
                    && f.width == cam.width
                    && f.height == cam.height
                    && f.params() == cam.params();
                if !same {
                    return Err(PrepError::InconsistentIntrinsics(f.camera_id, cam.camera_id));
                }
            }
        }
    }
    first.cloned().ok_or(PrepError::NoPoses)
}

/// Post-processing camera: undistorted to pinhole, cropped, then downscaled.
pub fn processed_camera(source: &CameraModel, cfg: &PrepConfig) -> Result<CameraModel> {
    let pinhole = imageio::pinhole_of(source);
    let window = crop_window(pinhole.width, cfg.crop_left_frac, cfg.crop_right_frac)?;
    downscale_camera(&crop_camera(&pinhole, window), cfg.downscale)
}

/// Assembles the manifest from a sparse model and the frame directory without
/// touching pixel data beyond reading image headers.
pub fn build_manifest(sparse: &SparseModel, frames_dir: &Path, cfg: &PrepConfig) -> Result<DatasetManifest> {
    let names = list_frames(frames_dir)?;
    if let Some(total) = cfg.total_source_frames {
        if names.len() as u64 > total {
            return Err(PrepError::FrameCountMismatch {
                found: names.len(),
                total,
            });
        }
    }
    let by_name: BTreeMap<&str, &colmap::RegisteredImage> =
        sparse.images.values().map(|i| (i.name.as_str(), i)).collect();
    for name in by_name.keys() {
        if !names.iter().any(|n| n == name) {
            return Err(PrepError::MissingFrameFile(name.to_string()));
        }
    }
    if by_name.is_empty() {
        return Err(PrepError::NoPoses);
    }
    let source_cam = shared_camera(sparse)?;
    let expected = (source_cam.width, source_cam.height);
    for name in by_name.keys() {
        let found = image::image_dimensions(frames_dir.join(name))?;
        if found != expected {
            return Err(PrepError::DimensionMismatch {
                name: name.to_string(),
                found,
                expected,
            });
        }
    }
    let camera = processed_camera(&source_cam, cfg)?;
    let mask = build_circle_mask(camera.width, camera.height, cfg.radius_frac)?;

    let posed_positions: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| by_name.contains_key(n.as_str()))
        .map(|(i, _)| i)
        .collect();
    let (_, eval_positions) = split_train_eval(&posed_positions, cfg.eval_every);

    let frames = names
        .iter()
        .enumerate()
        .map(|(index, name)| {
            let pose = by_name.get(name.as_str()).map(|img| img.pose);
            let split = match pose {
                None => Split::Unposed,
                Some(_) if eval_positions.contains(&index) => Split::Eval,
                Some(_) => Split::Train,
            };
            FrameRecord {
                index,
                path: processed_name(name),
                source_name: name.clone(),
                pose,
                width: camera.width,
                height: camera.height,
                split,
            }
        })
        .collect();

    let bounds = sparse.bounds(cfg.bounds_lo_pct, cfg.bounds_hi_pct, cfg.bounds_inflate)?;
    Ok(DatasetManifest {
        schema: MANIFEST_SCHEMA,
        frames,
        camera,
        mask,
        bounds,
        source_meta: SourceMeta {
            fps: cfg.fps,
            total_source_frames: cfg.total_source_frames,
            crop_left_frac: cfg.crop_left_frac,
            crop_right_frac: cfg.crop_right_frac,
            downscale: cfg.downscale,
            source_camera_model: source_cam.model_kind.name().to_string(),
        },
    })
}

/// Undistort, crop and downscale one source frame (values in linear RGB).
pub fn process_frame(img: &ImageRgb, source_cam: &CameraModel, cfg: &PrepConfig) -> Result<ImageRgb> {
    let undistorted = imageio::undistort(img, source_cam);
    let window = crop_window(undistorted.width, cfg.crop_left_frac, cfg.crop_right_frac)?;
    Ok(undistorted.crop_columns(window.left, window.width).box_downscale(cfg.downscale))
}

/// Full preparation: manifest, processed posed frames, and the mask PNG.
/// With `auto_radius` the mask radius is estimated from the processed frames.
pub fn prepare_dataset(
    sparse: &SparseModel,
    frames_dir: &Path,
    out_dir: &Path,
    cfg: &PrepConfig,
    auto_radius: bool,
) -> Result<DatasetManifest> {
    let mut manifest = build_manifest(sparse, frames_dir, cfg)?;
    let source_cam = shared_camera(sparse)?;
    std::fs::create_dir_all(out_dir.join("frames"))?;
    let mut processed = Vec::new();
    for f in manifest.frames.iter().filter(|f| f.pose.is_some()) {
        let src = ImageRgb::load(&frames_dir.join(&f.source_name))?.to_linear();
        let out = process_frame(&src, &source_cam, cfg)?;
        let encoded = out.to_srgb();
        encoded.save_png(&out_dir.join(&f.path))?;
        if auto_radius {
            processed.push(encoded);
        }
    }
    if auto_radius {
        if let Some(frac) = estimate_radius_frac(&processed) {
            manifest.mask = build_circle_mask(manifest.camera.width, manifest.camera.height, frac)?;
        }
    }
    manifest.mask.save_png(&out_dir.join(MASK_FILE))?;
    std::fs::write(out_dir.join(MANIFEST_FILE), manifest.to_json()?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equidistant_identity_and_paper_count() {
        assert_eq!(equidistant_indices(10, 10).unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(equidistant_indices(2784, 2784).unwrap(), (0..2784).collect::<Vec<_>>());
        assert_eq!(equidistant_indices(5, 1).unwrap(), vec![0]);
        assert!(equidistant_indices(5, 0).is_err());
        assert!(equidistant_indices(5, 6).is_err());
    }

    #[test]
    fn equidistant_310_of_2784_matches_stride_oracle() {
        let got = equidistant_indices(2784, 310).unwrap();
        let oracle: Vec<usize> = (0..310).map(|k| (k as f64 * 2784.0 / 310.0).floor() as usize).collect();
        assert_eq!(got, oracle);
        let gaps: Vec<usize> = got.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|g| matches!(g, 8 | 9)), "{gaps:?}");
    }

    proptest! {
        #[test]
        fn equidistant_monotone_uniform_gaps(total in 1usize..5000, frac in 0.0f64..1.0) {
            let n = 1 + ((total - 1) as f64 * frac) as usize;
            let idx = equidistant_indices(total, n).unwrap();
            prop_assert_eq!(idx.len(), n);
            prop_assert_eq!(idx[0], 0);
            prop_assert!(*idx.last().unwrap() < total);
            let (lo, hi) = (total / n, total.div_ceil(n));
            prop_assert!(idx.windows(2).all(|w| w[1] > w[0] && (lo..=hi).contains(&(w[1] - w[0]))));
        }
    }

    #[test]
    fn crop_arithmetic() {
        assert_eq!(crop_width(3840, 0.066, 0.091).unwrap(), 3237);
        assert_eq!(crop_window(3840, 0.066, 0.091).unwrap().left, 253);
        assert_eq!(crop_width(1234, 0.0, 0.0).unwrap(), 1234);
        assert_eq!(crop_width(1000, 0.25, 0.25).unwrap(), 500);
        assert!(crop_width(1000, 0.5, 0.5).is_err());
        assert!(crop_width(1000, -0.1, 0.2).is_err());
    }

    #[test]
    fn downscale_arithmetic() {
        assert_eq!(downscale_dims(3237, 2160, 4).unwrap(), (809, 540));
        assert_eq!(downscale_dims(3237, 2160, 1).unwrap(), (3237, 2160));
        assert_eq!(downscale_dims(8, 8, 4).unwrap(), (2, 2));
        assert!(matches!(downscale_dims(8, 8, 0), Err(PrepError::BadFactor)));
    }

    #[test]
    fn downscaled_intrinsics_agree_with_projection_oracle() {
        let cam = CameraModel::pinhole(1, 3237, 2160, 2400.0, 2410.0, 1618.5, 1080.0);
        let small = downscale_camera(&cam, 4).unwrap();
        for p in [[0.1, -0.2, 1.0], [0.4, 0.3, 2.0], [-0.5, 0.25, 1.5]] {
            let p = crate::geometry::Vec3::from(p);
            let a = cam.project(&p);
            let b = small.project(&p);
            assert!((a[0] / 4.0 - b[0]).abs() < 0.5);
            assert!((a[1] / 4.0 - b[1]).abs() < 0.5);
        }
    }

    fn count_oracle(w: u32, h: u32, r: f64) -> u64 {
        let mut n = 0;
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 + 0.5 - w as f64 / 2.0;
                let dy = y as f64 + 0.5 - h as f64 / 2.0;
                if dx * dx + dy * dy <= r * r {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn circle_mask_counts() {
        let m = build_circle_mask(100, 100, 1.0).unwrap();
        assert_eq!(m.valid_count, count_oracle(100, 100, 50.0));
        let frac = m.valid_count as f64 / 10000.0;
        assert!((0.77..=0.80).contains(&frac), "{frac}");
        assert!(!m.contains(0, 0));
        let full = circle_mask_with_radius(100, 100, 71.0);
        assert_eq!(full.valid_count, 10000);
        assert!(build_circle_mask(10, 10, 0.0).is_err());
        assert!(build_circle_mask(10, 10, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn mask_is_radially_monotone(w in 4u32..60, h in 4u32..60, frac in 0.05f64..1.0) {
            let m = build_circle_mask(w, h, frac).unwrap();
            let dist = |x: u32, y: u32| ((x as f64 + 0.5 - m.cx).powi(2) + (y as f64 + 0.5 - m.cy).powi(2)).sqrt();
            let max_valid = (0..h).flat_map(|y| (0..w).map(move |x| (x, y)))
                .filter(|&(x, y)| m.contains(x, y)).map(|(x, y)| dist(x, y)).fold(0.0, f64::max);
            for y in 0..h {
                for x in 0..w {
                    if dist(x, y) < max_valid {
                        prop_assert!(m.contains(x, y));
                    }
                }
            }
            prop_assert_eq!(m.valid_count, count_oracle(w, h, m.radius));
        }
    }

    #[test]
    fn split_sizes() {
        let v: Vec<usize> = (0..62).collect();
        let (train, eval) = split_train_eval(&v, 10);
        let oracle = (0..62).filter(|p| p % 10 == 9).count();
        assert_eq!(eval.len(), oracle);
        assert_eq!((train.len(), eval.len()), (56, 6));
        let (_, eval) = split_train_eval(&(0..10).collect::<Vec<_>>(), 10);
        assert_eq!(eval, vec![9]);
        let (train, eval) = split_train_eval(&(0..9).collect::<Vec<_>>(), 10);
        assert!(eval.is_empty());
        assert_eq!(train.len(), 9);
        let (train, eval) = split_train_eval::<u8>(&[], 10);
        assert!(train.is_empty() && eval.is_empty());
    }

    #[test]
    fn ninety_percent_train() {
        for n in 0..500usize {
            let (train, _) = split_train_eval(&(0..n).collect::<Vec<_>>(), 10);
            let t = 0.9 * n as f64;
            assert!(train.len() == t.ceil() as usize || train.len() == t.floor() as usize, "n={n}");
        }
    }

    #[test]
    fn radius_estimate_finds_vignette() {
        let (w, h) = (64, 48);
        let mask = circle_mask_with_radius(w, h, 18.0);
        let mut img = ImageRgb::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if mask.contains(x, y) {
                    img.set_pixel(x, y, [0.6, 0.4, 0.3]);
                }
            }
        }
        let frac = estimate_radius_frac(&[img.clone(), img]).unwrap();
        let r = frac * 24.0;
        assert!((r - 18.0).abs() <= 1.0, "radius {r}");
    }
}
