//! COLMAP sparse-model reader and text writer.
//!
//! A sparse model is a directory holding three tables:
//! - `cameras.bin|txt`: intrinsics
//! - `images.bin|txt`: registered images with world-to-camera poses and 2D observations
//! - `points3D.bin|txt`: triangulated points
//!
//! Binary files are little-endian. Text files use `#` comment headers and
//! whitespace-separated fields; images take two lines per record.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    ByteOffset(u64),
    Line(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::ByteOffset(o) => write!(f, "byte offset {o}"),
            Location::Line(l) => write!(f, "line {l}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ColmapError {
    #[error("sparse model file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{file}: malformed record at {location}: {reason}")]
    MalformedRecord {
        file: String,
        location: Location,
        reason: String,
    },
    #[error("unsupported camera model {0}")]
    UnsupportedCameraModel(String),
    #[error("dangling reference: {0}")]
    InvalidReference(String),
    #[error("quaternion norm {0} deviates from 1 by more than 1e-3")]
    NonUnitQuaternion(f64),
    #[error("point cloud is empty")]
    EmptyPointCloud,
    #[error("invalid bounds arguments: {0}")]
    BadBoundsArgs(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ColmapError> = std::result::Result<T, E>;

/// The camera models accepted by the reader. Anything else is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CameraModelKind {
    SimplePinhole,
    Pinhole,
    SimpleRadial,
    #[serde(rename = "OPENCV")]
    OpenCv,
}

impl CameraModelKind {
    pub fn id(self) -> i32 {
        match self {
            CameraModelKind::SimplePinhole => 0,
            CameraModelKind::Pinhole => 1,
            CameraModelKind::SimpleRadial => 2,
            CameraModelKind::OpenCv => 4,
        }
    }

    pub fn from_id(id: i32) -> Result<Self> {
        match id {
            0 => Ok(CameraModelKind::SimplePinhole),
            1 => Ok(CameraModelKind::Pinhole),
            2 => Ok(CameraModelKind::SimpleRadial),
            4 => Ok(CameraModelKind::OpenCv),
            other => Err(ColmapError::UnsupportedCameraModel(format!("id {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CameraModelKind::SimplePinhole => "SIMPLE_PINHOLE",
            CameraModelKind::Pinhole => "PINHOLE",
            CameraModelKind::SimpleRadial => "SIMPLE_RADIAL",
            CameraModelKind::OpenCv => "OPENCV",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "SIMPLE_PINHOLE" => Ok(CameraModelKind::SimplePinhole),
            "PINHOLE" => Ok(CameraModelKind::Pinhole),
            "SIMPLE_RADIAL" => Ok(CameraModelKind::SimpleRadial),
            "OPENCV" => Ok(CameraModelKind::OpenCv),
            other => Err(ColmapError::UnsupportedCameraModel(other.to_string())),
        }
    }

    /// Number of parameters COLMAP stores for this model.
    pub fn num_params(self) -> usize {
        match self {
            CameraModelKind::SimplePinhole => 3,
            CameraModelKind::Pinhole => 4,
            CameraModelKind::SimpleRadial => 4,
            CameraModelKind::OpenCv => 8,
        }
    }

    pub fn num_distortion(self) -> usize {
        match self {
            CameraModelKind::SimplePinhole | CameraModelKind::Pinhole => 0,
            CameraModelKind::SimpleRadial => 1,
            CameraModelKind::OpenCv => 4,
        }
    }

    /// True for models without lens distortion.
    pub fn is_pinhole(self) -> bool {
        self.num_distortion() == 0
    }
}

/// Camera intrinsics. Single-focal models keep `fx == fy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub camera_id: u32,
    pub model_kind: CameraModelKind,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub distortion: Vec<f64>,
}

impl CameraModel {
    pub fn pinhole(camera_id: u32, width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            camera_id,
            model_kind: CameraModelKind::Pinhole,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            distortion: Vec::new(),
        }
    }

    pub fn from_params(
        camera_id: u32,
        model_kind: CameraModelKind,
        width: u32,
        height: u32,
        params: &[f64],
    ) -> std::result::Result<Self, String> {
        if params.len() != model_kind.num_params() {
            return Err(format!(
                "{} expects {} parameters, found {}",
                model_kind.name(),
                model_kind.num_params(),
                params.len()
            ));
        }
        let (fx, fy, cx, cy, distortion) = match model_kind {
            CameraModelKind::SimplePinhole => (params[0], params[0], params[1], params[2], vec![]),
            CameraModelKind::Pinhole => (params[0], params[1], params[2], params[3], vec![]),
            CameraModelKind::SimpleRadial => {
                (params[0], params[0], params[1], params[2], vec![params[3]])
            }
            CameraModelKind::OpenCv => {
                (params[0], params[1], params[2], params[3], params[4..8].to_vec())
            }
        };
        let cam = Self {
            camera_id,
            model_kind,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            distortion,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Parameters in COLMAP order.
    pub fn params(&self) -> Vec<f64> {
        match self.model_kind {
            CameraModelKind::SimplePinhole => vec![self.fx, self.cx, self.cy],
            CameraModelKind::Pinhole => vec![self.fx, self.fy, self.cx, self.cy],
            CameraModelKind::SimpleRadial => vec![self.fx, self.cx, self.cy, self.distortion[0]],
            CameraModelKind::OpenCv => {
                let mut p = vec![self.fx, self.fy, self.cx, self.cy];
                p.extend_from_slice(&self.distortion);
                p
            }
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err("image dimensions must be positive".into());
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!("focal lengths must be positive ({}, {})", self.fx, self.fy));
        }
        if !(0.0..=self.width as f64).contains(&self.cx) || !(0.0..=self.height as f64).contains(&self.cy) {
            return Err(format!("principal point ({}, {}) outside image", self.cx, self.cy));
        }
        if self.distortion.len() != self.model_kind.num_distortion() {
            return Err("distortion length does not match model".into());
        }
        if matches!(self.model_kind, CameraModelKind::SimplePinhole | CameraModelKind::SimpleRadial)
            && self.fx != self.fy
        {
            return Err("single-focal model with fx != fy".into());
        }
        Ok(())
    }

    /// Projects a camera-frame point to continuous pixel coordinates (no distortion).
    pub fn project(&self, p_cam: &Vec3) -> [f64; 2] {
        [
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ]
    }
}

/// World-to-camera rigid transform as stored by COLMAP: unit quaternion
/// `(w, x, y, z)` and translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSE3 {
    pub q: [f64; 4],
    pub t: [f64; 3],
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            q: [1.0, 0.0, 0.0, 0.0],
            t: [0.0; 3],
        }
    }

    /// Builds a pose from a camera-to-world rotation and the camera center.
    pub fn from_camera_to_world(rotation: &Matrix3<f64>, center: &Vec3) -> Self {
        let r_wc = rotation.transpose();
        let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r_wc));
        let q = uq.into_inner();
        let t = -(r_wc * center);
        Self {
            q: [q.w, q.i, q.j, q.k],
            t: [t.x, t.y, t.z],
        }
    }

    fn unit_quaternion(&self) -> Result<UnitQuaternion<f64>> {
        let q = Quaternion::new(self.q[0], self.q[1], self.q[2], self.q[3]);
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-3 {
            return Err(ColmapError::NonUnitQuaternion(n));
        }
        Ok(UnitQuaternion::from_quaternion(q))
    }

    /// World-to-camera rotation. Quaternions within 1e-3 of unit length are
    /// renormalized.
    pub fn rotation(&self) -> Result<Matrix3<f64>> {
        Ok(self.unit_quaternion()?.to_rotation_matrix().into_inner())
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::from(self.t)
    }

    pub fn world_to_camera(&self) -> Result<Matrix4<f64>> {
        let r = self.rotation()?;
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation());
        Ok(m)
    }

    pub fn camera_to_world(&self) -> Result<Matrix4<f64>> {
        let rt = self.rotation()?.transpose();
        let c = -(rt * self.translation());
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&c);
        Ok(m)
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn center(&self) -> Result<Vec3> {
        Ok(-(self.rotation()?.transpose() * self.translation()))
    }

    /// Camera at `eye` looking at `target` (camera +z forward, +y down, with
    /// `up` pointing toward image top). `None` when the triple is degenerate.
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Option<Self> {
        let z = (target - eye).try_normalize(1e-12)?;
        let x = z.cross(up).try_normalize(1e-12)?;
        let y = z.cross(&x);
        let rot = Matrix3::from_columns(&[x, y, z]);
        Some(Self::from_camera_to_world(&rot, eye))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredImage {
    pub image_id: u32,
    pub pose: PoseSE3,
    pub camera_id: u32,
    pub name: String,
    /// `-1` marks an observation without a triangulated point.
    pub point3d_ids: Vec<i64>,
    /// Keypoint coordinates, present only when parsed with `keep_observations`.
    pub keypoints: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackElement {
    pub image_id: u32,
    pub point2d_idx: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point3D {
    pub id: u64,
    pub xyz: [f64; 3],
    pub rgb: [u8; 3],
    pub error: f64,
    /// Empty unless parsed with `keep_observations`.
    pub track: Vec<TrackElement>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseModel {
    pub cameras: BTreeMap<u32, CameraModel>,
    pub images: BTreeMap<u32, RegisteredImage>,
    pub points: BTreeMap<u64, Point3D>,
}

impl SparseModel {
    /// Checks that every image's camera, every observation's point and every
    /// track's image exist.
    pub fn check_references(&self) -> Result<()> {
        for img in self.images.values() {
            if !self.cameras.contains_key(&img.camera_id) {
                return Err(ColmapError::InvalidReference(format!(
                    "image {} references missing camera {}",
                    img.image_id, img.camera_id
                )));
            }
            for &pid in &img.point3d_ids {
                if pid != -1 && (pid < 0 || !self.points.contains_key(&(pid as u64))) {
                    return Err(ColmapError::InvalidReference(format!(
                        "image {} references missing point {}",
                        img.image_id, pid
                    )));
                }
            }
        }
        for p in self.points.values() {
            if let Some(e) = p.track.iter().find(|e| !self.images.contains_key(&e.image_id)) {
                return Err(ColmapError::InvalidReference(format!(
                    "point {} is tracked in missing image {}",
                    p.id, e.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn bounds(&self, lo_pct: f64, hi_pct: f64, inflate: f64) -> Result<Aabb> {
        scene_bounds(self.points.values().map(|p| p.xyz), lo_pct, hi_pct, inflate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FormatHint {
    #[default]
    Auto,
    Binary,
    Text,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    pub format: FormatHint,
    /// Keep keypoint coordinates and point tracks in memory.
    pub keep_observations: bool,
}

const TABLES: [&str; 3] = ["cameras", "images", "points3D"];

/// Parses a sparse model directory, keeping only point links for observations.
pub fn parse_sparse_model(dir: &Path, format: FormatHint) -> Result<SparseModel> {
    parse_sparse_model_with(
        dir,
        &ParseOptions {
            format,
            keep_observations: false,
        },
    )
}

pub fn parse_sparse_model_with(dir: &Path, opts: &ParseOptions) -> Result<SparseModel> {
    let ext = match opts.format {
        FormatHint::Binary => "bin",
        FormatHint::Text => "txt",
        FormatHint::Auto => {
            if dir.join("cameras.bin").is_file() {
                "bin"
            } else {
                "txt"
            }
        }
    };
    let paths: Vec<PathBuf> = TABLES.iter().map(|t| dir.join(format!("{t}.{ext}"))).collect();
    for p in &paths {
        if !p.is_file() {
            return Err(ColmapError::MissingFile(p.clone()));
        }
    }
    let mut model = if ext == "bin" {
        SparseModel {
            cameras: binary::read_cameras(&std::fs::read(&paths[0])?)?,
            images: binary::read_images(&std::fs::read(&paths[1])?, opts.keep_observations)?,
            points: binary::read_points(&std::fs::read(&paths[2])?, true)?,
        }
    } else {
        SparseModel {
            cameras: text::read_cameras(&std::fs::read_to_string(&paths[0])?)?,
            images: text::read_images(&std::fs::read_to_string(&paths[1])?, opts.keep_observations)?,
            points: text::read_points(&std::fs::read_to_string(&paths[2])?, true)?,
        }
    };
    // Tracks are read in full so they can be checked, then dropped.
    model.check_references()?;
    if !opts.keep_observations {
        model.points.values_mut().for_each(|p| p.track = Vec::new());
    }
    log::info!(
        "parsed sparse model {}: {} cameras, {} images, {} points",
        dir.display(),
        model.cameras.len(),
        model.images.len(),
        model.points.len()
    );
    Ok(model)
}

/// Writes `cameras.txt`, `images.txt` and `points3D.txt` into `dir`.
///
/// Floats are written in shortest round-trip form, so a reparse reproduces
/// the input exactly. Images without keypoint coordinates get an empty
/// observation line.
pub fn write_text_model(model: &SparseModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("cameras.txt"), text::format_cameras(model))?;
    std::fs::write(dir.join("images.txt"), text::format_images(model))?;
    std::fs::write(dir.join("points3D.txt"), text::format_points(model))?;
    Ok(())
}

/// Percentile box of a point cloud, inflated about its center. Axes narrower
/// than 1e-3 are padded to that width.
pub fn scene_bounds<I>(points: I, lo_pct: f64, hi_pct: f64, inflate: f64) -> Result<Aabb>
where
    I: IntoIterator<Item = [f64; 3]>,
{
    if !(0.0..1.0).contains(&lo_pct) || !(hi_pct > lo_pct && hi_pct <= 1.0) {
        return Err(ColmapError::BadBoundsArgs(format!(
            "percentiles ({lo_pct}, {hi_pct}) must satisfy 0 <= lo < hi <= 1"
        )));
    }
    if !(inflate >= 1.0) {
        return Err(ColmapError::BadBoundsArgs(format!("inflate {inflate} < 1")));
    }
    let pts: Vec<[f64; 3]> = points.into_iter().collect();
    if pts.is_empty() {
        return Err(ColmapError::EmptyPointCloud);
    }
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    let mut axis: Vec<f64> = Vec::with_capacity(pts.len());
    for a in 0..3 {
        axis.clear();
        axis.extend(pts.iter().map(|p| p[a]));
        let lo = select_percentile(&mut axis, lo_pct);
        let hi = select_percentile(&mut axis, hi_pct);
        let c = 0.5 * (lo + hi);
        let half = (0.5 * (hi - lo) * inflate).max(0.5e-3);
        min[a] = c - half;
        max[a] = c + half;
    }
    Ok(Aabb::new(min, max))
}

/// Linearly interpolated percentile via selection (the slice is reordered).
fn select_percentile(values: &mut [f64], pct: f64) -> f64 {
    let pos = pct * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let cmp = |a: &f64, b: &f64| a.total_cmp(b);
    let (_, &mut v_lo, right) = values.select_nth_unstable_by(lo, cmp);
    if hi == lo {
        return v_lo;
    }
    // The next order statistic is the minimum of the right partition.
    let v_hi = right.iter().copied().fold(f64::INFINITY, f64::min);
    v_lo + (pos - lo as f64) * (v_hi - v_lo)
}

mod binary {
    use super::*;

    pub(super) struct Cursor<'a> {
        data: &'a [u8],
        pos: usize,
        file: &'static str,
    }

    impl<'a> Cursor<'a> {
        pub(super) fn new(data: &'a [u8], file: &'static str) -> Self {
            Self { data, pos: 0, file }
        }

        pub(super) fn malformed(&self, at: usize, reason: impl Into<String>) -> ColmapError {
            ColmapError::MalformedRecord {
                file: self.file.to_string(),
                location: Location::ByteOffset(at as u64),
                reason: reason.into(),
            }
        }

        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            if self.data.len() - self.pos < n {
                return Err(self.malformed(self.pos, format!("unexpected end of file reading {n} bytes")));
            }
            let s = &self.data[self.pos..self.pos + n];
            self.pos += n;
            Ok(s)
        }

        pub(super) fn pos(&self) -> usize {
            self.pos
        }
        pub(super) fn u8(&mut self) -> Result<u8> {
            Ok(self.take(1)?[0])
        }
        pub(super) fn u32(&mut self) -> Result<u32> {
            Ok(LittleEndian::read_u32(self.take(4)?))
        }
        pub(super) fn i32(&mut self) -> Result<i32> {
            Ok(LittleEndian::read_i32(self.take(4)?))
        }
        pub(super) fn u64(&mut self) -> Result<u64> {
            Ok(LittleEndian::read_u64(self.take(8)?))
        }
        pub(super) fn f64(&mut self) -> Result<f64> {
            Ok(LittleEndian::read_f64(self.take(8)?))
        }

        pub(super) fn cstr(&mut self) -> Result<String> {
            let start = self.pos;
            let rest = &self.data[self.pos..];
            let Some(nul) = rest.iter().position(|&b| b == 0) else {
                return Err(self.malformed(start, "unterminated image name"));
            };
            let s = std::str::from_utf8(&rest[..nul])
                .map_err(|_| self.malformed(start, "image name is not UTF-8"))?
                .to_string();
            self.pos += nul + 1;
            Ok(s)
        }

        /// Record count whose minimal encoded size must fit in the rest of the file.
        pub(super) fn count(&mut self, min_record: usize) -> Result<usize> {
            let at = self.pos;
            let n = self.u64()?;
            let remaining = (self.data.len() - self.pos) as u64;
            if n > remaining / min_record.max(1) as u64 {
                return Err(self.malformed(at, format!("count {n} exceeds remaining {remaining} bytes")));
            }
            Ok(n as usize)
        }

        pub(super) fn finish(&self) -> Result<()> {
            if self.pos != self.data.len() {
                return Err(self.malformed(self.pos, "trailing bytes after last record"));
            }
            Ok(())
        }
    }

    pub(super) fn read_cameras(data: &[u8]) -> Result<BTreeMap<u32, CameraModel>> {
        let mut c = Cursor::new(data, "cameras.bin");
        let n = c.count(24)?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let at = c.pos();
            let id = c.u32()?;
            let model_id = c.i32()?;
            let kind = CameraModelKind::from_id(model_id)?;
            let width = c.u64()?;
            let height = c.u64()?;
            let mut params = Vec::with_capacity(kind.num_params());
            for _ in 0..kind.num_params() {
                params.push(c.f64()?);
            }
            if width > u32::MAX as u64 || height > u32::MAX as u64 {
                return Err(c.malformed(at, "image dimensions overflow"));
            }
            let cam = CameraModel::from_params(id, kind, width as u32, height as u32, &params)
                .map_err(|r| c.malformed(at, r))?;
            if out.insert(id, cam).is_some() {
                return Err(c.malformed(at, format!("duplicate camera id {id}")));
            }
        }
        c.finish()?;
        Ok(out)
    }

    pub(super) fn read_images(data: &[u8], keep: bool) -> Result<BTreeMap<u32, RegisteredImage>> {
        let mut c = Cursor::new(data, "images.bin");
        let n = c.count(69)?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let at = c.pos();
            let image_id = c.u32()?;
            let q = [c.f64()?, c.f64()?, c.f64()?, c.f64()?];
            let t = [c.f64()?, c.f64()?, c.f64()?];
            let camera_id = c.u32()?;
            let name = c.cstr()?;
            let np = c.count(24)?;
            let mut ids = Vec::with_capacity(np);
            let mut kps = keep.then(|| Vec::with_capacity(np));
            for _ in 0..np {
                let x = c.f64()?;
                let y = c.f64()?;
                let pid = c.u64()?;
                ids.push(if pid == u64::MAX { -1 } else { pid as i64 });
                if let Some(k) = kps.as_mut() {
                    k.push([x, y]);
                }
            }
            let img = RegisteredImage {
                image_id,
                pose: PoseSE3 { q, t },
                camera_id,
                name,
                point3d_ids: ids,
                keypoints: kps,
            };
            if out.insert(image_id, img).is_some() {
                return Err(c.malformed(at, format!("duplicate image id {image_id}")));
            }
        }
        c.finish()?;
        Ok(out)
    }

    pub(super) fn read_points(data: &[u8], keep: bool) -> Result<BTreeMap<u64, Point3D>> {
        let mut c = Cursor::new(data, "points3D.bin");
        let n = c.count(43)?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let at = c.pos();
            let id = c.u64()?;
            let xyz = [c.f64()?, c.f64()?, c.f64()?];
            let rgb = [c.u8()?, c.u8()?, c.u8()?];
            let error = c.f64()?;
            let nt = c.count(8)?;
            let mut track = Vec::with_capacity(if keep { nt } else { 0 });
            for _ in 0..nt {
                let image_id = c.u32()?;
                let point2d_idx = c.u32()?;
                if keep {
                    track.push(TrackElement { image_id, point2d_idx });
                }
            }
            if error < 0.0 {
                return Err(c.malformed(at, format!("negative reprojection error {error}")));
            }
            let p = Point3D {
                id,
                xyz,
                rgb,
                error,
                track,
            };
            if out.insert(id, p).is_some() {
                return Err(c.malformed(at, format!("duplicate point id {id}")));
            }
        }
        c.finish()?;
        Ok(out)
    }
}

mod text {
    use super::*;

    fn malformed(file: &str, line: usize, reason: impl Into<String>) -> ColmapError {
        ColmapError::MalformedRecord {
            file: file.to_string(),
            location: Location::Line(line),
            reason: reason.into(),
        }
    }

    fn field<T: std::str::FromStr>(file: &str, line: usize, tok: Option<&str>, what: &str) -> Result<T> {
        let tok = tok.ok_or_else(|| malformed(file, line, format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| malformed(file, line, format!("cannot parse {what} from {tok:?}")))
    }

    /// Splits into 1-based numbered lines and rejects a missing final newline,
    /// which is how truncation of the last record shows up.
    fn lines<'a>(file: &str, src: &'a str) -> Result<Vec<(usize, &'a str)>> {
        let out: Vec<(usize, &str)> = src.lines().enumerate().map(|(i, l)| (i + 1, l)).collect();
        if !src.is_empty() && !src.ends_with('\n') {
            return Err(malformed(file, out.len(), "file does not end with a newline (truncated?)"));
        }
        Ok(out)
    }

    fn header_count(line: &str, key: &str) -> Option<usize> {
        let rest = line.trim_start_matches('#').trim().strip_prefix(key)?;
        rest.split(',').next()?.trim().parse().ok()
    }

    fn check_count(file: &str, declared: Option<usize>, found: usize, last_line: usize) -> Result<()> {
        match declared {
            Some(d) if d != found => Err(malformed(
                file,
                last_line,
                format!("header declares {d} records, found {found}"),
            )),
            _ => Ok(()),
        }
    }

    fn is_skippable(l: &str) -> bool {
        let t = l.trim();
        t.is_empty() || t.starts_with('#')
    }

    pub(super) fn read_cameras(src: &str) -> Result<BTreeMap<u32, CameraModel>> {
        const F: &str = "cameras.txt";
        let lines = lines(F, src)?;
        let mut declared = None;
        let mut out = BTreeMap::new();
        for &(ln, l) in &lines {
            if let Some(n) = header_count(l, "Number of cameras:") {
                declared = Some(n);
            }
            if is_skippable(l) {
                continue;
            }
            let mut toks = l.split_whitespace();
            let id: u32 = field(F, ln, toks.next(), "CAMERA_ID")?;
            let model: String = field(F, ln, toks.next(), "MODEL")?;
            let kind = CameraModelKind::from_name(&model)?;
            let w: u32 = field(F, ln, toks.next(), "WIDTH")?;
            let h: u32 = field(F, ln, toks.next(), "HEIGHT")?;
            let params = toks
                .map(|t| t.parse::<f64>().map_err(|_| malformed(F, ln, format!("bad parameter {t:?}"))))
                .collect::<Result<Vec<_>>>()?;
            let cam = CameraModel::from_params(id, kind, w, h, &params).map_err(|r| malformed(F, ln, r))?;
            if out.insert(id, cam).is_some() {
                return Err(malformed(F, ln, format!("duplicate camera id {id}")));
            }
        }
        check_count(F, declared, out.len(), lines.len())?;
        Ok(out)
    }

    pub(super) fn read_images(src: &str, keep: bool) -> Result<BTreeMap<u32, RegisteredImage>> {
        const F: &str = "images.txt";
        let lines = lines(F, src)?;
        let mut declared = None;
        let mut out = BTreeMap::new();
        let mut i = 0;
        while i < lines.len() {
            let (ln, l) = lines[i];
            i += 1;
            if let Some(n) = header_count(l, "Number of images:") {
                declared = Some(n);
            }
            if is_skippable(l) {
                continue;
            }
            let mut toks = l.split_whitespace();
            let image_id: u32 = field(F, ln, toks.next(), "IMAGE_ID")?;
            let mut q = [0.0; 4];
            for (k, name) in ["QW", "QX", "QY", "QZ"].iter().enumerate() {
                q[k] = field(F, ln, toks.next(), name)?;
            }
            let mut t = [0.0; 3];
            for (k, name) in ["TX", "TY", "TZ"].iter().enumerate() {
                t[k] = field(F, ln, toks.next(), name)?;
            }
            let camera_id: u32 = field(F, ln, toks.next(), "CAMERA_ID")?;
            let name: String = field(F, ln, toks.next(), "NAME")?;
            if toks.next().is_some() {
                return Err(malformed(F, ln, "unexpected tokens after NAME"));
            }
            // The observation line always follows and may be empty.
            let Some(&(pln, pl)) = lines.get(i) else {
                return Err(malformed(F, ln, "missing POINTS2D line"));
            };
            i += 1;
            let toks: Vec<&str> = pl.split_whitespace().collect();
            if !toks.len().is_multiple_of(3) {
                return Err(malformed(F, pln, "POINTS2D entries must be (X, Y, POINT3D_ID) triples"));
            }
            let mut ids = Vec::with_capacity(toks.len() / 3);
            let mut kps = keep.then(|| Vec::with_capacity(toks.len() / 3));
            for tr in toks.chunks_exact(3) {
                let x: f64 = field(F, pln, Some(tr[0]), "X")?;
                let y: f64 = field(F, pln, Some(tr[1]), "Y")?;
                let pid: i64 = field(F, pln, Some(tr[2]), "POINT3D_ID")?;
                ids.push(pid);
                if let Some(k) = kps.as_mut() {
                    k.push([x, y]);
                }
            }
            let img = RegisteredImage {
                image_id,
                pose: PoseSE3 { q, t },
                camera_id,
                name,
                point3d_ids: ids,
                keypoints: kps,
            };
            if out.insert(image_id, img).is_some() {
                return Err(malformed(F, ln, format!("duplicate image id {image_id}")));
            }
        }
        check_count(F, declared, out.len(), lines.len())?;
        Ok(out)
    }

    pub(super) fn read_points(src: &str, keep: bool) -> Result<BTreeMap<u64, Point3D>> {
        const F: &str = "points3D.txt";
        let lines = lines(F, src)?;
        let mut declared = None;
        let mut out = BTreeMap::new();
        for &(ln, l) in &lines {
            if let Some(n) = header_count(l, "Number of points:") {
                declared = Some(n);
            }
            if is_skippable(l) {
                continue;
            }
            let mut toks = l.split_whitespace();
            let id: u64 = field(F, ln, toks.next(), "POINT3D_ID")?;
            let xyz = [
                field(F, ln, toks.next(), "X")?,
                field(F, ln, toks.next(), "Y")?,
                field(F, ln, toks.next(), "Z")?,
            ];
            let rgb = [
                field(F, ln, toks.next(), "R")?,
                field(F, ln, toks.next(), "G")?,
                field(F, ln, toks.next(), "B")?,
            ];
            let error: f64 = field(F, ln, toks.next(), "ERROR")?;
            if error < 0.0 {
                return Err(malformed(F, ln, format!("negative reprojection error {error}")));
            }
            let rest: Vec<&str> = toks.collect();
            if !rest.len().is_multiple_of(2) {
                return Err(malformed(F, ln, "TRACK entries must be (IMAGE_ID, POINT2D_IDX) pairs"));
            }
            let mut track = Vec::new();
            for pair in rest.chunks_exact(2) {
                let image_id = field(F, ln, Some(pair[0]), "IMAGE_ID")?;
                let point2d_idx = field(F, ln, Some(pair[1]), "POINT2D_IDX")?;
                if keep {
                    track.push(TrackElement { image_id, point2d_idx });
                }
            }
            let p = Point3D {
                id,
                xyz,
                rgb,
                error,
                track,
            };
            if out.insert(id, p).is_some() {
                return Err(malformed(F, ln, format!("duplicate point id {id}")));
            }
        }
        check_count(F, declared, out.len(), lines.len())?;
        Ok(out)
    }

    pub(super) fn format_cameras(model: &SparseModel) -> String {
        let mut s = String::new();
        s.push_str("# Camera list with one line of data per camera:\n");
        s.push_str("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
        let _ = writeln!(s, "# Number of cameras: {}", model.cameras.len());
        for cam in model.cameras.values() {
            let _ = write!(s, "{} {} {} {}", cam.camera_id, cam.model_kind.name(), cam.width, cam.height);
            for p in cam.params() {
                let _ = write!(s, " {p}");
            }
            s.push('\n');
        }
        s
    }

    pub(super) fn format_images(model: &SparseModel) -> String {
        let total_obs: usize = model.images.values().map(|i| i.point3d_ids.len()).sum();
        let mean = if model.images.is_empty() {
            0.0
        } else {
            total_obs as f64 / model.images.len() as f64
        };
        let mut s = String::new();
        s.push_str("# Image list with two lines of data per image:\n");
        s.push_str("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n");
        s.push_str("#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
        let _ = writeln!(
            s,
            "# Number of images: {}, mean observations per image: {}",
            model.images.len(),
            mean
        );
        for img in model.images.values() {
            let [qw, qx, qy, qz] = img.pose.q;
            let [tx, ty, tz] = img.pose.t;
            let _ = writeln!(
                s,
                "{} {qw} {qx} {qy} {qz} {tx} {ty} {tz} {} {}",
                img.image_id, img.camera_id, img.name
            );
            if let Some(kps) = &img.keypoints {
                let row: Vec<String> = kps
                    .iter()
                    .zip(&img.point3d_ids)
                    .map(|([x, y], id)| format!("{x} {y} {id}"))
                    .collect();
                s.push_str(&row.join(" "));
            }
            s.push('\n');
        }
        s
    }

    pub(super) fn format_points(model: &SparseModel) -> String {
        let total: usize = model.points.values().map(|p| p.track.len()).sum();
        let mean = if model.points.is_empty() {
            0.0
        } else {
            total as f64 / model.points.len() as f64
        };
        let mut s = String::new();
        s.push_str("# 3D point list with one line of data per point:\n");
        s.push_str("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
        let _ = writeln!(s, "# Number of points: {}, mean track length: {}", model.points.len(), mean);
        for p in model.points.values() {
            let [x, y, z] = p.xyz;
            let [r, g, b] = p.rgb;
            let _ = write!(s, "{} {x} {y} {z} {r} {g} {b} {}", p.id, p.error);
            for t in &p.track {
                let _ = write!(s, " {} {}", t.image_id, t.point2d_idx);
            }
            s.push('\n');
        }
        s
    }
}
