//! Procedural endoscopy-like scene: the textured inside of a sphere seen by a
//! pinhole camera sweeping along an arc, with a circular vignette.
//!
//! Used to build end-to-end fixtures (frames plus a COLMAP text model) whose
//! ground truth is known exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::colmap::{self, CameraModel, Point3D, PoseSE3, RegisteredImage, SparseModel, TrackElement};
use crate::dataset::{self, circle_mask_with_radius, CircleMask, DatasetManifest, PrepConfig, PrepError};
use crate::geometry::Vec3;
use crate::imageio::{linear_to_srgb, ImageRgb};
use crate::field::{FieldConfig, HashGridConfig};
use crate::geometry::Aabb;
use crate::render::{RadianceField, RenderSettings};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_cameras: usize,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub sphere_radius: f64,
    pub arc_radius: f64,
    pub arc_span_deg: f64,
    /// All cameras look at this point.
    pub target: [f64; 3],
    /// Vignette radius as a fraction of half the shorter image side.
    pub vignette_frac: f64,
    /// Pixel stride of the sparse points sampled from each view.
    pub point_stride: u32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_cameras: 16,
            width: 128,
            height: 128,
            focal: 72.0,
            sphere_radius: 1.0,
            arc_radius: 0.45,
            arc_span_deg: 80.0,
            target: [0.0, 0.1, 0.8],
            vignette_frac: 0.95,
            point_stride: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub config: SyntheticConfig,
    pub camera: CameraModel,
    pub poses: Vec<PoseSE3>,
    pub mask: CircleMask,
}

/// Linear-RGB wall texture at a point on the unit sphere.
pub fn wall_texture(p: &Vec3) -> [f64; 3] {
    let v1 = (6.0 * p.x + 2.0 * (5.0 * p.y).sin()).sin() * (5.0 * p.y - 3.0 * p.z).cos();
    let v2 = (9.0 * (p.x + p.y) + 4.0 * p.z).sin();
    let base = [0.62, 0.32, 0.28];
    let vein = [0.12, 0.06, 0.04];
    [0, 1, 2].map(|c| base[c] * (0.75 + 0.25 * v1) + vein[c] * v2)
}

impl SyntheticScene {
    pub fn new(config: SyntheticConfig) -> Self {
        let camera = CameraModel::pinhole(
            1,
            config.width,
            config.height,
            config.focal,
            config.focal,
            config.width as f64 / 2.0,
            config.height as f64 / 2.0,
        );
        let target = Vec3::from(config.target);
        let up = Vec3::new(0.0, 1.0, 0.0);
        let n = config.n_cameras;
        let poses = (0..n)
            .map(|k| {
                let frac = if n == 1 { 0.5 } else { k as f64 / (n - 1) as f64 };
                let theta = (frac - 0.5) * config.arc_span_deg.to_radians();
                let eye = Vec3::new(config.arc_radius * theta.sin(), 0.0, -config.arc_radius * theta.cos());
                PoseSE3::look_at(&eye, &target, &up).expect("arc cameras are not degenerate")
            })
            .collect();
        let radius = config.vignette_frac * config.width.min(config.height) as f64 / 2.0;
        Self {
            mask: circle_mask_with_radius(config.width, config.height, radius),
            config,
            camera,
            poses,
        }
    }

    /// First wall hit of a ray starting inside the sphere.
    pub fn wall_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<Vec3> {
        let r = self.config.sphere_radius;
        let b = origin.dot(dir);
        let c = origin.norm_squared() - r * r;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let t = -b + disc.sqrt();
        (t > 0.0).then(|| origin + dir * t)
    }

    /// Linear ground truth for view `k`, black outside the vignette.
    pub fn render_frame(&self, k: usize) -> ImageRgb {
        let view = crate::rays::ViewRays::new(&self.camera, &self.poses[k]).expect("pinhole camera");
        let (w, h) = (self.camera.width, self.camera.height);
        let mut img = ImageRgb::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if !self.mask.contains(x, y) {
                    continue;
                }
                let d = view.direction_through(x as f64 + 0.5, y as f64 + 0.5);
                if let Some(p) = self.wall_hit(&view.center(), &d) {
                    let c = wall_texture(&(p / self.config.sphere_radius));
                    img.set_pixel(x, y, c.map(|v| v as f32));
                }
            }
        }
        img
    }

    pub fn frame_name(k: usize) -> String {
        format!("frame_{k:04}.png")
    }

    /// Cameras, poses, and one sparse point per `point_stride` pixel inside
    /// the vignette of every view.
    pub fn sparse_model(&self) -> SparseModel {
        let mut cameras = BTreeMap::new();
        cameras.insert(1, self.camera.clone());
        let mut images = BTreeMap::new();
        let mut points = BTreeMap::new();
        let stride = self.config.point_stride.max(1);
        let mut next_id = 1u64;
        for (k, pose) in self.poses.iter().enumerate() {
            let image_id = k as u32 + 1;
            let view = crate::rays::ViewRays::new(&self.camera, pose).expect("pinhole camera");
            let mut kps = Vec::new();
            let mut ids = Vec::new();
            for y in (stride / 2..self.camera.height).step_by(stride as usize) {
                for x in (stride / 2..self.camera.width).step_by(stride as usize) {
                    if !self.mask.contains(x, y) {
                        continue;
                    }
                    let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
                    let Some(p) = self.wall_hit(&view.center(), &view.direction_through(u, v)) else {
                        continue;
                    };
                    let c = wall_texture(&(p / self.config.sphere_radius));
                    points.insert(
                        next_id,
                        Point3D {
                            id: next_id,
                            xyz: [p.x, p.y, p.z],
                            rgb: c.map(|v| (linear_to_srgb(v as f32) * 255.0).round() as u8),
                            error: 0.5,
                            track: vec![TrackElement {
                                image_id,
                                point2d_idx: kps.len() as u32,
                            }],
                        },
                    );
                    kps.push([u, v]);
                    ids.push(next_id as i64);
                    next_id += 1;
                }
            }
            images.insert(
                image_id,
                RegisteredImage {
                    image_id,
                    pose: *pose,
                    camera_id: 1,
                    name: Self::frame_name(k),
                    point3d_ids: ids,
                    keypoints: Some(kps),
                },
            );
        }
        SparseModel { cameras, images, points }
    }

    /// Writes `frames/` (sRGB PNGs) and `sparse/0/` (COLMAP text) under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf), PrepError> {
        let frames = dir.join("frames");
        let sparse = dir.join("sparse").join("0");
        std::fs::create_dir_all(&frames)?;
        std::fs::create_dir_all(&sparse)?;
        for k in 0..self.poses.len() {
            self.render_frame(k).to_srgb().save_png(&frames.join(Self::frame_name(k)))?;
        }
        colmap::write_text_model(&self.sparse_model(), &sparse)?;
        Ok((frames, sparse))
    }

    /// Preparation settings matching the generated data.
    pub fn prep_config(&self) -> PrepConfig {
        PrepConfig {
            radius_frac: self.config.vignette_frac,
            eval_every: 5,
            bounds_lo_pct: 0.0,
            bounds_hi_pct: 1.0,
            bounds_inflate: 1.1,
            ..PrepConfig::default()
        }
    }

    /// Writes the raw fixture to `dir/raw` and prepares it into `dir/prepared`.
    pub fn build_prepared(&self, dir: &Path) -> Result<(DatasetManifest, PathBuf), PrepError> {
        let (frames, sparse) = self.write(&dir.join("raw"))?;
        let model = colmap::parse_sparse_model(&sparse, colmap::FormatHint::Text)?;
        let out = dir.join("prepared");
        let manifest = dataset::prepare_dataset(&model, &frames, &out, &self.prep_config(), false)?;
        Ok((manifest, out))
    }
}

/// Reduced field used for the synthetic fixture, sized for a few CPU minutes
/// of training.
pub fn fixture_field_config() -> FieldConfig {
    FieldConfig {
        grid: HashGridConfig {
            levels: 8,
            table_size_log2: 14,
            features_per_level: 2,
            base_resolution: 16,
            max_resolution: 256,
        },
        density_hidden: 32,
        density_layers: 1,
        geo_features: 7,
        color_hidden: 32,
        color_layers: 2,
        sh_degree: 2,
    }
}

/// Marching settings for the fixture: 128 steps across the box diagonal.
pub fn fixture_render_settings(bounds: &Aabb) -> RenderSettings {
    RenderSettings {
        step_size: bounds.diagonal() / 128.0,
        max_samples_per_ray: 512,
        background: [0.0; 3],
        early_stop_transmittance: 1e-3,
        min_near: 1e-3,
    }
}

/// Training profile for the fixture. The occupancy threshold matches the
/// coarser step, and the warm start lasts 512 steps so the young field is
/// not culled before it has formed a surface.
pub fn fixture_train_config(bounds: &Aabb, iterations: u64, mask_sampling: bool) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size: 512,
        mask_sampling,
        grid_resolution: 64,
        grid_threshold: Some(0.5),
        grid_warm_updates: 32,
        init_sigma: Some(1.0),
        render: Some(fixture_render_settings(bounds)),
        ..TrainConfig::default()
    }
}

/// Ground-truth field: empty inside the sphere, opaque textured wall outside.
impl RadianceField for SyntheticScene {
    type Scratch = ();
    fn scratch(&self) {}
    fn density(&self, p: &Vec3, _s: &mut ()) -> f64 {
        if p.norm() >= self.config.sphere_radius {
            1e4
        } else {
            0.0
        }
    }
    fn query(&self, p: &Vec3, _d: &Vec3, s: &mut ()) -> (f64, [f64; 3]) {
        let n = p.norm().max(1e-12);
        (self.density(p, s), wall_texture(&(p / n)))
    }
}
