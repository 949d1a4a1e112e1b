//! Pinhole ray generation and the training-ray samplers.
//!
//! The masked sampler draws uniformly over (train frame × valid pixel) pairs
//! from a precomputed flat index of in-circle pixels, so black-border pixels
//! never produce training rays.

use std::path::Path;

use nalgebra::Matrix3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::colmap::{CameraModel, ColmapError, PoseSE3};
use crate::dataset::{CircleMask, DatasetManifest, PrepError, Split};
use crate::geometry::{Aabb, Vec3};
use crate::imageio::ImageRgb;

/// Rays start at least this far from the camera center by default.
pub const DEFAULT_MIN_NEAR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum RayError {
    #[error("pixel ({0}, {1}) outside the image")]
    OutOfBounds(f64, f64),
    #[error("ray misses the scene bounds")]
    RayMissesBounds,
    #[error("camera model {0} is not pinhole; undistort first")]
    NotPinhole(&'static str),
    #[error("no training frames")]
    EmptyTrainSet,
    #[error("sampling support is empty")]
    EmptyMask,
    #[error(transparent)]
    Pose(#[from] ColmapError),
    #[error(transparent)]
    Dataset(#[from] PrepError),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Per-view ray generator: camera-to-world rotation and center cached once.
#[derive(Debug, Clone)]
pub struct ViewRays {
    camera: CameraModel,
    rotation: Matrix3<f64>,
    center: Vec3,
}

impl ViewRays {
    pub fn new(camera: &CameraModel, pose: &PoseSE3) -> Result<Self, RayError> {
        if !camera.model_kind.is_pinhole() {
            return Err(RayError::NotPinhole(camera.model_kind.name()));
        }
        Ok(Self {
            camera: camera.clone(),
            rotation: pose.rotation()?.transpose(),
            center: pose.center()?,
        })
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    /// Unit world direction through continuous pixel coordinates `(u, v)`.
    pub fn direction_through(&self, u: f64, v: f64) -> Vec3 {
        let c = &self.camera;
        let d_cam = Vec3::new((u - c.cx) / c.fx, (v - c.cy) / c.fy, 1.0);
        (self.rotation * d_cam).normalize()
    }

    /// Ray through the center of pixel `(px, py)`, clipped to `bounds`.
    pub fn pixel_ray(&self, px: u32, py: u32, bounds: &Aabb, min_near: f64) -> Result<Ray, RayError> {
        if px >= self.camera.width || py >= self.camera.height {
            return Err(RayError::OutOfBounds(px as f64, py as f64));
        }
        let direction = self.direction_through(px as f64 + 0.5, py as f64 + 0.5);
        clip_to_bounds(self.center, direction, bounds, min_near)
    }
}

pub fn clip_to_bounds(origin: Vec3, direction: Vec3, bounds: &Aabb, min_near: f64) -> Result<Ray, RayError> {
    let (t0, t1) = bounds
        .intersect_ray(&origin, &direction)
        .ok_or(RayError::RayMissesBounds)?;
    let t_near = t0.max(min_near);
    if t_near >= t1 {
        return Err(RayError::RayMissesBounds);
    }
    Ok(Ray {
        origin,
        direction,
        t_near,
        t_far: t1,
    })
}

pub fn pixel_ray(
    camera: &CameraModel,
    pose: &PoseSE3,
    px: u32,
    py: u32,
    bounds: &Aabb,
    min_near: f64,
) -> Result<Ray, RayError> {
    ViewRays::new(camera, pose)?.pixel_ray(px, py, bounds, min_near)
}

/// Independent generator for worker `stream` derived from a root seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct TrainFrame {
    pub index: usize,
    pub pose: PoseSE3,
    /// Linear RGB.
    pub image: ImageRgb,
    pub rays: ViewRays,
}

/// In-memory training frames plus the geometry needed to sample rays.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub camera: CameraModel,
    pub bounds: Aabb,
    pub mask: CircleMask,
    pub frames: Vec<TrainFrame>,
    valid_pixels: Vec<u32>,
    min_near: f64,
}

/// Rays with their supervision targets and provenance.
///
/// `rays[i]` is `None` when that pixel's ray misses the scene box; such rays
/// render as background.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RayBatch {
    pub rays: Vec<Option<Ray>>,
    pub target_rgb: Vec<[f32; 3]>,
    pub frame_index: Vec<usize>,
    pub pixel_xy: Vec<[u32; 2]>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

impl TrainingSet {
    pub fn new(
        camera: CameraModel,
        bounds: Aabb,
        mask: CircleMask,
        frames: Vec<(usize, PoseSE3, ImageRgb)>,
    ) -> Result<Self, RayError> {
        let frames = frames
            .into_iter()
            .map(|(index, pose, image)| {
                assert_eq!((image.width, image.height), (camera.width, camera.height));
                Ok(TrainFrame {
                    index,
                    pose,
                    rays: ViewRays::new(&camera, &pose)?,
                    image,
                })
            })
            .collect::<Result<Vec<_>, RayError>>()?;
        Ok(Self {
            valid_pixels: mask.valid_pixels(),
            camera,
            bounds,
            mask,
            frames,
            min_near: DEFAULT_MIN_NEAR,
        })
    }

    /// Loads the TRAIN frames of a manifest (paths relative to `base_dir`).
    pub fn load(manifest: &DatasetManifest, base_dir: &Path) -> Result<Self, RayError> {
        let frames = manifest
            .frames_in(Split::Train)
            .map(|f| {
                let img = ImageRgb::load(&base_dir.join(&f.path))?.to_linear();
                Ok((f.index, f.pose.expect("train frames are posed"), img))
            })
            .collect::<Result<Vec<_>, RayError>>()?;
        Self::new(manifest.camera.clone(), manifest.bounds, manifest.mask, frames)
    }

    pub fn with_min_near(mut self, min_near: f64) -> Self {
        self.min_near = min_near;
        self
    }

    pub fn valid_pixels(&self) -> &[u32] {
        &self.valid_pixels
    }

    fn draw(&self, rng: &mut ChaCha8Rng, batch_size: usize, masked: bool) -> Result<RayBatch, RayError> {
        if self.frames.is_empty() {
            return Err(RayError::EmptyTrainSet);
        }
        let w = self.camera.width;
        let support = if masked {
            self.valid_pixels.len() as u64
        } else {
            w as u64 * self.camera.height as u64
        };
        if support == 0 {
            return Err(RayError::EmptyMask);
        }
        let total = support * self.frames.len() as u64;
        let mut batch = RayBatch {
            rays: Vec::with_capacity(batch_size),
            target_rgb: Vec::with_capacity(batch_size),
            frame_index: Vec::with_capacity(batch_size),
            pixel_xy: Vec::with_capacity(batch_size),
        };
        for _ in 0..batch_size {
            let k = rng.random_range(0..total);
            let frame = &self.frames[(k / support) as usize];
            let slot = (k % support) as u32;
            let flat = if masked { self.valid_pixels[slot as usize] } else { slot };
            let (x, y) = (flat % w, flat / w);
            batch.rays.push(frame.rays.pixel_ray(x, y, &self.bounds, self.min_near).ok());
            batch.target_rgb.push(frame.image.pixel(x, y));
            batch.frame_index.push(frame.index);
            batch.pixel_xy.push([x, y]);
        }
        Ok(batch)
    }
}

/// Uniform over (train frame × in-mask pixel).
pub fn sample_masked_batch(set: &TrainingSet, rng: &mut ChaCha8Rng, batch_size: usize) -> Result<RayBatch, RayError> {
    set.draw(rng, batch_size, true)
}

/// Uniform over (train frame × every pixel), black border included.
pub fn sample_unmasked_batch(set: &TrainingSet, rng: &mut ChaCha8Rng, batch_size: usize) -> Result<RayBatch, RayError> {
    set.draw(rng, batch_size, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_circle_mask, circle_mask_with_radius};
    use proptest::prelude::*;

    fn cam(w: u32, h: u32) -> CameraModel {
        CameraModel::pinhole(1, w, h, 50.0, 50.0, w as f64 / 2.0, h as f64 / 2.0)
    }

    fn big_box() -> Aabb {
        Aabb::new([-10.0; 3], [10.0; 3])
    }

    #[test]
    fn principal_ray_is_optical_axis() {
        let c = CameraModel::pinhole(1, 100, 80, 60.0, 60.0, 50.5, 40.5);
        let r = pixel_ray(&c, &PoseSE3::identity(), 50, 40, &big_box(), DEFAULT_MIN_NEAR).unwrap();
        assert!((r.direction - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert_eq!(r.t_near, DEFAULT_MIN_NEAR);
    }

    #[test]
    fn forty_five_degree_pixel() {
        let c = CameraModel::pinhole(1, 200, 100, 40.0, 40.0, 50.5, 49.5);
        let r = pixel_ray(&c, &PoseSE3::identity(), 90, 49, &big_box(), DEFAULT_MIN_NEAR).unwrap();
        assert!((r.direction - Vec3::new(1.0, 0.0, 1.0).normalize()).norm() < 1e-12);
    }

    #[test]
    fn out_of_bounds_and_miss() {
        let c = cam(10, 10);
        let p = PoseSE3::identity();
        assert!(matches!(
            pixel_ray(&c, &p, 10, 0, &big_box(), 1e-3),
            Err(RayError::OutOfBounds(..))
        ));
        let behind = Aabb::new([-1.0, -1.0, -5.0], [1.0, 1.0, -4.0]);
        assert!(matches!(pixel_ray(&c, &p, 5, 5, &behind, 1e-3), Err(RayError::RayMissesBounds)));
    }

    #[test]
    fn corner_rays_are_mirror_symmetric() {
        let c = cam(64, 48);
        let v = ViewRays::new(&c, &PoseSE3::identity()).unwrap();
        let d00 = v.direction_through(0.5, 0.5);
        let d10 = v.direction_through(63.5, 0.5);
        let d01 = v.direction_through(0.5, 47.5);
        let d11 = v.direction_through(63.5, 47.5);
        assert!((d00.x + d10.x).abs() < 1e-12 && (d00.y - d10.y).abs() < 1e-12);
        assert!((d00.y + d01.y).abs() < 1e-12 && (d00.x - d01.x).abs() < 1e-12);
        assert!((d00 + d11 - Vec3::new(0.0, 0.0, 2.0 * d00.z)).norm() < 1e-12);
    }

    fn random_pose(a: f64, b: f64, c: f64, d: f64, t: [f64; 3]) -> PoseSE3 {
        let n = (a * a + b * b + c * c + d * d).sqrt();
        PoseSE3 { q: [a / n, b / n, c / n, d / n], t }
    }

    proptest! {
        #[test]
        fn ray_reprojects_to_pixel_center(
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in -1.0f64..1.0,
            tx in -1.0f64..1.0, ty in -1.0f64..1.0, tz in -1.0f64..1.0,
            px in 0u32..64, py in 0u32..48,
        ) {
            prop_assume!(a * a + b * b + c * c + d * d > 1e-2);
            let camera = CameraModel::pinhole(1, 64, 48, 55.0, 52.0, 31.0, 25.0);
            let pose = random_pose(a, b, c, d, [tx, ty, tz]);
            let ray = pixel_ray(&camera, &pose, px, py, &Aabb::new([-100.0; 3], [100.0; 3]), 1e-3).unwrap();
            prop_assert!((ray.direction.norm() - 1.0).abs() < 1e-9);
            let world = ray.origin + ray.direction * 2.0;
            let p_cam = pose.rotation().unwrap() * world + pose.translation();
            let uv = camera.project(&p_cam);
            prop_assert!((uv[0] - (px as f64 + 0.5)).abs() < 1e-6);
            prop_assert!((uv[1] - (py as f64 + 0.5)).abs() < 1e-6);
        }

        #[test]
        fn rays_from_inside_exit_on_surface(x in -0.9f64..0.9, y in -0.9f64..0.9, z in -0.9f64..0.9,
                                            px in 0u32..32, py in 0u32..32) {
            let bounds = Aabb::new([-1.0; 3], [1.0; 3]);
            let pose = PoseSE3::from_camera_to_world(&Matrix3::identity(), &Vec3::new(x, y, z));
            let ray = pixel_ray(&cam(32, 32), &pose, px, py, &bounds, 1e-3).unwrap();
            prop_assert!(ray.t_near >= 1e-3);
            let p = ray.at(ray.t_far);
            let on_face = (0..3).any(|i| (p[i].abs() - 1.0).abs() < 1e-6);
            prop_assert!(on_face);
        }
    }

    fn set_with(mask: CircleMask, n_frames: usize) -> TrainingSet {
        let w = mask.width;
        let h = mask.height;
        let frames = (0..n_frames)
            .map(|i| {
                let mut img = ImageRgb::new(w, h);
                for y in 0..h {
                    for x in 0..w {
                        img.set_pixel(x, y, [x as f32 / w as f32, y as f32 / h as f32, i as f32]);
                    }
                }
                let pose = PoseSE3::from_camera_to_world(&Matrix3::identity(), &Vec3::new(0.0, 0.0, -2.0));
                (i, pose, img)
            })
            .collect();
        TrainingSet::new(cam(w, h), Aabb::new([-1.0; 3], [1.0; 3]), mask, frames).unwrap()
    }

    #[test]
    fn single_valid_pixel_forces_support() {
        let mask = circle_mask_with_radius(9, 9, 0.1);
        assert_eq!(mask.valid_count, 1);
        let set = set_with(mask, 1);
        let mut rng = stream_rng(3, 0);
        let b = sample_masked_batch(&set, &mut rng, 8).unwrap();
        assert!(b.pixel_xy.iter().all(|&p| p == [4, 4]));
        assert!(b.target_rgb.iter().all(|&c| c == set.frames[0].image.pixel(4, 4)));
    }

    #[test]
    fn masked_sampler_never_leaves_mask() {
        let mask = build_circle_mask(40, 30, 0.9).unwrap();
        let set = set_with(mask, 3);
        let mut rng = stream_rng(11, 0);
        let b = sample_masked_batch(&set, &mut rng, 20_000).unwrap();
        for &[x, y] in &b.pixel_xy {
            let dx = x as f64 + 0.5 - mask.cx;
            let dy = y as f64 + 0.5 - mask.cy;
            assert!(dx * dx + dy * dy <= mask.radius * mask.radius);
        }
        assert_eq!(b.rays.len(), b.target_rgb.len());
        assert_eq!(b.rays.len(), b.frame_index.len());
    }

    #[test]
    fn same_seed_same_batch() {
        let set = set_with(build_circle_mask(20, 20, 1.0).unwrap(), 2);
        let a = sample_masked_batch(&set, &mut stream_rng(5, 0), 256).unwrap();
        let b = sample_masked_batch(&set, &mut stream_rng(5, 0), 256).unwrap();
        assert_eq!(a, b);
        let a = sample_unmasked_batch(&set, &mut stream_rng(5, 0), 256).unwrap();
        let b = sample_unmasked_batch(&set, &mut stream_rng(5, 0), 256).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_mask_support_matches_unmasked() {
        let mask = CircleMask::full(12, 10);
        let set = set_with(mask, 1);
        assert_eq!(set.valid_pixels().len(), 120);
        let a = sample_masked_batch(&set, &mut stream_rng(9, 1), 512).unwrap();
        let b = sample_unmasked_batch(&set, &mut stream_rng(9, 1), 512).unwrap();
        assert_eq!(a.pixel_xy, b.pixel_xy);
    }

    #[test]
    fn masked_distribution_is_uniform_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mask = build_circle_mask(100, 100, 1.0).unwrap();
        let set = set_with(mask, 1);
        let n = 100_000;
        let b = sample_masked_batch(&set, &mut stream_rng(21, 0), n).unwrap();
        // 100 spatial bins on a 10×10 tiling; expected counts follow mask support per bin.
        let mut support = [0u64; 100];
        for &p in set.valid_pixels() {
            let (x, y) = (p % 100, p / 100);
            support[((y / 10) * 10 + x / 10) as usize] += 1;
        }
        let mut observed = [0u64; 100];
        for &[x, y] in &b.pixel_xy {
            observed[((y / 10) * 10 + x / 10) as usize] += 1;
        }
        let total_support: u64 = support.iter().sum();
        let mut chi2 = 0.0;
        let mut dof = 0;
        for i in 0..100 {
            if support[i] == 0 {
                assert_eq!(observed[i], 0);
                continue;
            }
            let e = n as f64 * support[i] as f64 / total_support as f64;
            chi2 += (observed[i] as f64 - e).powi(2) / e;
            dof += 1;
        }
        let crit = ChiSquared::new((dof - 1) as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
    }

    #[test]
    fn unmasked_border_rate_matches_binomial() {
        let mask = build_circle_mask(50, 50, 1.0).unwrap();
        let set = set_with(mask, 1);
        let n = 100_000;
        let b = sample_unmasked_batch(&set, &mut stream_rng(4, 0), n).unwrap();
        let border = b.pixel_xy.iter().filter(|&&[x, y]| !mask.contains(x, y)).count() as f64;
        let p = 1.0 - mask.valid_count as f64 / 2500.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((border - n as f64 * p).abs() <= 3.0 * sigma, "{border} vs {}", n as f64 * p);
    }

    #[test]
    fn empty_train_set() {
        let set = TrainingSet::new(cam(4, 4), big_box(), CircleMask::full(4, 4), vec![]).unwrap();
        assert!(matches!(
            sample_masked_batch(&set, &mut stream_rng(0, 0), 4),
            Err(RayError::EmptyTrainSet)
        ));
    }
}
