//! A checkpoint loaded for rendering, and the pose format shared by the CLI
//! and the HTTP service.

use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use lapnerf::checkpoint::{Checkpoint, CheckpointHeader};
use lapnerf::colmap::{CameraModel, PoseSE3};
use lapnerf::field::HashField;
use lapnerf::geometry::{Aabb, Vec3};
use lapnerf::imageio::ImageRgb;
use lapnerf::metrics::sha256_hex;
use lapnerf::rays::RayError;
use lapnerf::render::{render_image, OccupancyGrid, RenderSettings, SceneField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    #[default]
    Preview,
    Full,
}

/// Camera pose as sent over the wire: either camera-to-world rotation plus
/// camera center, or an eye/target/up triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PoseSpec {
    CameraToWorld {
        /// (w, x, y, z); normalized on receipt.
        quaternion: [f64; 4],
        translation: [f64; 3],
    },
    LookAt {
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
    },
}

/// Why a pose could not be built, with the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseError {
    pub field: &'static str,
    pub message: String,
}

impl PoseSpec {
    pub fn from_pose(pose: &PoseSE3) -> Self {
        let c2w = pose.camera_to_world().expect("stored poses are unit");
        let r: Matrix3<f64> = c2w.fixed_view::<3, 3>(0, 0).into();
        let q = UnitQuaternion::from_matrix(&r);
        let center = pose.center().expect("stored poses are unit");
        PoseSpec::CameraToWorld {
            quaternion: [q.w, q.i, q.j, q.k],
            translation: [center.x, center.y, center.z],
        }
    }

    pub fn to_pose(&self) -> Result<PoseSE3, PoseError> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match *self {
            PoseSpec::CameraToWorld { quaternion: q, translation: t } => {
                if !finite(&q) || !finite(&t) {
                    return Err(PoseError {
                        field: "pose.camera_to_world",
                        message: "values must be finite".into(),
                    });
                }
                let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
                if raw.norm() < 1e-9 {
                    return Err(PoseError {
                        field: "pose.camera_to_world.quaternion",
                        message: "quaternion has zero norm".into(),
                    });
                }
                let r = UnitQuaternion::from_quaternion(raw).to_rotation_matrix();
                Ok(PoseSE3::from_camera_to_world(r.matrix(), &Vec3::from(t)))
            }
            PoseSpec::LookAt { eye, target, up } => {
                if !finite(&eye) || !finite(&target) || !finite(&up) {
                    return Err(PoseError {
                        field: "pose.look_at",
                        message: "values must be finite".into(),
                    });
                }
                PoseSE3::look_at(&Vec3::from(eye), &Vec3::from(target), &Vec3::from(up)).ok_or(PoseError {
                    field: "pose.look_at",
                    message: "eye equals target or up is parallel to the view direction".into(),
                })
            }
        }
    }
}

pub struct LoadedScene {
    pub header: CheckpointHeader,
    pub field: HashField<f32>,
    pub grid: OccupancyGrid,
    /// First 16 hex digits of the checkpoint's SHA-256.
    pub checkpoint_id: String,
}

impl LoadedScene {
    pub fn load(path: &Path) -> Result<Self, lapnerf::checkpoint::CheckpointError> {
        let bytes = std::fs::read(path)?;
        let ck = Checkpoint::from_bytes(&bytes)?;
        Ok(Self::from_checkpoint(ck, &sha256_hex(&bytes)[..16]))
    }

    pub fn from_checkpoint(ck: Checkpoint, id: &str) -> Self {
        Self {
            header: ck.header,
            field: ck.state.field,
            grid: ck.state.grid,
            checkpoint_id: id.to_string(),
        }
    }

    pub fn bounds(&self) -> Aabb {
        self.header.bounds
    }

    pub fn settings(&self, quality: Quality) -> RenderSettings {
        let full = self.header.render;
        match quality {
            Quality::Full => full,
            Quality::Preview => RenderSettings {
                step_size: full.step_size * 4.0,
                early_stop_transmittance: 1e-2,
                ..full
            },
        }
    }

    /// Training intrinsics rescaled to `width × height`.
    pub fn camera_at(&self, width: u32, height: u32) -> CameraModel {
        let c = &self.header.camera;
        let sx = width as f64 / c.width as f64;
        let sy = height as f64 / c.height as f64;
        CameraModel::pinhole(c.camera_id, width, height, c.fx * sx, c.fy * sy, c.cx * sx, c.cy * sy)
    }

    pub fn default_pose(&self) -> PoseSE3 {
        self.header.reference_pose.unwrap_or_else(PoseSE3::identity)
    }

    /// Linear RGB render.
    pub fn render(&self, pose: &PoseSE3, width: u32, height: u32, quality: Quality) -> Result<ImageRgb, RayError> {
        let camera = self.camera_at(width, height);
        let field = SceneField::new(&self.field, self.bounds());
        let out = render_image(&camera, pose, &self.bounds(), Some(&self.grid), &field, &self.settings(quality))?;
        Ok(out.rgb)
    }

    /// PNG bytes of an sRGB render.
    pub fn render_png(&self, pose: &PoseSE3, width: u32, height: u32, quality: Quality) -> Result<Vec<u8>, RayError> {
        Ok(self.render(pose, width, height, quality)?.to_srgb().encode_png())
    }
}
