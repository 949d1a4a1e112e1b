//! Axis-aligned boxes and small vector helpers shared by the pipeline.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Axis-aligned bounding box in scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn min_corner(&self) -> Vec3 {
        Vec3::from(self.min)
    }

    pub fn max_corner(&self) -> Vec3 {
        Vec3::from(self.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.max_corner() - self.min_corner()
    }

    pub fn center(&self) -> Vec3 {
        (self.min_corner() + self.max_corner()) * 0.5
    }

    /// Length of the box diagonal.
    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Maps a point to box-relative coordinates, `[0,1]³` for points inside.
    pub fn to_unit(&self, p: &Vec3) -> Vec3 {
        let e = self.extent();
        Vec3::new(
            (p.x - self.min[0]) / e.x,
            (p.y - self.min[1]) / e.y,
            (p.z - self.min[2]) / e.z,
        )
    }

    /// Slab-test intersection of `origin + t·dir`, returning the entry and exit
    /// parameters clipped to `t ≥ 0`. `None` when the ray misses or the box is behind.
    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-300 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut a = (self.min[i] - origin[i]) * inv;
            let mut b = (self.max[i] - origin[i]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        if t1 <= 0.0 {
            return None;
        }
        Some((t0, t1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_from_center_exits_on_surface() {
        let b = Aabb::new([-1.0, -2.0, -0.5], [1.0, 2.0, 0.5]);
        let o = Vec3::zeros();
        let d = Vec3::new(0.3, -0.2, 0.9).normalize();
        let (t0, t1) = b.intersect_ray(&o, &d).unwrap();
        assert_eq!(t0, 0.0);
        let p = o + d * t1;
        assert!((p.z - 0.5).abs() < 1e-12);
    }

    #[test]
    fn miss_and_behind() {
        let b = Aabb::new([0.0; 3], [1.0; 3]);
        let o = Vec3::new(2.0, 2.0, 2.0);
        assert!(b.intersect_ray(&o, &Vec3::new(1.0, 0.0, 0.0)).is_none());
        assert!(b.intersect_ray(&o, &Vec3::new(1.0, 1.0, 1.0).normalize()).is_none());
        let hit = b.intersect_ray(&o, &-Vec3::new(1.0, 1.0, 1.0).normalize()).unwrap();
        assert!(hit.0 > 0.0 && hit.1 > hit.0);
    }
}
