//! Analytic radiance fields used as test doubles for the renderer.

use crate::geometry::Vec3;
use crate::render::RadianceField;

#[derive(Debug, Clone, Copy)]
pub struct ConstantField {
    pub sigma: f64,
    pub rgb: [f64; 3],
}

impl RadianceField for ConstantField {
    type Scratch = ();
    fn scratch(&self) {}
    fn density(&self, _p: &Vec3, _s: &mut ()) -> f64 {
        self.sigma
    }
    fn query(&self, _p: &Vec3, _d: &Vec3, _s: &mut ()) -> (f64, [f64; 3]) {
        (self.sigma, self.rgb)
    }
}

/// Solid ball with a fixed headlight-free Lambertian shading.
#[derive(Debug, Clone, Copy)]
pub struct OpaqueSphere {
    pub center: Vec3,
    pub radius: f64,
    pub sigma: f64,
    pub albedo: [f64; 3],
    pub light: Vec3,
}

impl OpaqueSphere {
    pub fn unit(sigma: f64) -> Self {
        Self {
            center: Vec3::zeros(),
            radius: 1.0,
            sigma,
            albedo: [0.8, 0.5, 0.3],
            light: Vec3::new(0.3, 0.5, -0.8).normalize(),
        }
    }
}

impl RadianceField for OpaqueSphere {
    type Scratch = ();
    fn scratch(&self) {}
    fn density(&self, p: &Vec3, _s: &mut ()) -> f64 {
        if (p - self.center).norm() < self.radius {
            self.sigma
        } else {
            0.0
        }
    }
    fn query(&self, p: &Vec3, _d: &Vec3, s: &mut ()) -> (f64, [f64; 3]) {
        let sigma = self.density(p, s);
        let n = (p - self.center).normalize();
        let shade = 0.2 + 0.8 * n.dot(&self.light).max(0.0);
        (sigma, self.albedo.map(|a| a * shade))
    }
}

/// Constant density on the side `normal · p > offset`.
#[derive(Debug, Clone, Copy)]
pub struct HalfSpace {
    pub normal: Vec3,
    pub offset: f64,
    pub sigma: f64,
}

impl RadianceField for HalfSpace {
    type Scratch = ();
    fn scratch(&self) {}
    fn density(&self, p: &Vec3, _s: &mut ()) -> f64 {
        if self.normal.dot(p) > self.offset {
            self.sigma
        } else {
            0.0
        }
    }
    fn query(&self, p: &Vec3, _d: &Vec3, s: &mut ()) -> (f64, [f64; 3]) {
        (self.density(p, s), [0.5, 0.5, 0.5])
    }
}
