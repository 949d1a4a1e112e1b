//! Emission-absorption compositing, occupancy-grid ray marching and
//! full-frame rendering.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colmap::{CameraModel, PoseSE3};
use crate::field::{HashField, Real};
use crate::geometry::{Aabb, Vec3};
use crate::imageio::{save_gray16, save_gray8, ImageRgb};
use crate::rays::{Ray, RayError, ViewRays};

/// Normalizer floor for expected depth.
const DEPTH_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("negative density {0} at sample {1}")]
    NegativeDensity(f64, usize),
}

/// Anything that can be queried for density and view-dependent color at
/// world-space points. `Scratch` is per-thread working memory.
pub trait RadianceField: Sync {
    type Scratch: Send;
    fn scratch(&self) -> Self::Scratch;
    fn density(&self, p: &Vec3, scratch: &mut Self::Scratch) -> f64;
    fn query(&self, p: &Vec3, d: &Vec3, scratch: &mut Self::Scratch) -> (f64, [f64; 3]);
}

/// A trained hash field placed in its scene box.
#[derive(Debug, Clone, Copy)]
pub struct SceneField<'a, T> {
    pub field: &'a HashField<T>,
    pub bounds: Aabb,
}

impl<'a, T: Real> SceneField<'a, T> {
    pub fn new(field: &'a HashField<T>, bounds: Aabb) -> Self {
        Self { field, bounds }
    }

    pub fn unit_point(&self, p: &Vec3) -> [T; 3] {
        let u = self.bounds.to_unit(p);
        [u.x, u.y, u.z].map(|v| T::from_f64(v.clamp(0.0, 1.0)).unwrap())
    }
}

impl<T: Real> RadianceField for SceneField<'_, T> {
    type Scratch = crate::field::Trace<T>;

    fn scratch(&self) -> Self::Scratch {
        self.field.trace()
    }

    fn density(&self, p: &Vec3, s: &mut Self::Scratch) -> f64 {
        let x = self.unit_point(p);
        self.field.density(x, s).expect("clamped point").to_f64().unwrap()
    }

    fn query(&self, p: &Vec3, d: &Vec3, s: &mut Self::Scratch) -> (f64, [f64; 3]) {
        let x = self.unit_point(p);
        let dir = [d.x, d.y, d.z].map(|v| T::from_f64(v).unwrap());
        let o = self.field.forward(x, dir, s).expect("clamped point");
        (o.sigma.to_f64().unwrap(), o.rgb.map(|c| c.to_f64().unwrap()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub step_size: f64,
    pub max_samples_per_ray: usize,
    pub background: [f64; 3],
    /// Marching stops once transmittance falls below this; 0 disables it.
    pub early_stop_transmittance: f64,
    pub min_near: f64,
}

impl RenderSettings {
    pub fn for_bounds(bounds: &Aabb) -> Self {
        Self {
            step_size: bounds.diagonal() * 3f64.sqrt() / 1024.0,
            max_samples_per_ray: 1024,
            background: [0.0; 3],
            early_stop_transmittance: 1e-4,
            min_near: crate::rays::DEFAULT_MIN_NEAR,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err("step_size must be positive".into());
        }
        if self.max_samples_per_ray == 0 {
            return Err("max_samples_per_ray must be >= 1".into());
        }
        if !(0.0..=0.1).contains(&self.early_stop_transmittance) {
            return Err("early_stop_transmittance must be in [0, 0.1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub sigma: f64,
    pub rgb: [f64; 3],
    pub delta: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelResult {
    pub rgb: [f64; 3],
    pub opacity: f64,
    pub depth: f64,
    pub transmittance: f64,
    pub samples: usize,
}

/// Front-to-back accumulator shared by [`composite`] and the marcher.
#[derive(Debug, Clone, Copy)]
pub struct Compositor {
    transmittance: f64,
    rgb: [f64; 3],
    opacity: f64,
    depth: f64,
    samples: usize,
}

impl Default for Compositor {
    fn default() -> Self {
        Self {
            transmittance: 1.0,
            rgb: [0.0; 3],
            opacity: 0.0,
            depth: 0.0,
            samples: 0,
        }
    }
}

impl Compositor {
    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }

    /// Adds one segment and returns its weight.
    #[inline]
    pub fn push(&mut self, s: &Sample) -> f64 {
        let survive = (-s.sigma * s.delta).exp();
        let w = self.transmittance * -(-s.sigma * s.delta).exp_m1();
        for c in 0..3 {
            self.rgb[c] += w * s.rgb[c];
        }
        self.opacity += w;
        self.depth += w * s.t;
        self.transmittance *= survive;
        self.samples += 1;
        w
    }

    pub fn finish(self, background: [f64; 3], t_far: f64) -> PixelResult {
        let t = self.transmittance;
        PixelResult {
            rgb: [0, 1, 2].map(|c| self.rgb[c] + t * background[c]),
            opacity: self.opacity,
            depth: if self.opacity < DEPTH_EPS {
                t_far
            } else {
                self.depth / self.opacity.max(DEPTH_EPS)
            },
            transmittance: t,
            samples: self.samples,
        }
    }
}

pub fn composite(samples: &[Sample], background: [f64; 3]) -> Result<PixelResult, RenderError> {
    let mut acc = Compositor::default();
    for (i, s) in samples.iter().enumerate() {
        if s.sigma < 0.0 {
            return Err(RenderError::NegativeDensity(s.sigma, i));
        }
        acc.push(s);
    }
    let t_far = samples.last().map_or(0.0, |s| s.t + 0.5 * s.delta);
    Ok(acc.finish(background, t_far))
}

/// Per-sample weights and the transmittance in front of each sample.
pub fn weights(samples: &[Sample]) -> (Vec<f64>, Vec<f64>) {
    let mut acc = Compositor::default();
    let mut ts = Vec::with_capacity(samples.len());
    let ws = samples
        .iter()
        .map(|s| {
            ts.push(acc.transmittance());
            acc.push(s)
        })
        .collect();
    (ws, ts)
}

/// Gradients of the composited color with respect to each sample's density
/// and color, given `d_rgb = ∂L/∂C`.
pub fn composite_backward(samples: &[Sample], background: [f64; 3], d_rgb: [f64; 3]) -> Vec<(f64, [f64; 3])> {
    let mut acc = Compositor::default();
    let mut after = Vec::with_capacity(samples.len());
    let mut w = Vec::with_capacity(samples.len());
    for s in samples {
        w.push(acc.push(s));
        after.push(acc.transmittance());
    }
    let t_final = acc.transmittance();
    let mut suffix = background.map(|b| t_final * b);
    let mut out = vec![(0.0, [0.0; 3]); samples.len()];
    for i in (0..samples.len()).rev() {
        let s = &samples[i];
        let mut d_tau = 0.0;
        for c in 0..3 {
            d_tau += d_rgb[c] * (after[i] * s.rgb[c] - suffix[c]);
        }
        out[i] = (d_tau * s.delta, d_rgb.map(|g| g * w[i]));
        for c in 0..3 {
            suffix[c] += w[i] * s.rgb[c];
        }
    }
    out
}

/// Coarse voxel cache of where density exceeds a threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: usize,
    bounds: Aabb,
    decay: f64,
    threshold: f64,
    ema: Vec<f32>,
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(bounds: Aabb, resolution: usize, decay: f64, threshold: f64, initial_ema: f64) -> Self {
        assert!(resolution >= 1);
        let n = resolution.pow(3);
        let mut g = Self {
            resolution,
            bounds,
            decay,
            threshold,
            ema: vec![initial_ema as f32; n],
            occupied: vec![false; n],
        };
        g.refresh_bits();
        g
    }

    /// Occupied everywhere and stays so, absent density, for `warm_updates` refreshes.
    pub fn warm_started(bounds: Aabb, resolution: usize, decay: f64, threshold: f64, warm_updates: u32) -> Self {
        let initial = threshold / decay.powi(warm_updates as i32) * 1.0001;
        Self::new(bounds, resolution, decay, threshold, initial)
    }

    pub fn default_threshold(bounds: &Aabb) -> f64 {
        0.01 * 1024.0 / bounds.diagonal()
    }

    pub fn from_ema(bounds: Aabb, resolution: usize, decay: f64, threshold: f64, ema: Vec<f32>) -> Option<Self> {
        if ema.len() != resolution.pow(3) || ema.iter().any(|v| !(*v >= 0.0)) {
            return None;
        }
        let mut g = Self::new(bounds, resolution, decay, threshold, 0.0);
        g.ema = ema;
        g.refresh_bits();
        Some(g)
    }

    fn refresh_bits(&mut self) {
        let thr = self.threshold;
        for (o, e) in self.occupied.iter_mut().zip(&self.ema) {
            *o = *e as f64 > thr;
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn ema(&self) -> &[f32] {
        &self.ema
    }

    pub fn occupied_bits(&self) -> &[bool] {
        &self.occupied
    }

    pub fn occupancy_fraction(&self) -> f64 {
        self.occupied.iter().filter(|&&o| o).count() as f64 / self.occupied.len() as f64
    }

    pub fn cell_of(&self, p: &Vec3) -> Option<usize> {
        let u = self.bounds.to_unit(p);
        let r = self.resolution;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if !(0.0..=1.0).contains(&u[a]) {
                return None;
            }
            idx[a] = ((u[a] * r as f64) as usize).min(r - 1);
        }
        Some(idx[0] + r * (idx[1] + r * idx[2]))
    }

    pub fn is_occupied(&self, p: &Vec3) -> bool {
        self.cell_of(p).is_some_and(|c| self.occupied[c])
    }

    /// World-space bounds of cell `(i, j, k)`.
    pub fn cell_box(&self, c: [usize; 3]) -> Aabb {
        let e = self.bounds.extent();
        let r = self.resolution as f64;
        let lo: [f64; 3] = [0, 1, 2].map(|a| self.bounds.min[a] + e[a] * c[a] as f64 / r);
        let hi: [f64; 3] = [0, 1, 2].map(|a| self.bounds.min[a] + e[a] * (c[a] + 1) as f64 / r);
        Aabb::new(lo, hi)
    }

    /// One refresh: a jittered density probe per cell, folded into the EMA.
    pub fn update<F: RadianceField, R: Rng>(&mut self, field: &F, rng: &mut R) {
        const CHUNK: usize = 1 << 15;
        let r = self.resolution;
        let n = r.pow(3);
        let e = self.bounds.extent();
        let mut points = Vec::with_capacity(CHUNK.min(n));
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            points.clear();
            for c in start..end {
                let ijk = [c % r, (c / r) % r, c / (r * r)];
                let u: [f64; 3] = [rng.random(), rng.random(), rng.random()];
                points.push(Vec3::from([0, 1, 2].map(|a| {
                    self.bounds.min[a] + e[a] * (ijk[a] as f64 + u[a]) / r as f64
                })));
            }
            let sig: Vec<f64> = points
                .par_iter()
                .map_init(|| field.scratch(), |s, p| field.density(p, s))
                .collect();
            for (k, s) in sig.into_iter().enumerate() {
                let c = start + k;
                self.ema[c] = (self.decay * self.ema[c] as f64).max(s) as f32;
            }
            start = end;
        }
        self.refresh_bits();
    }
}

/// Steps through `[t_near, t_far]` at fixed spacing, first sample at
/// `t_near + offset·step`, evaluating `eval` only in occupied cells.
pub fn march_with<E>(ray: &Ray, grid: Option<&OccupancyGrid>, settings: &RenderSettings, offset: f64, mut eval: E) -> PixelResult
where
    E: FnMut(&Vec3, f64, f64) -> (f64, [f64; 3]),
{
    let step = settings.step_size;
    let mut acc = Compositor::default();
    let mut k = 0usize;
    loop {
        let t = ray.t_near + (k as f64 + offset) * step;
        if t >= ray.t_far || acc.samples >= settings.max_samples_per_ray {
            break;
        }
        k += 1;
        let p = ray.at(t);
        if grid.is_some_and(|g| !g.is_occupied(&p)) {
            continue;
        }
        let delta = step.min(ray.t_far - (t - offset * step));
        let (sigma, rgb) = eval(&p, t, delta);
        acc.push(&Sample { sigma, rgb, delta, t });
        if acc.transmittance < settings.early_stop_transmittance {
            break;
        }
    }
    acc.finish(settings.background, ray.t_far)
}

pub fn march_ray<F: RadianceField>(
    ray: Option<&Ray>,
    grid: Option<&OccupancyGrid>,
    field: &F,
    settings: &RenderSettings,
    scratch: &mut F::Scratch,
) -> PixelResult {
    match ray {
        None => Compositor::default().finish(settings.background, 0.0),
        Some(ray) => march_with(ray, grid, settings, 0.5, |p, _, _| field.query(p, &ray.direction, scratch)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    pub width: u32,
    pub height: u32,
    /// Linear RGB.
    pub rgb: ImageRgb,
    pub opacity: Vec<f32>,
    pub depth: Vec<f32>,
    pub samples_evaluated: u64,
}

impl RenderResult {
    pub fn save_rgb(&self, path: &Path) -> image::ImageResult<()> {
        self.rgb.to_srgb().save_png(path)
    }

    pub fn save_opacity(&self, path: &Path) -> image::ImageResult<()> {
        let v: Vec<u8> = self.opacity.iter().map(|o| (o.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        save_gray8(path, self.width, self.height, &v)
    }

    /// 16-bit depth with `max_depth` mapped to 65535.
    pub fn save_depth(&self, path: &Path, max_depth: f64) -> image::ImageResult<()> {
        let v: Vec<u16> = self
            .depth
            .iter()
            .map(|&d| ((d as f64 / max_depth).clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        save_gray16(path, self.width, self.height, &v)
    }
}

pub fn render_image<F: RadianceField>(
    camera: &CameraModel,
    pose: &PoseSE3,
    bounds: &Aabb,
    grid: Option<&OccupancyGrid>,
    field: &F,
    settings: &RenderSettings,
) -> Result<RenderResult, RayError> {
    let view = ViewRays::new(camera, pose)?;
    let (w, h) = (camera.width, camera.height);
    let rows: Vec<Vec<PixelResult>> = (0..h)
        .into_par_iter()
        .map_init(
            || field.scratch(),
            |s, y| {
                (0..w)
                    .map(|x| {
                        let ray = view.pixel_ray(x, y, bounds, settings.min_near).ok();
                        march_ray(ray.as_ref(), grid, field, settings, s)
                    })
                    .collect()
            },
        )
        .collect();
    let mut out = RenderResult {
        width: w,
        height: h,
        rgb: ImageRgb::new(w, h),
        opacity: Vec::with_capacity((w * h) as usize),
        depth: Vec::with_capacity((w * h) as usize),
        samples_evaluated: 0,
    };
    for (y, row) in rows.iter().enumerate() {
        for (x, px) in row.iter().enumerate() {
            out.rgb.set_pixel(x as u32, y as u32, px.rgb.map(|c| c as f32));
            out.opacity.push(px.opacity as f32);
            out.depth.push(px.depth as f32);
            out.samples_evaluated += px.samples as u64;
        }
    }
    Ok(out)
}
