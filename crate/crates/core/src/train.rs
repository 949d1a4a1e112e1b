//! Optimization loop: ray batches, marching with traced field samples,
//! photometric loss, exact gradients, clipping and Adam updates.
//!
//! Training runs on one thread so that a seed fixes the loss history bit for
//! bit. Each ray is marched, scored and back-propagated before the next one,
//! so traces for a single ray are all that is held in memory.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldConfig, FieldError, GradScratch, HashField, ParamGroup, Trace};
use crate::rays::{sample_masked_batch, sample_unmasked_batch, stream_rng, RayError, TrainingSet};
use crate::render::{composite_backward, march_with, OccupancyGrid, RenderSettings, Sample, SceneField};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite ({loss}) at step {step}")]
    DivergenceDetected { step: u64, loss: f64 },
    #[error("prediction and target lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Ray(#[from] RayError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr_hash: f64,
    pub lr_dense: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning-rate floor reached by the cosine schedule, as a fraction.
    pub lr_final_frac: f64,
    pub grad_clip_norm: f64,
    pub mask_sampling: bool,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
    pub grid_resolution: usize,
    pub grid_decay: f64,
    /// `None` selects `0.01·1024/diagonal`.
    pub grid_threshold: Option<f64>,
    pub grid_update_every: u64,
    pub grid_warm_updates: u32,
    /// `None` selects `0.1/diagonal`.
    pub init_sigma: Option<f64>,
    /// `None` selects the defaults derived from the scene box.
    pub render: Option<RenderSettings>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            batch_size: 4096,
            lr_hash: 1e-2,
            lr_dense: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-15,
            lr_final_frac: 0.1,
            grad_clip_norm: 1.0,
            mask_sampling: true,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            grid_resolution: 128,
            grid_decay: 0.95,
            grid_threshold: None,
            grid_update_every: 16,
            grid_warm_updates: 16,
            init_sigma: None,
            render: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr_hash >= 0.0 && self.lr_dense >= 0.0) {
            return bad("learning rates must be >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must be in [0, 1)");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be > 0");
        }
        if self.grid_update_every == 0 || self.grid_resolution == 0 {
            return bad("grid_update_every and grid_resolution must be >= 1");
        }
        if !(0.0..1.0).contains(&self.grid_decay) {
            return bad("grid_decay must be in [0, 1)");
        }
        if let Some(r) = &self.render {
            r.validate().map_err(TrainError::BadConfig)?;
        }
        Ok(())
    }
}

const SCHEDULE: [(u64, u64); 5] = [(62, 3000), (310, 15000), (647, 30000), (1392, 50000), (2667, 100000)];

/// Iteration count for a dataset with `n_pose` posed frames: exact at the
/// table entries, linear between them, clamped to `[3000, 100000]`.
pub fn schedule_iterations(n_pose: u64) -> u64 {
    let (first, last) = (SCHEDULE[0], SCHEDULE[SCHEDULE.len() - 1]);
    if n_pose <= first.0 {
        return first.1;
    }
    if n_pose >= last.0 {
        return last.1;
    }
    for w in SCHEDULE.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if n_pose <= x1 {
            let f = (n_pose - x0) as f64 / (x1 - x0) as f64;
            return (y0 as f64 + f * (y1 - y0) as f64).round() as u64;
        }
    }
    unreachable!()
}

/// Mean squared error over rays and channels and its gradient.
pub fn loss_mse(pred: &[[f64; 3]], target: &[[f32; 3]]) -> Result<(f64, Vec<[f64; 3]>)> {
    if pred.len() != target.len() {
        return Err(TrainError::LengthMismatch(pred.len(), target.len()));
    }
    let n = (3 * pred.len()) as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            [0, 1, 2].map(|c| {
                let d = p[c] - t[c] as f64;
                loss += d * d;
                2.0 * d / n
            })
        })
        .collect();
    Ok((loss / n, grad))
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f32], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|&g| g as f64 * g as f64).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Cosine decay from 1 to `floor` over `total` steps.
pub fn lr_factor(step: u64, total: u64, floor: f64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let p = (step as f64 / total as f64).min(1.0);
    floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub steps: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    /// One bias-corrected update with a per-parameter learning rate chosen by group.
    pub fn update(&mut self, params: &mut [f32], grads: &[f32], groups: &[ParamGroup], lr: [f64; 2], cfg: &TrainConfig) {
        self.steps += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.steps as i32);
        let bc2 = 1.0 - b2.powi(self.steps as i32);
        let step_hash = (lr[0] / bc1) as f32;
        let step_dense = (lr[1] / bc1) as f32;
        let inv_bc2 = (1.0 / bc2) as f32;
        let (b1, b2, eps) = (b1 as f32, b2 as f32, cfg.eps as f32);
        for i in 0..params.len() {
            let g = grads[i];
            let m = b1 * self.m[i] + (1.0 - b1) * g;
            let v = b2 * self.v[i] + (1.0 - b2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            let step = match groups[i] {
                ParamGroup::Hash => step_hash,
                ParamGroup::Dense => step_dense,
            };
            params[i] -= step * m / ((v * inv_bc2).sqrt() + eps);
        }
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub field: HashField<f32>,
    pub adam: Adam,
    pub grid: OccupancyGrid,
    pub rng: ChaCha8Rng,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub psnr_train_batch: f64,
    pub rays_per_sec: f64,
    pub grid_occupancy_frac: f64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub state: TrainState,
    pub data: TrainingSet,
    pub settings: RenderSettings,
    groups: Vec<ParamGroup>,
    grads: Vec<f32>,
    traces: Vec<Trace<f32>>,
    scratch: GradScratch<f32>,
    /// Every pixel ever sampled inside the mask check, for auditing masked runs.
    pub outside_mask_draws: u64,
}

impl Trainer {
    pub fn resolve_init_sigma(cfg: &TrainConfig, data: &TrainingSet) -> f64 {
        cfg.init_sigma.unwrap_or(0.1 / data.bounds.diagonal())
    }

    pub fn new(field_config: FieldConfig, config: TrainConfig, data: TrainingSet) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, 0);
        let field = HashField::init(field_config, Self::resolve_init_sigma(&config, &data), &mut rng)?;
        let threshold = config
            .grid_threshold
            .unwrap_or_else(|| OccupancyGrid::default_threshold(&data.bounds));
        let grid = OccupancyGrid::warm_started(
            data.bounds,
            config.grid_resolution,
            config.grid_decay,
            threshold,
            config.grid_warm_updates,
        );
        let state = TrainState {
            step: 0,
            adam: Adam::new(field.param_count()),
            field,
            grid,
            rng,
            loss_history: Vec::new(),
        };
        Self::from_state(config, state, data)
    }

    pub fn from_state(config: TrainConfig, state: TrainState, data: TrainingSet) -> Result<Self> {
        config.validate()?;
        let settings = config.render.unwrap_or_else(|| RenderSettings::for_bounds(&data.bounds));
        let data = data.with_min_near(settings.min_near);
        Ok(Self {
            groups: state.field.layout().groups(),
            grads: vec![0.0; state.field.param_count()],
            traces: Vec::new(),
            scratch: state.field.grad_scratch(),
            config,
            state,
            data,
            settings,
            outside_mask_draws: 0,
        })
    }

    pub fn scene_field(&self) -> SceneField<'_, f32> {
        SceneField::new(&self.state.field, self.data.bounds)
    }

    /// One optimization step. On divergence the state is left untouched.
    pub fn step(&mut self) -> Result<StepLog> {
        let started = Instant::now();
        let cfg = &self.config;
        let st = &mut self.state;
        let batch = if cfg.mask_sampling {
            sample_masked_batch(&self.data, &mut st.rng, cfg.batch_size)?
        } else {
            sample_unmasked_batch(&self.data, &mut st.rng, cfg.batch_size)?
        };
        if cfg.mask_sampling {
            self.outside_mask_draws += batch
                .pixel_xy
                .iter()
                .filter(|[x, y]| !self.data.mask.contains(*x, *y))
                .count() as u64;
        }
        self.grads.fill(0.0);
        let n = (3 * batch.len()) as f64;
        let mut loss = 0.0;
        let mut samples: Vec<Sample> = Vec::new();
        let bounds = self.data.bounds;
        for (ray, target) in batch.rays.iter().zip(&batch.target_rgb) {
            let offset: f64 = st.rng.random();
            samples.clear();
            let pred = match ray {
                None => self.settings.background,
                Some(ray) => {
                    let field = &st.field;
                    let traces = &mut self.traces;
                    let dir = [ray.direction.x as f32, ray.direction.y as f32, ray.direction.z as f32];
                    let mut used = 0usize;
                    let px = march_with(ray, Some(&st.grid), &self.settings, offset, |p, t, delta| {
                        if used == traces.len() {
                            traces.push(field.trace());
                        }
                        let u = bounds.to_unit(p);
                        let x = [u.x, u.y, u.z].map(|v| v.clamp(0.0, 1.0) as f32);
                        let o = field.forward(x, dir, &mut traces[used]).expect("clamped point");
                        used += 1;
                        let rgb = o.rgb.map(|c| c as f64);
                        samples.push(Sample {
                            sigma: o.sigma as f64,
                            rgb,
                            delta,
                            t,
                        });
                        (o.sigma as f64, rgb)
                    });
                    px.rgb
                }
            };
            let d_pred = [0, 1, 2].map(|c| {
                let d = pred[c] - target[c] as f64;
                loss += d * d;
                2.0 * d / n
            });
            if samples.is_empty() {
                continue;
            }
            let sample_grads = composite_backward(&samples, self.settings.background, d_pred);
            for (k, (ds, drgb)) in sample_grads.iter().enumerate() {
                st.field.backward(
                    &self.traces[k],
                    *ds as f32,
                    drgb.map(|g| g as f32),
                    &mut self.grads,
                    &mut self.scratch,
                );
            }
        }
        let loss = loss / n;
        if !loss.is_finite() || self.grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::DivergenceDetected { step: st.step, loss });
        }
        clip_grad_norm(&mut self.grads, cfg.grad_clip_norm);
        let f = lr_factor(st.step, cfg.iterations, cfg.lr_final_frac);
        st.adam.update(
            &mut st.field.params,
            &self.grads,
            &self.groups,
            [cfg.lr_hash * f, cfg.lr_dense * f],
            cfg,
        );
        st.step += 1;
        st.loss_history.push(loss);
        if st.step % cfg.grid_update_every == 0 {
            let field = SceneField::new(&st.field, bounds);
            st.grid.update(&field, &mut st.rng);
        }
        let secs = started.elapsed().as_secs_f64().max(1e-9);
        Ok(StepLog {
            step: st.step,
            loss,
            psnr_train_batch: -10.0 * loss.log10(),
            rays_per_sec: batch.len() as f64 / secs,
            grid_occupancy_frac: st.grid.occupancy_fraction(),
        })
    }

    /// Runs until `step == until`, calling `on_step` after each step.
    pub fn run_until(&mut self, until: u64, mut on_step: impl FnMut(&Self, &StepLog)) -> Result<()> {
        while self.state.step < until {
            let log = self.step()?;
            on_step(self, &log);
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::colmap::{CameraModel, PoseSE3};
    use crate::dataset::CircleMask;
    use crate::field::HashGridConfig;
    use crate::geometry::{Aabb, Vec3};
    use crate::imageio::ImageRgb;
    use proptest::prelude::{prop, prop_assert, proptest};

    #[test]
    fn schedule_table_and_clamps() {
        for (n, it) in SCHEDULE {
            assert_eq!(schedule_iterations(n), it);
        }
        assert_eq!(schedule_iterations(1), 3000);
        assert_eq!(schedule_iterations(10_000), 100_000);
        let mid = schedule_iterations(186);
        assert_eq!(mid, 9000);
    }

    proptest! {
        #[test]
        fn schedule_is_monotone(a in 1u64..4000, b in 1u64..4000) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(schedule_iterations(lo) <= schedule_iterations(hi));
        }

        #[test]
        fn clip_bounds_norm(g in prop::collection::vec(-100f32..100.0, 1..200), max in 0.01f64..10.0) {
            let mut g = g;
            clip_grad_norm(&mut g, max);
            let n = g.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            prop_assert!(n <= max + 1e-6 * max.max(1.0));
        }
    }

    #[test]
    fn mse_cases_and_gradient() {
        let t = vec![[1.0f32; 3]; 4];
        let (l, g) = loss_mse(&vec![[1.0; 3]; 4], &t).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == [0.0; 3]));
        let (l, _) = loss_mse(&vec![[0.0; 3]; 4], &t).unwrap();
        assert_eq!(l, 1.0);
        assert!(matches!(loss_mse(&[[0.0; 3]], &t), Err(TrainError::LengthMismatch(1, 4))));

        let mut rng = stream_rng(1, 0);
        let pred: Vec<[f64; 3]> = (0..5).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let tgt: Vec<[f32; 3]> = (0..5).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let (_, g) = loss_mse(&pred, &tgt).unwrap();
        let eps = 1e-6;
        for i in 0..5 {
            for c in 0..3 {
                let mut p = pred.clone();
                p[i][c] += eps;
                let lp = loss_mse(&p, &tgt).unwrap().0;
                p[i][c] -= 2.0 * eps;
                let lm = loss_mse(&p, &tgt).unwrap().0;
                assert!((g[i][c] - (lp - lm) / (2.0 * eps)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert!((lr_factor(0, 100, 0.1) - 1.0).abs() < 1e-12);
        assert!((lr_factor(100, 100, 0.1) - 0.1).abs() < 1e-12);
        assert!((lr_factor(50, 100, 0.1) - 0.55).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut p = vec![1.0f32, 1.0];
        let mut a = Adam::new(2);
        a.update(&mut p, &[0.5, -2.0], &[ParamGroup::Hash, ParamGroup::Dense], [1e-2, 1e-3], &cfg);
        assert!((p[0] - (1.0 - 1e-2)).abs() < 1e-6);
        assert!((p[1] - (1.0 + 1e-3)).abs() < 1e-6);
    }

    pub(crate) fn tiny_set() -> TrainingSet {
        let camera = CameraModel::pinhole(1, 16, 16, 16.0, 16.0, 8.0, 8.0);
        let frames = (0..3)
            .map(|k| {
                let eye = Vec3::new(0.3 * (k as f64 - 1.0), 0.0, -2.0);
                let pose = PoseSE3::look_at(&eye, &Vec3::zeros(), &Vec3::new(0.0, 1.0, 0.0)).unwrap();
                let mut img = ImageRgb::new(16, 16);
                for y in 0..16 {
                    for x in 0..16 {
                        img.set_pixel(x, y, [x as f32 / 16.0, y as f32 / 16.0, 0.5]);
                    }
                }
                (k, pose, img)
            })
            .collect();
        TrainingSet::new(camera, Aabb::new([-1.0; 3], [1.0; 3]), CircleMask::full(16, 16), frames).unwrap()
    }

    pub(crate) fn tiny_field() -> FieldConfig {
        FieldConfig {
            grid: HashGridConfig {
                levels: 4,
                table_size_log2: 10,
                features_per_level: 2,
                base_resolution: 4,
                max_resolution: 32,
            },
            density_hidden: 16,
            density_layers: 1,
            geo_features: 7,
            color_hidden: 16,
            color_layers: 2,
            sh_degree: 2,
        }
    }

    pub(crate) fn tiny_config(iterations: u64) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 64,
            grid_resolution: 16,
            render: Some(RenderSettings {
                step_size: 0.05,
                max_samples_per_ray: 256,
                background: [0.0; 3],
                early_stop_transmittance: 1e-4,
                min_near: 1e-3,
            }),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut cfg = tiny_config(5);
        cfg.lr_hash = 0.0;
        cfg.lr_dense = 0.0;
        let mut t = Trainer::new(tiny_field(), cfg, tiny_set()).unwrap();
        let before = t.state.field.params.clone();
        t.run_until(5, |_, _| {}).unwrap();
        assert_eq!(t.state.field.params, before);
        assert_eq!(t.state.loss_history.len(), 5);
    }

    #[test]
    fn same_seed_same_losses() {
        let run = || {
            let mut t = Trainer::new(tiny_field(), tiny_config(20), tiny_set()).unwrap();
            t.run_until(20, |_, _| {}).unwrap();
            t.state.loss_history
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn loss_decreases_on_tiny_scene() {
        let mut t = Trainer::new(tiny_field(), tiny_config(200), tiny_set()).unwrap();
        t.run_until(200, |_, log| assert!(log.loss.is_finite())).unwrap();
        let h = &t.state.loss_history;
        let early: f64 = h[..10].iter().sum::<f64>() / 10.0;
        let late: f64 = h[190..].iter().sum::<f64>() / 10.0;
        assert!(late < 0.5 * early, "{early} -> {late}");
        assert!(t.state.field.all_finite());
    }

    #[test]
    fn bad_config_rejected() {
        let mut cfg = tiny_config(1);
        cfg.batch_size = 0;
        assert!(matches!(Trainer::new(tiny_field(), cfg, tiny_set()), Err(TrainError::BadConfig(_))));
    }
}
