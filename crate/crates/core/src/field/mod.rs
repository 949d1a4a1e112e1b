//! The radiance field: hash-grid encoding, a density network and a
//! view-dependent color network, with hand-written reverse-mode gradients.
//!
//! All parameters live in one flat vector described by a [`ParamLayout`];
//! the optimizer, clipping and checkpoints operate on that vector directly.
//! The field is generic over the float type so the gradient check can run in
//! `f64` while training runs in `f32`.

pub mod hash;
pub mod mlp;
pub mod sh;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hash::{GridLayout, HashGridConfig, HASH_PRIMES};
pub use mlp::Mlp;
pub use sh::{sh_encode, sh_len};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + Sum + Send + Sync + Debug + Default + 'static
{
}
impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).unwrap()
}

/// Raw density is clamped to this range before exponentiation.
pub const DENSITY_EXP_CLAMP: f64 = 15.0;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("point {0:?} outside the unit cube")]
    OutOfUnitCube([f64; 3]),
    #[error("invalid field config: {0}")]
    BadConfig(String),
    #[error("parameter vector has {found} values, layout needs {expected}")]
    ParamCount { found: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Hash,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub group: ParamGroup,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
}

impl ParamLayout {
    pub(crate) fn push(&mut self, name: &str, shape: Vec<usize>, group: ParamGroup) -> usize {
        let offset = self.total;
        let info = TensorInfo {
            name: name.to_string(),
            shape,
            offset,
            group,
        };
        self.total += info.len();
        self.tensors.push(info);
        offset
    }

    pub fn get(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Per-parameter group tag, for group-specific learning rates.
    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut out = Vec::with_capacity(self.total);
        for t in &self.tensors {
            out.extend(std::iter::repeat_n(t.group, t.len()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub grid: HashGridConfig,
    pub density_hidden: usize,
    pub density_layers: usize,
    /// Density-net outputs beyond the density itself, fed to the color net.
    pub geo_features: usize,
    pub color_hidden: usize,
    pub color_layers: usize,
    pub sh_degree: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig::default(),
            density_hidden: 64,
            density_layers: 1,
            geo_features: 15,
            color_hidden: 64,
            color_layers: 2,
            sh_degree: 4,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        self.grid.validate().map_err(FieldError::BadConfig)?;
        if self.density_hidden == 0 || self.color_hidden == 0 {
            return Err(FieldError::BadConfig("hidden widths must be >= 1".into()));
        }
        if !(1..=4).contains(&self.sh_degree) {
            return Err(FieldError::BadConfig("sh_degree must be in 1..=4".into()));
        }
        Ok(())
    }

    fn density_dims(&self) -> Vec<usize> {
        let mut d = vec![self.grid.encoded_dim()];
        d.extend(std::iter::repeat_n(self.density_hidden, self.density_layers));
        d.push(1 + self.geo_features);
        d
    }

    fn color_dims(&self) -> Vec<usize> {
        let mut d = vec![self.geo_features + sh_len(self.sh_degree)];
        d.extend(std::iter::repeat_n(self.color_hidden, self.color_layers));
        d.push(3);
        d
    }

    pub fn layout(&self) -> ParamLayout {
        FieldStructure::new(self).layout
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone)]
struct FieldStructure {
    layout: ParamLayout,
    grid: GridLayout,
    density: Mlp,
    color: Mlp,
}

impl FieldStructure {
    fn new(cfg: &FieldConfig) -> Self {
        let mut layout = ParamLayout::default();
        let grid = GridLayout::new(&cfg.grid, &mut layout);
        let density = Mlp::new(&cfg.density_dims(), &mut layout, "density");
        let color = Mlp::new(&cfg.color_dims(), &mut layout, "color");
        Self {
            layout,
            grid,
            density,
            color,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOutput<T> {
    pub sigma: T,
    pub rgb: [T; 3],
}

/// Per-sample forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    corner_idx: Vec<u32>,
    corner_w: Vec<T>,
    enc: Vec<T>,
    density_acts: Vec<T>,
    color_in: Vec<T>,
    color_acts: Vec<T>,
    raw_density: T,
    sigma: T,
    rgb: [T; 3],
}

/// Backward scratch sized for one field.
#[derive(Debug, Clone)]
pub struct GradScratch<T> {
    mlp: Vec<T>,
    d_color_in: Vec<T>,
    d_density_out: Vec<T>,
    d_enc: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct HashField<T> {
    config: FieldConfig,
    structure: FieldStructure,
    pub params: Vec<T>,
}

impl<T: Real> HashField<T> {
    pub fn zeros(config: FieldConfig) -> Result<Self, FieldError> {
        config.validate()?;
        let structure = FieldStructure::new(&config);
        Ok(Self {
            params: vec![T::zero(); structure.layout.total],
            config,
            structure,
        })
    }

    /// Hash tables uniform in ±1e-4, dense weights uniform in ±√(6/fan_in),
    /// biases zero except the density output, which starts at `ln(init_sigma)`.
    pub fn init<R: Rng>(config: FieldConfig, init_sigma: f64, rng: &mut R) -> Result<Self, FieldError> {
        if !(init_sigma > 0.0 && init_sigma.is_finite()) {
            return Err(FieldError::BadConfig("init_sigma must be positive".into()));
        }
        let mut f = Self::zeros(config)?;
        for t in f.structure.layout.tensors.clone() {
            let range = t.range();
            match t.group {
                ParamGroup::Hash => {
                    for p in &mut f.params[range] {
                        *p = real(rng.random_range(-1e-4..1e-4));
                    }
                }
                ParamGroup::Dense if t.shape.len() == 2 => {
                    let bound = (6.0 / t.shape[1] as f64).sqrt();
                    for p in &mut f.params[range] {
                        *p = real(rng.random_range(-bound..bound));
                    }
                }
                ParamGroup::Dense => {}
            }
        }
        let last = f.structure.density.layers() - 1;
        let b = f.structure.density.bias_offset(last);
        f.params[b] = real(init_sigma.ln());
        Ok(f)
    }

    pub fn from_params(config: FieldConfig, params: Vec<T>) -> Result<Self, FieldError> {
        let mut f = Self::zeros(config)?;
        if params.len() != f.params.len() {
            return Err(FieldError::ParamCount {
                found: params.len(),
                expected: f.params.len(),
            });
        }
        f.params = params;
        Ok(f)
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.structure.layout
    }

    pub fn grid_layout(&self) -> &GridLayout {
        &self.structure.grid
    }

    pub fn density_net(&self) -> &Mlp {
        &self.structure.density
    }

    pub fn color_net(&self) -> &Mlp {
        &self.structure.color
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Real>(&self) -> HashField<U> {
        HashField {
            config: self.config,
            structure: self.structure.clone(),
            params: self.params.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    pub fn trace(&self) -> Trace<T> {
        let s = &self.structure;
        Trace {
            corner_idx: vec![0; s.grid.levels() * 8],
            corner_w: vec![T::zero(); s.grid.levels() * 8],
            enc: vec![T::zero(); s.density.input_dim()],
            density_acts: vec![T::zero(); s.density.act_len()],
            color_in: vec![T::zero(); s.color.input_dim()],
            color_acts: vec![T::zero(); s.color.act_len()],
            raw_density: T::zero(),
            sigma: T::zero(),
            rgb: [T::zero(); 3],
        }
    }

    pub fn grad_scratch(&self) -> GradScratch<T> {
        let s = &self.structure;
        GradScratch {
            mlp: vec![T::zero(); s.density.scratch_len().max(s.color.scratch_len())],
            d_color_in: vec![T::zero(); s.color.input_dim()],
            d_density_out: vec![T::zero(); s.density.output_dim()],
            d_enc: vec![T::zero(); s.density.input_dim()],
        }
    }

    fn check_unit(x: [T; 3]) -> Result<(), FieldError> {
        if x.iter().all(|v| *v >= T::zero() && *v <= T::one()) {
            Ok(())
        } else {
            Err(FieldError::OutOfUnitCube(x.map(|v| v.to_f64().unwrap_or(f64::NAN))))
        }
    }

    pub fn encode_position(&self, x: [T; 3]) -> Result<Vec<T>, FieldError> {
        Self::check_unit(x)?;
        let mut t = self.trace();
        self.structure
            .grid
            .encode(&self.params, x, &mut t.corner_idx, &mut t.corner_w, &mut t.enc);
        Ok(t.enc)
    }

    fn density_pass(&self, x: [T; 3], t: &mut Trace<T>) {
        let s = &self.structure;
        s.grid.encode(&self.params, x, &mut t.corner_idx, &mut t.corner_w, &mut t.enc);
        s.density.forward(&self.params, &t.enc, &mut t.density_acts);
        let raw = s.density.output(&t.density_acts)[0];
        t.raw_density = raw;
        let c = real::<T>(DENSITY_EXP_CLAMP);
        t.sigma = raw.max(-c).min(c).exp();
    }

    /// Density alone, skipping the color network.
    pub fn density(&self, x: [T; 3], t: &mut Trace<T>) -> Result<T, FieldError> {
        Self::check_unit(x)?;
        self.density_pass(x, t);
        Ok(t.sigma)
    }

    pub fn forward(&self, x: [T; 3], d: [T; 3], t: &mut Trace<T>) -> Result<FieldOutput<T>, FieldError> {
        Self::check_unit(x)?;
        self.density_pass(x, t);
        let s = &self.structure;
        let geo = self.config.geo_features;
        t.color_in[..geo].copy_from_slice(&s.density.output(&t.density_acts)[1..1 + geo]);
        sh_encode(self.config.sh_degree, d, &mut t.color_in[geo..]);
        s.color.forward(&self.params, &t.color_in, &mut t.color_acts);
        let logits = s.color.output(&t.color_acts);
        for c in 0..3 {
            t.rgb[c] = T::one() / (T::one() + (-logits[c]).exp());
        }
        Ok(FieldOutput {
            sigma: t.sigma,
            rgb: t.rgb,
        })
    }

    /// Accumulates into `grads` the parameter gradient of a loss whose
    /// derivatives with respect to this sample's outputs are `d_sigma`, `d_rgb`.
    pub fn backward(&self, t: &Trace<T>, d_sigma: T, d_rgb: [T; 3], grads: &mut [T], s: &mut GradScratch<T>) {
        let st = &self.structure;
        let geo = self.config.geo_features;
        let mut d_logit = [T::zero(); 3];
        for c in 0..3 {
            d_logit[c] = d_rgb[c] * t.rgb[c] * (T::one() - t.rgb[c]);
        }
        st.color.backward(
            &self.params,
            grads,
            &t.color_in,
            &t.color_acts,
            &d_logit,
            Some(&mut s.d_color_in),
            &mut s.mlp,
        );
        let c = real::<T>(DENSITY_EXP_CLAMP);
        s.d_density_out[0] = if t.raw_density > -c && t.raw_density < c {
            d_sigma * t.sigma
        } else {
            T::zero()
        };
        s.d_density_out[1..1 + geo].copy_from_slice(&s.d_color_in[..geo]);
        st.density.backward(
            &self.params,
            grads,
            &t.enc,
            &t.density_acts,
            &s.d_density_out,
            Some(&mut s.d_enc),
            &mut s.mlp,
        );
        st.grid.backward(&t.corner_idx, &t.corner_w, &s.d_enc, grads);
    }

    /// Batched gradient: `grads` is zeroed and filled with the sum over samples.
    pub fn eval_field_grad(
        &self,
        samples: &[([T; 3], [T; 3])],
        upstream: &[(T, [T; 3])],
    ) -> Result<Vec<T>, FieldError> {
        assert_eq!(samples.len(), upstream.len());
        let mut grads = vec![T::zero(); self.params.len()];
        let mut t = self.trace();
        let mut s = self.grad_scratch();
        for (&(x, d), &(ds, drgb)) in samples.iter().zip(upstream) {
            self.forward(x, d, &mut t)?;
            self.backward(&t, ds, drgb, &mut grads, &mut s);
        }
        Ok(grads)
    }

    pub fn eval_field(&self, x: [T; 3], d: [T; 3]) -> Result<FieldOutput<T>, FieldError> {
        let mut t = self.trace();
        self.forward(x, d, &mut t)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> FieldConfig {
        FieldConfig {
            grid: HashGridConfig {
                levels: 2,
                table_size_log2: 4,
                features_per_level: 2,
                base_resolution: 2,
                max_resolution: 4,
            },
            density_hidden: 8,
            density_layers: 1,
            geo_features: 3,
            color_hidden: 8,
            color_layers: 2,
            sh_degree: 2,
        }
    }

    fn randomized(cfg: FieldConfig, seed: u64, table_scale: f64) -> HashField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = HashField::<f64>::init(cfg, 0.5, &mut rng).unwrap();
        for t in f.layout().tensors.clone() {
            for p in &mut f.params[t.range()] {
                *p = match t.group {
                    ParamGroup::Hash => rng.random_range(-table_scale..table_scale),
                    ParamGroup::Dense => rng.random_range(-0.8..0.8),
                };
            }
        }
        f
    }

    fn unit_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
        loop {
            let v: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 0.1 && n <= 1.0 {
                return v.map(|c| c / n);
            }
        }
    }

    #[test]
    fn param_count_is_function_of_config() {
        let cfg = FieldConfig::default();
        let layout = cfg.layout();
        let grid: usize = cfg
            .grid
            .resolutions()
            .iter()
            .map(|&n| ((n as usize + 1).pow(3)).min(1 << 19) * 2)
            .sum();
        let density = 32 * 64 + 64 + 64 * 16 + 16;
        let color = 31 * 64 + 64 + 64 * 64 + 64 + 64 * 3 + 3;
        assert_eq!(layout.total, grid + density + color);
        let f = HashField::<f32>::zeros(cfg).unwrap();
        assert_eq!(f.param_count(), layout.total);
        let t = tiny_config();
        assert_eq!(t.param_count(), t.layout().total);
    }

    #[test]
    fn zero_tables_encode_to_zero() {
        let f = HashField::<f64>::zeros(tiny_config()).unwrap();
        assert!(f.encode_position([0.3, 0.7, 0.1]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_cube_rejected() {
        let f = HashField::<f64>::zeros(tiny_config()).unwrap();
        assert!(matches!(f.encode_position([1.01, 0.5, 0.5]), Err(FieldError::OutOfUnitCube(_))));
        assert!(matches!(f.eval_field([0.5, -0.1, 0.5], [0.0, 0.0, 1.0]), Err(FieldError::OutOfUnitCube(_))));
    }

    #[test]
    fn corner_lookup_collapses_to_entry() {
        let f = randomized(tiny_config(), 4, 1.0);
        let g = f.grid_layout();
        // Level 0 has N=2; x=0.5 is vertex (1,1,1); x=1 is vertex (2,2,2).
        for (x, v) in [(0.5, [1u32, 1, 1]), (1.0, [2, 2, 2]), (0.0, [0, 0, 0])] {
            let enc = f.encode_position([x; 3]).unwrap();
            let row = g.offsets[0] + g.vertex_row(0, v) * 2;
            assert_eq!(&enc[0..2], &f.params[row..row + 2]);
        }
    }

    fn trilinear_oracle(f: &HashField<f64>, l: usize, x: [f64; 3]) -> Vec<f64> {
        let g = f.grid_layout();
        let n = g.resolutions[l] as f64;
        let mut out = vec![0.0; g.features];
        let cell: Vec<f64> = x.iter().map(|&c| (c * n).floor().min(n - 1.0)).collect();
        for dz in 0..2u32 {
            for dy in 0..2u32 {
                for dx in 0..2u32 {
                    let d = [dx, dy, dz];
                    let mut w = 1.0;
                    let mut v = [0u32; 3];
                    for a in 0..3 {
                        let corner = cell[a] + d[a] as f64;
                        w *= 1.0 - (x[a] * n - corner).abs();
                        v[a] = corner as u32;
                    }
                    let s = (n as usize) + 1;
                    let row = g.offsets[l] + (v[0] as usize + s * v[1] as usize + s * s * v[2] as usize) * g.features;
                    for k in 0..g.features {
                        out[k] += w * f.params[row + k];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn dense_encoding_matches_trilinear_oracle() {
        let mut cfg = tiny_config();
        cfg.grid = HashGridConfig {
            levels: 2,
            table_size_log2: 10,
            features_per_level: 2,
            base_resolution: 4,
            max_resolution: 4,
        };
        let f = randomized(cfg, 8, 1.0);
        assert!(f.grid_layout().dense.iter().all(|&d| d));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let enc = f.encode_position(x).unwrap();
            for l in 0..2 {
                let want = trilinear_oracle(&f, l, x);
                for k in 0..2 {
                    assert!((enc[l * 2 + k] - want[k]).abs() < 1e-6);
                }
            }
        }
    }

    /// Straight-line forward pass reading tensors by name.
    fn naive_forward(f: &HashField<f64>, x: [f64; 3], d: [f64; 3]) -> (f64, [f64; 3]) {
        let cfg = f.config();
        let lay = f.layout();
        let mut enc = Vec::new();
        for l in 0..cfg.grid.levels {
            let g = f.grid_layout();
            let n = g.resolutions[l] as f64;
            let mut feat = vec![0.0; g.features];
            let i0: Vec<f64> = x.iter().map(|&c| (c * n).floor().min(n - 1.0)).collect();
            for c in 0..8u32 {
                let mut w = 1.0;
                let mut v = [0u32; 3];
                for a in 0..3 {
                    let bit = (c >> a) & 1;
                    let fr = x[a] * n - i0[a];
                    w *= if bit == 1 { fr } else { 1.0 - fr };
                    v[a] = i0[a] as u32 + bit;
                }
                let row = if g.dense[l] {
                    let s = n as usize + 1;
                    v[0] as usize + s * v[1] as usize + s * s * v[2] as usize
                } else {
                    let h = v[0] ^ v[1].wrapping_mul(2654435761) ^ v[2].wrapping_mul(805459861);
                    (h as usize) % g.entries[l]
                };
                let table = lay.get(&format!("hash.level{l}")).unwrap();
                for k in 0..g.features {
                    feat[k] += w * f.params[table.offset + row * g.features + k];
                }
            }
            enc.extend(feat);
        }
        let dense = |prefix: &str, layers: usize, input: Vec<f64>| {
            let mut h = input;
            for k in 0..layers {
                let w = lay.get(&format!("{prefix}.l{k}.weight")).unwrap();
                let b = lay.get(&format!("{prefix}.l{k}.bias")).unwrap();
                let (rows, cols) = (w.shape[0], w.shape[1]);
                let mut out = vec![0.0; rows];
                for r in 0..rows {
                    out[r] = f.params[b.offset + r]
                        + (0..cols).map(|c| f.params[w.offset + r * cols + c] * h[c]).sum::<f64>();
                    if k + 1 < layers {
                        out[r] = out[r].max(0.0);
                    }
                }
                h = out;
            }
            h
        };
        let dout = dense("density", cfg.density_layers + 1, enc);
        let sigma = dout[0].clamp(-15.0, 15.0).exp();
        let mut cin = dout[1..].to_vec();
        let mut shv = vec![0.0; sh_len(cfg.sh_degree)];
        sh_encode(cfg.sh_degree, d, &mut shv);
        cin.extend(shv);
        let logits = dense("color", cfg.color_layers + 1, cin);
        (sigma, [0, 1, 2].map(|c| 1.0 / (1.0 + (-logits[c]).exp())))
    }

    #[test]
    fn forward_matches_naive_reimplementation() {
        for seed in 0..5 {
            let f = randomized(tiny_config(), seed, 0.5);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            for _ in 0..50 {
                let x = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
                let d = unit_dir(&mut rng);
                let out = f.eval_field(x, d).unwrap();
                let (s, rgb) = naive_forward(&f, x, d);
                assert!((out.sigma - s).abs() <= 1e-6 * s.max(1.0));
                for c in 0..3 {
                    assert!((out.rgb[c] - rgb[c]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn fresh_init_hits_density_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = HashField::<f32>::init(FieldConfig::default(), 0.03, &mut rng).unwrap();
        let mut t = f.trace();
        for i in 0..20 {
            let x = [i as f32 / 20.0, 0.5, 1.0 - i as f32 / 20.0];
            let o = f.forward(x, [0.0, 0.0, 1.0], &mut t).unwrap();
            assert!((o.sigma / 0.03 - 1.0).abs() < 0.01, "{}", o.sigma);
            assert!(o.rgb.iter().all(|c| *c > 0.0 && *c < 1.0));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let f = randomized(tiny_config(), 2, 0.5);
        let g = f
            .eval_field_grad(&[([0.2, 0.4, 0.6], [0.0, 1.0, 0.0])], &[(0.0, [0.0; 3])])
            .unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn table_gradient_touches_only_cell_corners() {
        let mut cfg = tiny_config();
        cfg.grid = HashGridConfig {
            levels: 1,
            table_size_log2: 10,
            features_per_level: 2,
            base_resolution: 4,
            max_resolution: 4,
        };
        let f = randomized(cfg, 3, 0.5);
        let x = [0.3, 0.6, 0.9];
        let g = f.eval_field_grad(&[(x, [0.0, 0.0, 1.0])], &[(1.0, [0.3, -0.2, 0.5])]).unwrap();
        let table = f.layout().get("hash.level0").unwrap();
        let gl = f.grid_layout();
        let mut corners = std::collections::BTreeSet::new();
        for c in 0..8u32 {
            let v = [1 + (c & 1), 2 + ((c >> 1) & 1), 3 + ((c >> 2) & 1)];
            corners.insert(gl.vertex_row(0, v));
        }
        for row in 0..table.shape[0] {
            let touched = (0..2).any(|k| g[table.offset + row * 2 + k] != 0.0);
            assert_eq!(touched, corners.contains(&row), "row {row}");
        }
    }

    fn fd_check(f: &HashField<f64>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<([f64; 3], [f64; 3])> = (0..4)
            .map(|_| {
                let x = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
                (x, unit_dir(&mut rng))
            })
            .collect();
        let up: Vec<(f64, [f64; 3])> = (0..4)
            .map(|_| {
                (
                    rng.random_range(-1.0..1.0),
                    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                )
            })
            .collect();
        let loss = |f: &HashField<f64>| -> f64 {
            samples
                .iter()
                .zip(&up)
                .map(|(&(x, d), &(ds, dc))| {
                    let o = f.eval_field(x, d).unwrap();
                    ds * o.sigma + dc[0] * o.rgb[0] + dc[1] * o.rgb[1] + dc[2] * o.rgb[2]
                })
                .sum()
        };
        let g = f.eval_field_grad(&samples, &up).unwrap();
        let mut probe = f.clone();
        let eps = 1e-4;
        for i in 0..f.params.len() {
            let orig = probe.params[i];
            probe.params[i] = orig + eps;
            let lp = loss(&probe);
            probe.params[i] = orig - eps;
            let lm = loss(&probe);
            probe.params[i] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let err = (g[i] - fd).abs();
            assert!(
                err <= 1e-3 * g[i].abs().max(fd.abs()) + 1e-9,
                "param {i}: analytic {} vs fd {fd}",
                g[i]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            fd_check(&randomized(tiny_config(), seed, 0.5), 50 + seed);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn density_ignores_direction(
            seed in 0u64..1000, x in 0.0f64..=1.0, y in 0.0f64..=1.0, z in 0.0f64..=1.0,
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0,
        ) {
            let n = (a * a + b * b + c * c).sqrt();
            prop_assume!(n > 1e-3);
            let f = randomized(tiny_config(), seed, 0.5);
            let d = [a / n, b / n, c / n];
            let o1 = f.eval_field([x, y, z], d).unwrap();
            let o2 = f.eval_field([x, y, z], d.map(|v| -v)).unwrap();
            prop_assert_eq!(o1.sigma, o2.sigma);
            prop_assert!(o1.rgb.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
