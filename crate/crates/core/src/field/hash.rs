//! Multiresolution hash-grid positional encoding.

use serde::{Deserialize, Serialize};

use super::{ParamGroup, ParamLayout, Real};

pub const HASH_PRIMES: [u32; 3] = [1, 2654435761, 805459861];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashGridConfig {
    pub levels: usize,
    pub table_size_log2: u32,
    pub features_per_level: usize,
    pub base_resolution: u32,
    pub max_resolution: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            table_size_log2: 19,
            features_per_level: 2,
            base_resolution: 16,
            max_resolution: 2048,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.levels < 1 {
            return Err("levels must be >= 1".into());
        }
        if self.features_per_level < 1 {
            return Err("features_per_level must be >= 1".into());
        }
        if !(1..=28).contains(&self.table_size_log2) {
            return Err("table_size_log2 must be in 1..=28".into());
        }
        if self.base_resolution < 1 || self.max_resolution < self.base_resolution {
            return Err("need 1 <= base_resolution <= max_resolution".into());
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1usize << self.table_size_log2
    }

    /// Growth factor between consecutive levels.
    pub fn growth(&self) -> f64 {
        if self.levels == 1 {
            return 1.0;
        }
        ((self.max_resolution as f64).ln() - (self.base_resolution as f64).ln()) / (self.levels - 1) as f64
    }

    pub fn resolutions(&self) -> Vec<u32> {
        let b = self.growth().exp();
        (0..self.levels)
            .map(|l| {
                // Guards the top level against exp/ln round-off (2047.9999 → 2047).
                let n = self.base_resolution as f64 * b.powi(l as i32);
                (n * (1.0 + 1e-12)).floor() as u32
            })
            .collect()
    }

    pub fn encoded_dim(&self) -> usize {
        self.levels * self.features_per_level
    }
}

/// Table placement of each level inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct GridLayout {
    pub resolutions: Vec<u32>,
    pub entries: Vec<usize>,
    pub offsets: Vec<usize>,
    pub dense: Vec<bool>,
    pub features: usize,
}

impl GridLayout {
    pub(crate) fn new(cfg: &HashGridConfig, layout: &mut ParamLayout) -> Self {
        let resolutions = cfg.resolutions();
        let mut entries = Vec::new();
        let mut offsets = Vec::new();
        let mut dense = Vec::new();
        for (l, &n) in resolutions.iter().enumerate() {
            let vertices = (n as u64 + 1).pow(3);
            let is_dense = vertices <= cfg.table_size() as u64;
            let e = if is_dense { vertices as usize } else { cfg.table_size() };
            offsets.push(layout.push(&format!("hash.level{l}"), vec![e, cfg.features_per_level], ParamGroup::Hash));
            entries.push(e);
            dense.push(is_dense);
        }
        Self {
            resolutions,
            entries,
            offsets,
            dense,
            features: cfg.features_per_level,
        }
    }

    pub fn levels(&self) -> usize {
        self.resolutions.len()
    }

    /// Table row of integer vertex `c` at level `l`.
    #[inline]
    pub fn vertex_row(&self, l: usize, c: [u32; 3]) -> usize {
        if self.dense[l] {
            let s = self.resolutions[l] as usize + 1;
            c[0] as usize + s * (c[1] as usize + s * c[2] as usize)
        } else {
            let h = c[0].wrapping_mul(HASH_PRIMES[0])
                ^ c[1].wrapping_mul(HASH_PRIMES[1])
                ^ c[2].wrapping_mul(HASH_PRIMES[2]);
            h as usize & (self.entries[l] - 1)
        }
    }

    /// Trilinear encoding of `x ∈ [0,1]³`. Records for each level and corner
    /// the absolute parameter index of the first feature and its weight.
    pub fn encode<T: Real>(&self, params: &[T], x: [T; 3], idx: &mut [u32], w: &mut [T], enc: &mut [T]) {
        let f = self.features;
        for l in 0..self.levels() {
            let n = self.resolutions[l];
            let nt = T::from_u32(n).unwrap();
            let mut base = [0u32; 3];
            let mut frac = [T::zero(); 3];
            for a in 0..3 {
                let p = x[a] * nt;
                let i0 = p.floor().to_u32().unwrap_or(0).min(n - 1);
                base[a] = i0;
                frac[a] = p - T::from_u32(i0).unwrap();
            }
            let out = &mut enc[l * f..(l + 1) * f];
            out.fill(T::zero());
            for c in 0..8 {
                let mut weight = T::one();
                let mut v = base;
                for a in 0..3 {
                    if c >> a & 1 == 1 {
                        v[a] += 1;
                        weight *= frac[a];
                    } else {
                        weight *= T::one() - frac[a];
                    }
                }
                let start = self.offsets[l] + self.vertex_row(l, v) * f;
                idx[l * 8 + c] = start as u32;
                w[l * 8 + c] = weight;
                for (o, p) in out.iter_mut().zip(&params[start..start + f]) {
                    *o += weight * *p;
                }
            }
        }
    }

    /// Scatter-adds `d_enc` back to the touched table rows.
    pub fn backward<T: Real>(&self, idx: &[u32], w: &[T], d_enc: &[T], g: &mut [T]) {
        let f = self.features;
        for l in 0..self.levels() {
            let d = &d_enc[l * f..(l + 1) * f];
            for c in 0..8 {
                let weight = w[l * 8 + c];
                if weight == T::zero() {
                    continue;
                }
                let start = idx[l * 8 + c] as usize;
                for (gp, dv) in g[start..start + f].iter_mut().zip(d) {
                    *gp += weight * *dv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_resolutions_span_range() {
        let cfg = HashGridConfig::default();
        let r = cfg.resolutions();
        assert_eq!(r.len(), 16);
        assert_eq!(r[0], 16);
        assert_eq!(r[15], 2048);
        assert!(r.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn resolutions_follow_floor_formula() {
        let cfg = HashGridConfig {
            levels: 5,
            table_size_log2: 10,
            features_per_level: 2,
            base_resolution: 4,
            max_resolution: 100,
        };
        let b = (100f64 / 4.0).powf(0.25);
        let want: Vec<u32> = (0..5).map(|l| (4.0 * b.powi(l) + 1e-9).floor() as u32).collect();
        assert_eq!(cfg.resolutions(), want);
    }

    #[test]
    fn single_level() {
        let cfg = HashGridConfig {
            levels: 1,
            table_size_log2: 4,
            features_per_level: 1,
            base_resolution: 8,
            max_resolution: 8,
        };
        assert_eq!(cfg.resolutions(), vec![8]);
    }

    #[test]
    fn dense_threshold_and_hash_range() {
        let cfg = HashGridConfig {
            levels: 3,
            table_size_log2: 9,
            features_per_level: 2,
            base_resolution: 4,
            max_resolution: 16,
        };
        let mut layout = ParamLayout::default();
        let g = GridLayout::new(&cfg, &mut layout);
        assert_eq!(g.resolutions, vec![4, 8, 16]);
        // 5³=125 and 9³=729 vs 512 entries.
        assert_eq!(g.dense, vec![true, false, false]);
        assert_eq!(g.entries, vec![125, 512, 512]);
        for z in 0..=16 {
            for y in 0..=16 {
                assert!(g.vertex_row(2, [3, y, z]) < 512);
            }
        }
        assert_eq!(g.vertex_row(0, [1, 2, 3]), 1 + 5 * (2 + 5 * 3));
        assert_eq!(g.vertex_row(1, [1, 1, 1]), ((1 ^ 2654435761u32 ^ 805459861u32) & 511) as usize);
    }
}
